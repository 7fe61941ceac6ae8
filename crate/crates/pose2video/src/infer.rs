//! Video generation from arbitrary keypoint sequences and background
//! compositing: load trained checkpoints, normalize wild poses to the
//! training subject's scale, render frame by frame, and blend the
//! chroma-keyed foreground over a new background.

use crate::data::{
    causal_window_indices, chroma_key_mask, median_torso_length_of, window_indices, Frame,
};
use crate::error::{Error, Result};
use crate::nets::{bind_generator, Generator};
use crate::nn::{Graph, ParamSet};
use crate::pose::{
    default_thickness, parse_keypoints, rasterize_pose_map, KeypointSequence, PoseMap,
    PoseSkeleton, SkeletonTopology,
};
use crate::trainer::{load_checkpoint, CheckpointHeader};
use ndarray::{concatenate, Array2, Array3, ArrayD, Axis, Ix3};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Default chroma-key distance threshold for compositing.
pub const DEFAULT_CHROMA_THRESHOLD: f32 = 0.2;

struct StageModel {
    gen: Generator,
    params: ParamSet,
    header: CheckpointHeader,
}

fn load_stage(path: &Path, expect_stage: u8) -> Result<StageModel> {
    let (header, params) = load_checkpoint(path)?;
    if header.stage != expect_stage {
        return Err(Error::Checkpoint(format!(
            "{} is a stage-{} checkpoint, expected stage {expect_stage}",
            path.display(),
            header.stage
        )));
    }
    let gen = bind_generator(&format!("g{expect_stage}"), &header.gen_spec, &params)?;
    Ok(StageModel { gen, params, header })
}

/// A loaded generator pair ready to render keypoint sequences.
pub struct InferencePipeline {
    topology: SkeletonTopology,
    stage1: StageModel,
    stage2: Option<StageModel>,
}

impl InferencePipeline {
    /// Load the stage-1 checkpoint and, optionally, a stage-2 refinement
    /// checkpoint. The two must agree on K and resolution.
    pub fn load(stage1_ckpt: &Path, stage2_ckpt: Option<&Path>) -> Result<Self> {
        let stage1 = load_stage(stage1_ckpt, 1)?;
        let stage2 = match stage2_ckpt {
            Some(p) => {
                let s2 = load_stage(p, 2)?;
                if s2.header.config.k != stage1.header.config.k {
                    return Err(Error::Checkpoint(format!(
                        "stage-1 K={} but stage-2 K={}",
                        stage1.header.config.k, s2.header.config.k
                    )));
                }
                if s2.header.resolution != stage1.header.resolution {
                    return Err(Error::Checkpoint(format!(
                        "stage-1 resolution {:?} but stage-2 {:?}",
                        stage1.header.resolution, s2.header.resolution
                    )));
                }
                Some(s2)
            }
            None => None,
        };
        Ok(InferencePipeline {
            topology: SkeletonTopology::builtin_15(),
            stage1,
            stage2,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.stage1.header.resolution
    }

    pub fn k(&self) -> usize {
        self.stage1.header.config.k
    }

    /// Whether a stage-2 refinement checkpoint is loaded.
    pub fn has_refinement(&self) -> bool {
        self.stage2.is_some()
    }

    fn future_frames(&self) -> bool {
        self.stage1.header.config.flags.future_frames
    }

    /// Map a wild keypoint sequence into the generator's canvas: rescale
    /// from the source resolution, then scale every skeleton about its hip
    /// midpoint so the sequence's median torso length matches the training
    /// corpus median recorded in the checkpoint. Skipped when either median
    /// is unavailable. Coordinates may leave the canvas; the rasterizer
    /// clips them.
    pub fn normalize_skeletons(&self, seq: &KeypointSequence) -> Vec<PoseSkeleton> {
        let (h, w) = self.resolution();
        let (src_w, src_h) = seq.source_resolution;
        let mut skeletons = seq.skeletons.clone();
        if (src_h as usize, src_w as usize) != (h, w) && src_w > 0 && src_h > 0 {
            let sx = w as f32 / src_w as f32;
            let sy = h as f32 / src_h as f32;
            for sk in &mut skeletons {
                for kp in &mut sk.keypoints {
                    if kp.detected() {
                        kp.x = (kp.x * sx).clamp(0.0, w as f32 * (1.0 - 1e-6));
                        kp.y = (kp.y * sy).clamp(0.0, h as f32 * (1.0 - 1e-6));
                    }
                }
            }
        }
        let target = self.stage1.header.torso_median;
        let observed = median_torso_length_of(&skeletons, &self.topology);
        if let Some(observed) = observed {
            if target > 0.0 && observed > 0.0 {
                let scale = target / observed;
                let root = self.topology.root_joint();
                for sk in &mut skeletons {
                    scale_about_anchor(sk, scale, root);
                }
            }
        }
        skeletons
    }

    /// Render one frame per input skeleton. Frame t sees poses
    /// t-K..t+K only (t-2K..t+2K through stage 2), with windows
    /// edge-replicated at the sequence boundaries; a causal checkpoint
    /// uses past-only windows. Deterministic; frames render in parallel.
    pub fn render_sequence(&self, skeletons: &[PoseSkeleton]) -> Result<Vec<Frame>> {
        if skeletons.is_empty() {
            return Err(Error::Dataset("empty keypoint sequence".into()));
        }
        let n_joints = self.topology.joint_count();
        if let Some(sk) = skeletons.iter().find(|s| s.keypoints.len() != n_joints) {
            return Err(Error::Dataset(format!(
                "skeleton has {} joints but the model topology has {n_joints}",
                sk.keypoints.len()
            )));
        }
        let (h, w) = self.resolution();
        let thickness = default_thickness(h);
        let k = self.k();
        let future = self.future_frames();
        let len = skeletons.len();
        let maps: Vec<PoseMap> = skeletons
            .iter()
            .map(|sk| rasterize_pose_map(sk, &self.topology, (h, w), thickness))
            .collect::<Result<_>>()?;
        let window = |t: usize| -> Result<Vec<usize>> {
            if future {
                window_indices(len, t, k)
            } else {
                causal_window_indices(len, t, k)
            }
        };
        let g1_outputs: Vec<ArrayD<f32>> = (0..len)
            .into_par_iter()
            .map(|t| {
                let indices = window(t)?;
                let slices: Vec<&PoseMap> = indices.iter().map(|&i| &maps[i]).collect();
                let input = stack_pose_maps(&slices);
                forward_generator(&self.stage1.gen, &self.stage1.params, input)
            })
            .collect::<Result<_>>()?;
        let finals: Vec<ArrayD<f32>> = match &self.stage2 {
            None => g1_outputs,
            Some(s2) => (0..len)
                .into_par_iter()
                .map(|t| {
                    let indices = window(t)?;
                    let slices: Vec<&ArrayD<f32>> =
                        indices.iter().map(|&i| &g1_outputs[i]).collect();
                    let input = stack_outputs(&slices);
                    forward_generator(&s2.gen, &s2.params, input)
                })
                .collect::<Result<_>>()?,
        };
        finals.into_iter().map(output_to_frame).collect()
    }

    /// Parse, normalize, and render a keypoint file.
    pub fn render_file(&self, keypoints_file: &Path) -> Result<Vec<Frame>> {
        let text =
            std::fs::read_to_string(keypoints_file).map_err(|e| Error::io(keypoints_file, e))?;
        let seq = parse_keypoints(&text, &self.topology)?;
        let skeletons = self.normalize_skeletons(&seq);
        self.render_sequence(&skeletons)
    }
}

/// Scale a skeleton's detected keypoints about the root joint (or the
/// centroid of detected joints when the root is undetected).
fn scale_about_anchor(sk: &mut PoseSkeleton, scale: f32, root: usize) {
    let anchor = if sk.keypoints.get(root).is_some_and(|kp| kp.detected()) {
        let kp = sk.keypoints[root];
        Some((kp.x, kp.y))
    } else {
        let detected: Vec<&crate::pose::Keypoint> =
            sk.keypoints.iter().filter(|kp| kp.detected()).collect();
        if detected.is_empty() {
            None
        } else {
            let n = detected.len() as f32;
            Some((
                detected.iter().map(|kp| kp.x).sum::<f32>() / n,
                detected.iter().map(|kp| kp.y).sum::<f32>() / n,
            ))
        }
    };
    let Some((ax, ay)) = anchor else { return };
    for kp in &mut sk.keypoints {
        if kp.detected() {
            kp.x = ax + (kp.x - ax) * scale;
            kp.y = ay + (kp.y - ay) * scale;
        }
    }
}

fn stack_pose_maps(maps: &[&PoseMap]) -> ArrayD<f32> {
    let views: Vec<_> = maps.iter().map(|m| m.data().view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("pose maps share a shape");
    stacked.insert_axis(Axis(0)).into_dyn()
}

/// Stack (1, 3, h, w) generator outputs into (1, 3n, h, w).
fn stack_outputs(outs: &[&ArrayD<f32>]) -> ArrayD<f32> {
    let views: Vec<_> = outs.iter().map(|o| o.index_axis(Axis(0), 0)).collect();
    let stacked = concatenate(Axis(0), &views).expect("outputs share a shape");
    stacked.insert_axis(Axis(0))
}

fn forward_generator(gen: &Generator, params: &ParamSet, input: ArrayD<f32>) -> Result<ArrayD<f32>> {
    let mut g = Graph::new();
    let x = g.constant(input);
    let out = gen.forward(&mut g, params, x, false)?;
    Ok(g.value(out).clone())
}

/// Convert a (1, 3, h, w) output in [-1, 1] to a frame in [0, 1].
fn output_to_frame(out: ArrayD<f32>) -> Result<Frame> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("generator produced non-finite values".into()));
    }
    let rgb: Array3<f32> = out
        .index_axis(Axis(0), 0)
        .to_owned()
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::Shape(format!("generator output: {e}")))?;
    Ok(Frame::from_array(rgb.mapv(|v| v * 0.5 + 0.5)))
}

/// Render a keypoint file through the loaded checkpoints and write one
/// zero-padded numbered PNG per input frame into `out_dir`. Returns the
/// written paths in frame order.
pub fn generate_video(
    keypoints_file: &Path,
    stage1_ckpt: &Path,
    stage2_ckpt: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let pipeline = InferencePipeline::load(stage1_ckpt, stage2_ckpt)?;
    let frames = pipeline.render_file(keypoints_file)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let path = out_dir.join(format!("{t:06}.png"));
        frame.save_png(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Soften a binary foreground mask with a one-pixel linear feather:
/// foreground pixels bordering background (4-neighborhood) drop to alpha
/// 0.5. Canvas borders do not count as background, so subjects touching
/// the frame edge keep full alpha there.
pub fn feather_mask(mask: &Array2<f32>) -> Array2<f32> {
    let (h, w) = mask.dim();
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] <= 0.0 {
                continue;
            }
            let mut edge = false;
            if y > 0 && mask[[y - 1, x]] <= 0.0 {
                edge = true;
            }
            if y + 1 < h && mask[[y + 1, x]] <= 0.0 {
                edge = true;
            }
            if x > 0 && mask[[y, x - 1]] <= 0.0 {
                edge = true;
            }
            if x + 1 < w && mask[[y, x + 1]] <= 0.0 {
                edge = true;
            }
            if edge {
                out[[y, x]] = 0.5;
            }
        }
    }
    out
}

/// Fit a background image to the generated resolution: pass through when
/// sizes match, otherwise center-crop the largest region with the target
/// aspect ratio and bilinear-resize it down. Backgrounds smaller than the
/// generated frames are an error.
fn fit_background(background: &Frame, resolution: (usize, usize)) -> Result<Frame> {
    let (h, w) = resolution;
    let (bh, bw) = (background.height(), background.width());
    if (bh, bw) == (h, w) {
        return Ok(background.clone());
    }
    if bh < h || bw < w {
        return Err(Error::Shape(format!(
            "background {bh}x{bw} is smaller than the generated frames {h}x{w}"
        )));
    }
    let target_aspect = w as f64 / h as f64;
    let mut crop_w = bw;
    let mut crop_h = (bw as f64 / target_aspect).round() as usize;
    if crop_h > bh {
        crop_h = bh;
        crop_w = ((bh as f64 * target_aspect).round() as usize).min(bw);
    }
    let y0 = (bh - crop_h) / 2;
    let x0 = (bw - crop_w) / 2;
    let cropped: Array3<f32> = background
        .data()
        .slice(ndarray::s![.., y0..y0 + crop_h, x0..x0 + crop_w])
        .to_owned();
    Ok(Frame::from_array(cropped).resize_bilinear(h, w))
}

/// Blend one generated frame over a background: chroma-key the foreground
/// against `key_color`, feather the mask edge by one pixel, and alpha-
/// composite.
pub fn composite_frame(
    generated: &Frame,
    background: &Frame,
    key_color: [f32; 3],
    threshold: f32,
) -> Result<Frame> {
    let (h, w) = (generated.height(), generated.width());
    let bg = fit_background(background, (h, w))?;
    let alpha = feather_mask(&chroma_key_mask(generated, key_color, threshold));
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let a = alpha[[y, x]];
            for c in 0..3 {
                out[[c, y, x]] = a * generated.get(c, y, x) + (1.0 - a) * bg.get(c, y, x);
            }
        }
    }
    Ok(Frame::from_array(out))
}

/// Composite a generated sequence over a background. `background` holds
/// either a single frame reused throughout or one frame per generated
/// frame.
pub fn composite_background(
    generated: &[Frame],
    background: &[Frame],
    key_color: [f32; 3],
    threshold: f32,
) -> Result<Vec<Frame>> {
    if background.is_empty() {
        return Err(Error::Dataset("no background frames given".into()));
    }
    if background.len() != 1 && background.len() != generated.len() {
        return Err(Error::Alignment(format!(
            "{} background frames for {} generated frames (need 1 or equal)",
            background.len(),
            generated.len()
        )));
    }
    generated
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let bg = if background.len() == 1 { &background[0] } else { &background[i] };
            composite_frame(f, bg, key_color, threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::data::{synth_figure_mask, synth_stick_figure_clip, GREEN_FILL};
    use crate::nets::{build_generator, GeneratorSpec};
    use crate::pose::Keypoint;
    use crate::trainer::{save_checkpoint, CHECKPOINT_VERSION};

    fn tiny_config(k: usize, resolution: (usize, usize)) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.k = k;
        c.m = 2;
        c.resolutions = vec![resolution];
        c.steps_per_resolution = vec![1];
        c.net.base_width = 4;
        c.net.num_downsamples = 2;
        c.net.num_residual_blocks = 1;
        c.net.disc_scales = 1;
        c
    }

    /// Write an untrained checkpoint: random weights are enough for
    /// shape, determinism, and locality contracts.
    fn tiny_checkpoint(
        dir: &Path,
        stage: u8,
        k: usize,
        resolution: (usize, usize),
        torso_median: f32,
    ) -> PathBuf {
        let config = tiny_config(k, resolution);
        let topology = SkeletonTopology::builtin_15();
        let spec = match stage {
            1 => GeneratorSpec::stage1(topology.part_count(), k, 4, 2, 1, resolution),
            _ => GeneratorSpec::stage2(k, 4, 2, 1, resolution),
        };
        let mut params = ParamSet::new();
        build_generator(&format!("g{stage}"), &spec, &mut params, 40 + stage as u64).unwrap();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            stage,
            step: 1,
            resolution,
            config,
            gen_spec: spec,
            disc_specs: Vec::new(),
            torso_median,
            param_names: Vec::new(),
            param_shapes: Vec::new(),
        };
        let path = dir.join(format!("stage{stage}.ckpt"));
        save_checkpoint(&path, &header, &params).unwrap();
        path
    }

    fn synth_sequence(seed: u64, frames: usize, resolution: (usize, usize)) -> Vec<PoseSkeleton> {
        synth_stick_figure_clip(seed, frames, resolution).1
    }

    #[test]
    fn t_frames_in_t_frames_out_both_stages() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 0.0);
        let s2 = tiny_checkpoint(dir.path(), 2, 1, (16, 16), 0.0);
        let skeletons = synth_sequence(5, 7, (16, 16));
        let p1 = InferencePipeline::load(&s1, None).unwrap();
        let frames = p1.render_sequence(&skeletons).unwrap();
        assert_eq!(frames.len(), 7);
        assert_eq!((frames[0].height(), frames[0].width()), (16, 16));
        let p2 = InferencePipeline::load(&s1, Some(&s2)).unwrap();
        let refined = p2.render_sequence(&skeletons).unwrap();
        assert_eq!(refined.len(), 7);
        // Stage 2 actually transforms the stage-1 output.
        assert_ne!(frames[3], refined[3]);
    }

    #[test]
    fn stage2_omitted_gives_raw_stage1_frames() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 0.0);
        let skeletons = synth_sequence(6, 3, (16, 16));
        let pipeline = InferencePipeline::load(&s1, None).unwrap();
        let frames = pipeline.render_sequence(&skeletons).unwrap();

        // Manual stage-1 forward for t = 1 must agree bit for bit.
        let (header, params) = load_checkpoint(&s1).unwrap();
        let gen = bind_generator("g1", &header.gen_spec, &params).unwrap();
        let topology = SkeletonTopology::builtin_15();
        let thickness = default_thickness(16);
        let maps: Vec<PoseMap> = skeletons
            .iter()
            .map(|sk| rasterize_pose_map(sk, &topology, (16, 16), thickness).unwrap())
            .collect();
        let slices: Vec<&PoseMap> = window_indices(3, 1, 1)
            .unwrap()
            .into_iter()
            .map(|i| &maps[i])
            .collect();
        let out = forward_generator(&gen, &params, stack_pose_maps(&slices)).unwrap();
        let expect = output_to_frame(out).unwrap();
        assert_eq!(frames[1], expect);
    }

    #[test]
    fn renders_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 0.0);
        let s2 = tiny_checkpoint(dir.path(), 2, 1, (16, 16), 0.0);
        let skeletons = synth_sequence(9, 5, (16, 16));
        let pipeline = InferencePipeline::load(&s1, Some(&s2)).unwrap();
        let a = pipeline.render_sequence(&skeletons).unwrap();
        let b = pipeline.render_sequence(&skeletons).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_pose_and_single_frame_render_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 4.0);
        let s2 = tiny_checkpoint(dir.path(), 2, 1, (16, 16), 4.0);
        let pipeline = InferencePipeline::load(&s1, Some(&s2)).unwrap();
        let zero = PoseSkeleton::new(vec![Keypoint::new(0.0, 0.0, 0.0); 15], 0);
        for count in [1usize, 4] {
            let skeletons: Vec<PoseSkeleton> = (0..count)
                .map(|i| {
                    let mut sk = zero.clone();
                    sk.frame_index = i;
                    sk
                })
                .collect();
            let frames = pipeline.render_sequence(&skeletons).unwrap();
            assert_eq!(frames.len(), count);
            for f in &frames {
                for v in f.data().iter() {
                    assert!(v.is_finite() && (0.0..=1.0).contains(v));
                }
            }
        }
    }

    #[test]
    fn frame_depends_only_on_nearby_poses() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 0.0);
        let s2 = tiny_checkpoint(dir.path(), 2, 1, (16, 16), 0.0);
        let pipeline = InferencePipeline::load(&s1, Some(&s2)).unwrap();
        let skeletons = synth_sequence(12, 10, (16, 16));
        let base = pipeline.render_sequence(&skeletons).unwrap();
        let mut perturbed = skeletons.clone();
        for kp in &mut perturbed[9].keypoints {
            kp.x = (kp.x + 6.0) % 16.0;
            kp.y = (kp.y + 6.0) % 16.0;
        }
        let moved = pipeline.render_sequence(&perturbed).unwrap();
        // K = 1, two stages: frame t sees poses t-2..t+2, so frames
        // 0..=6 cannot see the change at t = 9.
        for t in 0..=6 {
            assert_eq!(base[t], moved[t], "frame {t} saw a distant pose change");
        }
        assert_ne!(base[9], moved[9], "perturbed pose should change its own frame");
    }

    #[test]
    fn wild_skeletons_are_rescaled_to_the_training_torso() {
        let dir = tempfile::tempdir().unwrap();
        let topology = SkeletonTopology::builtin_15();
        let skeletons = synth_sequence(21, 6, (64, 64));
        let native = median_torso_length_of(&skeletons, &topology).unwrap();
        // Checkpoint claims the training subject's torso was half as long.
        let target = native * 0.5;
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (64, 64), target);
        let pipeline = InferencePipeline::load(&s1, None).unwrap();
        let seq = KeypointSequence {
            fps: 30.0,
            source_resolution: (64, 64),
            skeletons: skeletons.clone(),
        };
        let normalized = pipeline.normalize_skeletons(&seq);
        let got = median_torso_length_of(&normalized, &topology).unwrap();
        assert!((got - target).abs() < 1e-3, "{got} vs {target}");
        // Anchored at the hip: the root joint does not move.
        let root = topology.root_joint();
        for (a, b) in skeletons.iter().zip(&normalized) {
            assert!((a.keypoints[root].x - b.keypoints[root].x).abs() < 1e-4);
            assert!((a.keypoints[root].y - b.keypoints[root].y).abs() < 1e-4);
        }
        // A checkpoint without torso statistics leaves poses untouched.
        let s1_plain = tiny_checkpoint(dir.path(), 1, 1, (64, 64), 0.0);
        let plain = InferencePipeline::load(&s1_plain, None).unwrap();
        let untouched = plain.normalize_skeletons(&seq);
        assert_eq!(untouched, skeletons);
    }

    #[test]
    fn generate_video_writes_numbered_frames() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = tiny_checkpoint(dir.path(), 1, 1, (16, 16), 0.0);
        let skeletons = synth_sequence(3, 4, (16, 16));
        let seq = KeypointSequence {
            fps: 30.0,
            source_resolution: (16, 16),
            skeletons,
        };
        let topology = SkeletonTopology::builtin_15();
        let kp_path = dir.path().join("wild.p2vk");
        std::fs::write(&kp_path, crate::pose::serialize_keypoints(&seq, &topology)).unwrap();
        let out_dir = dir.path().join("out");
        let paths = generate_video(&kp_path, &s1, None, &out_dir).unwrap();
        assert_eq!(paths.len(), 4);
        assert_eq!(paths[0].file_name().unwrap(), "000000.png");
        assert_eq!(paths[3].file_name().unwrap(), "000003.png");
        for p in &paths {
            let f = Frame::load_png(p).unwrap();
            assert_eq!((f.height(), f.width()), (16, 16));
        }
    }

    #[test]
    fn chroma_mask_matches_renderer_coverage() {
        let seed = 99;
        let (frames, skeletons) = synth_stick_figure_clip(seed, 3, (64, 64));
        for (frame, sk) in frames.iter().zip(&skeletons) {
            let chroma = chroma_key_mask(frame, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD);
            let oracle = synth_figure_mask(seed, sk, (64, 64));
            let total = 64 * 64;
            let agree = chroma
                .indexed_iter()
                .filter(|&((y, x), &m)| (m > 0.5) == oracle[[y, x]])
                .count();
            assert!(
                agree as f64 >= 0.99 * total as f64,
                "mask agreement {agree}/{total}"
            );
        }
    }

    #[test]
    fn composite_fixed_points() {
        let (frames, _) = synth_stick_figure_clip(7, 1, (32, 32));
        let generated = &frames[0];
        // New background identical to the key fill: compositing is the
        // identity away from the feathered edge, and every pixel stays
        // either the original or a blend toward the same green.
        let green = Frame::solid(32, 32, GREEN_FILL);
        let out =
            composite_frame(generated, &green, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD).unwrap();
        let alpha = feather_mask(&chroma_key_mask(generated, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD));
        let mut checked_interior = 0;
        for y in 0..32 {
            for x in 0..32 {
                if alpha[[y, x]] != 0.5 {
                    for c in 0..3 {
                        assert!((out.get(c, y, x) - generated.get(c, y, x)).abs() < 1e-6);
                    }
                    checked_interior += 1;
                }
            }
        }
        assert!(checked_interior > 0);

        // Fully green generated frame: everything is background.
        let bg = Frame::solid(32, 32, [0.3, 0.1, 0.8]);
        let out = composite_frame(&green, &bg, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD).unwrap();
        assert_eq!(out, bg);
    }

    #[test]
    fn background_is_cropped_and_scaled_to_fit() {
        let (frames, _) = synth_stick_figure_clip(3, 2, (32, 32));
        // Oversized background shrinks to the generated size.
        let big = Frame::solid(64, 96, [0.2, 0.4, 0.9]);
        let out = composite_background(&frames, &[big], GREEN_FILL, DEFAULT_CHROMA_THRESHOLD)
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].height(), out[0].width()), (32, 32));
        // A solid color survives cropping and scaling exactly.
        let mask = chroma_key_mask(&frames[0], GREEN_FILL, DEFAULT_CHROMA_THRESHOLD);
        let (y, x) = mask
            .indexed_iter()
            .find(|&(_, &m)| m == 0.0)
            .map(|(pos, _)| pos)
            .unwrap();
        assert!((out[0].get(2, y, x) - 0.9).abs() < 1e-6);

        // Undersized background is refused.
        let small = Frame::solid(16, 16, [0.0; 3]);
        let err = composite_frame(&frames[0], &small, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD)
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        // Background count must be 1 or per-frame.
        let two = vec![Frame::solid(32, 32, [0.0; 3]); 3];
        let err = composite_background(&frames, &two, GREEN_FILL, DEFAULT_CHROMA_THRESHOLD)
            .unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn feather_softens_only_boundary_pixels() {
        let mut mask = Array2::zeros((5, 5));
        for y in 1..4 {
            for x in 1..4 {
                mask[[y, x]] = 1.0;
            }
        }
        let soft = feather_mask(&mask);
        assert_eq!(soft[[2, 2]], 1.0, "interior keeps full alpha");
        assert_eq!(soft[[1, 2]], 0.5, "edge ring feathers");
        assert_eq!(soft[[0, 2]], 0.0, "background stays background");
        // Canvas borders are not background: an all-foreground mask is
        // left at full alpha everywhere.
        let full = Array2::from_elem((4, 4), 1.0);
        assert_eq!(feather_mask(&full), full);
    }
}
