//! Two-stage training: paired/unpaired step interleaving, the progressive
//! resolution schedule, Adam optimization, loss logging, and binary
//! checkpoints.

use crate::config::TrainConfig;
use crate::data::{
    load_paired_dataset, load_unpaired_dataset, median_torso_length, sample_temporal_groups,
    sample_unpaired_batch, window_indices, causal_window_indices, DatasetManifest, Frame,
    PairedDataset, SampleConfig, TemporalWindow, UnpairedDataset,
};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss_paired, adversarial_loss_temporal, adversarial_loss_unpaired,
    feature_matching_loss, perceptual_loss, total_generator_loss, GenTerms, LossReport,
};
use crate::nets::{
    bind_generator, build_discriminator, build_generator, Discriminator, DiscriminatorSpec,
    Generator, GeneratorSpec,
};
use crate::nn::{randn, seeded_rng, Graph, ParamSet, T};
use crate::percep::PerceptualNet;
use crate::pose::{default_thickness, PoseMap, SkeletonTopology};
use crate::util::{subseed, SeedDomain};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read as IoRead, Write as IoWrite};
use std::path::{Path, PathBuf};

/// Adam momentum coefficients used for every parameter.
pub const ADAM_BETAS: (f32, f32) = (0.5, 0.999);

const CHECKPOINT_MAGIC: &[u8; 8] = b"P2VCKPT\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learning rate schedule: constant for the first half of the run, then
/// linear decay to zero at the final step.
pub fn lr_at(step: usize, total_steps: usize, lr_initial: f32) -> f32 {
    if total_steps == 0 {
        return lr_initial;
    }
    let half = total_steps / 2;
    if step <= half {
        lr_initial
    } else if step >= total_steps {
        0.0
    } else {
        lr_initial * (total_steps - step) as f32 / (total_steps - half) as f32
    }
}

/// JSON header stored inside every checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub stage: u8,
    /// Paired steps completed when the checkpoint was written.
    pub step: usize,
    pub resolution: (usize, usize),
    pub config: TrainConfig,
    pub gen_spec: GeneratorSpec,
    pub disc_specs: Vec<DiscriminatorSpec>,
    /// Median training-corpus torso length, for wild-pose normalization.
    pub torso_median: f32,
    pub param_names: Vec<String>,
    pub param_shapes: Vec<Vec<usize>>,
}

/// Write parameters plus optimizer state to `path` atomically
/// (temp-then-rename). Layout: magic, u64 header length, JSON header, then
/// per parameter the Adam step counter and the raw f32 value/m/v buffers.
pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, params: &ParamSet) -> Result<()> {
    let mut header = header.clone();
    header.param_names = params.names().map(str::to_owned).collect();
    header.param_shapes = params.iter().map(|(_, p)| p.value.shape().to_vec()).collect();
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, p) in params.iter() {
        buf.extend_from_slice(&p.t.to_le_bytes());
        for arr in [&p.value, &p.m, &p.v] {
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint back into a fresh parameter set.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamSet)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    if header.param_names.len() != header.param_shapes.len() {
        return Err(Error::Checkpoint("name/shape count mismatch".into()));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    let mut offset = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if offset + n > rest.len() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let s = &rest[offset..offset + n];
        offset += n;
        Ok(s)
    };
    let mut params = ParamSet::new();
    for (name, shape) in header.param_names.iter().zip(&header.param_shapes) {
        let count: usize = shape.iter().product();
        let t = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut arrays = Vec::with_capacity(3);
        for _ in 0..3 {
            let bytes = take(count * 4)?;
            let vals: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(
                ArrayD::from_shape_vec(IxDyn(shape), vals)
                    .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?,
            );
        }
        let v = arrays.pop().unwrap();
        let m = arrays.pop().unwrap();
        let value = arrays.pop().unwrap();
        let id = params.add(name, value);
        let p = params.get_mut(id);
        p.m = m;
        p.v = v;
        p.t = t;
    }
    if offset != rest.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok((header, params))
}

fn stage_dir(run_dir: &Path, stage: u8) -> PathBuf {
    run_dir.join(format!("stage{stage}"))
}

fn write_stage_checkpoint(
    run_dir: &Path,
    stage: u8,
    step: usize,
    header: &CheckpointHeader,
    params: &ParamSet,
) -> Result<PathBuf> {
    let dir = stage_dir(run_dir, stage);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = format!("step_{step:06}.ckpt");
    let path = dir.join(&name);
    save_checkpoint(&path, header, params)?;
    let latest = dir.join("latest");
    let tmp = dir.join("latest.tmp");
    std::fs::write(&tmp, &name).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &latest).map_err(|e| Error::io(&latest, e))?;
    Ok(path)
}

/// Resolve the checkpoint a stage directory's `latest` pointer names.
pub fn latest_checkpoint_path(run_dir: &Path, stage: u8) -> Result<PathBuf> {
    let dir = stage_dir(run_dir, stage);
    let pointer = dir.join("latest");
    let name = std::fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
    let path = dir.join(name.trim());
    if !path.exists() {
        return Err(Error::Checkpoint(format!(
            "latest pointer names missing file {}",
            path.display()
        )));
    }
    Ok(path)
}

/// One CSV row of the loss series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub lr: f32,
    pub report: LossReport,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,adv_paired,adv_temporal,adv_unpaired,vgg,fm_paired,\
                                   fm_temporal,total_g,total_d_p,total_d_t,total_d_w";

fn loss_csv_row(row: &LossRow) -> String {
    let r = &row.report;
    format!(
        "{},{:.8},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        row.step,
        row.lr,
        r.adv_paired,
        r.adv_temporal,
        r.adv_unpaired,
        r.vgg,
        r.fm_paired,
        r.fm_temporal,
        r.total_g,
        r.total_d_p,
        r.total_d_t,
        r.total_d_w
    )
}

/// Outcome of a completed stage run.
#[derive(Debug)]
pub struct StageOutcome {
    pub header: CheckpointHeader,
    pub params: ParamSet,
    pub losses: Vec<LossRow>,
    pub checkpoint_path: PathBuf,
}

struct StageNets {
    gen: Generator,
    d_p: Discriminator,
    d_t: Discriminator,
    d_w: Option<Discriminator>,
}

impl StageNets {
    fn disc_specs(&self) -> Vec<DiscriminatorSpec> {
        let mut specs = vec![self.d_p.spec, self.d_t.spec];
        if let Some(d) = &self.d_w {
            specs.push(d.spec);
        }
        specs
    }
}

fn gen_prefix(stage: u8) -> String {
    format!("g{stage}")
}

fn build_stage_nets(
    stage: u8,
    config: &TrainConfig,
    topology: &SkeletonTopology,
    resolution: (usize, usize),
    params: &mut ParamSet,
    master_seed: u64,
) -> Result<StageNets> {
    let n_s = topology.part_count();
    let net = &config.net;
    let gen_spec = match stage {
        1 => GeneratorSpec::stage1(
            n_s,
            config.k,
            net.base_width,
            net.num_downsamples,
            net.num_residual_blocks,
            resolution,
        ),
        2 => GeneratorSpec::stage2(
            config.k,
            net.base_width,
            net.num_downsamples,
            net.num_residual_blocks,
            resolution,
        ),
        other => return Err(Error::Config(format!("stage {other} not in {{1,2}}"))),
    };
    let seed = |part: u64| subseed(master_seed, SeedDomain::ParamInit, &[stage as u64, part]);
    let prefix = gen_prefix(stage);
    let gen = build_generator(&prefix, &gen_spec, params, seed(0))?;
    let d_p_spec = match stage {
        1 => DiscriminatorSpec::paired_stage1(n_s, net.disc_scales, net.base_width),
        _ => DiscriminatorSpec::paired_stage2(config.k, net.disc_scales, net.base_width),
    };
    let d_p = build_discriminator(&format!("d_p{stage}"), &d_p_spec, params, seed(1))?;
    let d_t_spec = DiscriminatorSpec::temporal(config.m, net.temporal_disc_scales, net.base_width);
    let d_t = build_discriminator(&format!("d_t{stage}"), &d_t_spec, params, seed(2))?;
    let d_w = if config.flags.unpaired {
        let spec = DiscriminatorSpec::unpaired(n_s, net.disc_scales, net.base_width);
        Some(build_discriminator(&format!("d_w{stage}"), &spec, params, seed(3))?)
    } else {
        None
    };
    Ok(StageNets { gen, d_p, d_t, d_w })
}

/// Progressive-resolution transition: the fully convolutional trunk and
/// discriminators carry over; the generator's input stem and RGB tail are
/// freshly initialized and their optimizer state reset.
fn grow_generator(
    gen: &mut Generator,
    params: &mut ParamSet,
    resolution: (usize, usize),
    phase: usize,
    master_seed: u64,
) {
    gen.spec.resolution = resolution;
    let mut rng = seeded_rng(subseed(master_seed, SeedDomain::Growth, &[phase as u64]));
    let head = gen.input_layer_params();
    params.reinit(head[0], randn(&mut rng, &gen.head_weight_shape(), 0.02));
    params.reinit(head[1], ArrayD::zeros(IxDyn(&[gen.spec.base_width])));
    let tail = gen.output_layer_params();
    params.reinit(tail[0], randn(&mut rng, &gen.tail_weight_shape(), 0.02));
    params.reinit(tail[1], ArrayD::zeros(IxDyn(&[3])));
}

fn mean_nodes(g: &mut Graph, nodes: &[T]) -> T {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n);
    }
    g.scale(acc, 1.0 / nodes.len() as f32)
}

/// Stack a pose window's slices into one (1, C*(2K+1), H, W) array.
fn window_array(window: &TemporalWindow<PoseMap>) -> ArrayD<f32> {
    let c = window.slices[0].channels();
    let h = window.slices[0].height();
    let w = window.slices[0].width();
    let mut out = ArrayD::zeros(IxDyn(&[1, c * window.slices.len(), h, w]));
    for (i, slice) in window.slices.iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[0, i * c + ch, y, x]] = slice.get(ch, y, x);
                }
            }
        }
    }
    out
}

fn pose_map_array(map: &PoseMap) -> ArrayD<f32> {
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let mut out = ArrayD::zeros(IxDyn(&[1, c, h, w]));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[0, ch, y, x]] = map.get(ch, y, x);
            }
        }
    }
    out
}

/// Frame as (1, 3, H, W) in [0, 1].
fn frame_array01(frame: &Frame) -> ArrayD<f32> {
    let (h, w) = (frame.height(), frame.width());
    let mut out = ArrayD::zeros(IxDyn(&[1, 3, h, w]));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[[0, c, y, x]] = frame.get(c, y, x);
            }
        }
    }
    out
}

/// Frame as (1, 3, H, W) in [-1, 1] (generator output space).
fn frame_array_pm1(frame: &Frame) -> ArrayD<f32> {
    frame_array01(frame).mapv(|v| v * 2.0 - 1.0)
}

/// Cached stage-1 outputs: (clip, frame) -> (1, 3, H, W) in [-1, 1].
type G1Cache = HashMap<(usize, usize), ArrayD<f32>>;

/// Stage-2 input stack: 2K+1 cached stage-1 outputs around time t.
fn g1_stack(
    cache: &G1Cache,
    clip: usize,
    len: usize,
    t: usize,
    k: usize,
    future_frames: bool,
) -> Result<ArrayD<f32>> {
    let indices = if future_frames {
        window_indices(len, t, k)?
    } else {
        causal_window_indices(len, t, k)?
    };
    let first = cache
        .get(&(clip, indices[0]))
        .ok_or_else(|| Error::Checkpoint(format!("missing cached output {clip}/{}", indices[0])))?;
    let shape = first.shape();
    let (h, w) = (shape[2], shape[3]);
    let mut out = ArrayD::zeros(IxDyn(&[1, 3 * indices.len(), h, w]));
    for (i, &idx) in indices.iter().enumerate() {
        let frame = cache
            .get(&(clip, idx))
            .ok_or_else(|| Error::Checkpoint(format!("missing cached output {clip}/{idx}")))?;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[[0, i * 3 + c, y, x]] = frame[[0, c, y, x]];
                }
            }
        }
    }
    Ok(out)
}

/// What the generator consumes on the paired branch.
enum StageInputs<'a> {
    /// Stage 1: stacked pose maps.
    PoseWindows,
    /// Stage 2: stacked cached stage-1 outputs for paired clips.
    Stage1Outputs(&'a G1Cache),
}

struct PairedStepContext<'a> {
    config: &'a TrainConfig,
    nets: &'a StageNets,
    percep: &'a PerceptualNet,
    paired: &'a PairedDataset,
    topology: &'a SkeletonTopology,
    sample_cfg: &'a SampleConfig,
    inputs: StageInputs<'a>,
}

/// One paired training step: sample temporal groups, run the generator,
/// score with the paired and temporal discriminators, and apply one Adam
/// update to the discriminators and one to the generator.
fn paired_step(
    ctx: &PairedStepContext<'_>,
    params: &mut ParamSet,
    step_seed: u64,
    lr: f32,
) -> Result<LossReport> {
    let config = ctx.config;
    let flavor = config.weights.gan_flavor;
    let groups = sample_temporal_groups(
        ctx.paired,
        ctx.topology,
        ctx.sample_cfg,
        config.m,
        config.batch_size,
        step_seed,
    )?;
    let mut g = Graph::new();
    let mut d_losses = Vec::new();
    let mut g_adv_paired = Vec::new();
    let mut d_t_losses = Vec::new();
    let mut g_adv_temporal = Vec::new();
    let mut vgg_terms = Vec::new();
    let mut fm_paired_terms = Vec::new();
    let mut fm_temporal_terms = Vec::new();
    for group in &groups {
        let mut member_fakes = Vec::new();
        let mut member_targets = Vec::new();
        for sample in group {
            let input_array = match &ctx.inputs {
                StageInputs::PoseWindows => window_array(&sample.window),
                StageInputs::Stage1Outputs(cache) => g1_stack(
                    cache,
                    sample.clip,
                    ctx.paired.train[sample.clip].len(),
                    sample.t,
                    config.k,
                    config.flags.future_frames,
                )?,
            };
            let input = g.constant(input_array);
            let fake = ctx.nets.gen.forward(&mut g, params, input, true)?;
            let cond = match &ctx.inputs {
                // Stage 1 conditions on the center pose map; stage 2 on the
                // same stage-1 output stack the generator consumed.
                StageInputs::PoseWindows => g.constant(pose_map_array(&sample.center_map)),
                StageInputs::Stage1Outputs(_) => input,
            };
            let target01 = g.constant(frame_array01(&sample.target));
            let target = g.constant(frame_array_pm1(&sample.target));
            let adv = adversarial_loss_paired(&mut g, params, &ctx.nets.d_p, cond, target, fake, flavor)?;
            d_losses.push(adv.d_loss);
            g_adv_paired.push(adv.g_loss);
            fm_paired_terms.push(feature_matching_loss(&mut g, &adv.real_out, &adv.fake_out));
            let half = g.scale(fake, 0.5);
            let fake01 = g.add_scalar(half, 0.5);
            vgg_terms.push(perceptual_loss(&mut g, ctx.percep, fake01, target01));
            member_fakes.push(fake);
            member_targets.push(target);
        }
        let real_stack = g.concat_channels(&member_targets);
        let fake_stack = g.concat_channels(&member_fakes);
        let adv_t = adversarial_loss_temporal(
            &mut g,
            params,
            &ctx.nets.d_t,
            real_stack,
            fake_stack,
            flavor,
        )?;
        d_t_losses.push(adv_t.d_loss);
        g_adv_temporal.push(adv_t.g_loss);
        fm_temporal_terms.push(feature_matching_loss(&mut g, &adv_t.real_out, &adv_t.fake_out));
    }
    let d_p_loss = mean_nodes(&mut g, &d_losses);
    let d_t_loss = mean_nodes(&mut g, &d_t_losses);
    let d_total = g.add(d_p_loss, d_t_loss);
    let terms = GenTerms {
        adv_paired: Some(mean_nodes(&mut g, &g_adv_paired)),
        adv_temporal: Some(mean_nodes(&mut g, &g_adv_temporal)),
        adv_unpaired: None,
        vgg: Some(mean_nodes(&mut g, &vgg_terms)),
        fm_paired: Some(mean_nodes(&mut g, &fm_paired_terms)),
        fm_temporal: Some(mean_nodes(&mut g, &fm_temporal_terms)),
    };
    let (g_total, mut report) = total_generator_loss(&mut g, &terms, &config.weights)?;
    report.total_d_p = g.scalar(d_p_loss);
    report.total_d_t = g.scalar(d_t_loss);
    if !report.total_d_p.is_finite() || !report.total_d_t.is_finite() {
        return Err(Error::Numeric("discriminator loss is not finite".into()));
    }
    let d_grads = g.backward(d_total);
    let g_grads = g.backward(g_total);
    params.adam_step(&d_grads, lr, ADAM_BETAS);
    params.adam_step(&g_grads, lr, ADAM_BETAS);
    Ok(report)
}

struct UnpairedStepContext<'a> {
    config: &'a TrainConfig,
    gen: &'a Generator,
    d_w: &'a Discriminator,
    paired: &'a PairedDataset,
    unpaired: &'a UnpairedDataset,
    topology: &'a SkeletonTopology,
    sample_cfg: &'a SampleConfig,
    /// Stage 2 only: cached stage-1 outputs for unpaired clips.
    unpaired_cache: Option<&'a G1Cache>,
}

/// One unpaired step: generate from a wild pose window and update the
/// unpaired discriminator and the generator with the adversarial term
/// only — no reconstruction, perceptual, or feature-matching loss exists
/// without ground truth.
fn unpaired_step(
    ctx: &UnpairedStepContext<'_>,
    params: &mut ParamSet,
    step_seed: u64,
    lr: f32,
) -> Result<(f32, f32)> {
    let config = ctx.config;
    let flavor = config.weights.gan_flavor;
    let samples = sample_unpaired_batch(
        ctx.paired,
        ctx.unpaired,
        ctx.topology,
        ctx.sample_cfg,
        config.batch_size,
        step_seed,
    )?;
    let mut g = Graph::new();
    let mut d_losses = Vec::new();
    let mut g_losses = Vec::new();
    for sample in &samples {
        let input_array = match ctx.unpaired_cache {
            None => window_array(&sample.window),
            Some(cache) => g1_stack(
                cache,
                sample.clip,
                ctx.unpaired.clips[sample.clip].len(),
                sample.t,
                config.k,
                config.flags.future_frames,
            )?,
        };
        let input = g.constant(input_array);
        let fake = ctx.gen.forward(&mut g, params, input, true)?;
        let wild_pose = g.constant(pose_map_array(&sample.center_map));
        let reference_pose = g.constant(pose_map_array(&sample.reference_map));
        let reference_frame = g.constant(frame_array_pm1(&sample.reference_frame));
        let adv = adversarial_loss_unpaired(
            &mut g,
            params,
            ctx.d_w,
            wild_pose,
            fake,
            reference_pose,
            reference_frame,
            flavor,
        )?;
        d_losses.push(adv.d_loss);
        g_losses.push(adv.g_loss);
    }
    let d_loss = mean_nodes(&mut g, &d_losses);
    let g_loss = mean_nodes(&mut g, &g_losses);
    let (d_value, g_value) = (g.scalar(d_loss), g.scalar(g_loss));
    if !d_value.is_finite() || !g_value.is_finite() {
        return Err(Error::Numeric("unpaired loss is not finite".into()));
    }
    let d_grads = g.backward(d_loss);
    let g_grads = g.backward(g_loss);
    params.adam_step(&d_grads, lr, ADAM_BETAS);
    params.adam_step(&g_grads, lr, ADAM_BETAS);
    Ok((d_value, g_value))
}

struct LossLog {
    file: std::fs::File,
    path: PathBuf,
    rows: Vec<LossRow>,
}

impl LossLog {
    fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(LossLog {
            file,
            path: path.to_owned(),
            rows: Vec::new(),
        })
    }

    fn push(&mut self, row: LossRow, write: bool) -> Result<()> {
        if write {
            writeln!(self.file, "{}", loss_csv_row(&row))
                .map_err(|e| Error::io(&self.path, e))?;
            let _ = self.file.flush();
        }
        self.rows.push(row);
        Ok(())
    }
}

fn check_unpaired_available(config: &TrainConfig, manifest: &DatasetManifest) -> Result<()> {
    if config.flags.unpaired && manifest.unpaired_clips.is_empty() {
        return Err(Error::Config(
            "unpaired training enabled but the manifest lists no unpaired clips".into(),
        ));
    }
    Ok(())
}

/// Train the stage-1 generator and its three discriminators over the
/// configured progressive-resolution schedule. Returns the final
/// checkpoint; periodic checkpoints and the loss CSV land in `run_dir`.
pub fn train_stage1(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
    master_seed: u64,
) -> Result<StageOutcome> {
    config.validate()?;
    check_unpaired_available(config, manifest)?;
    let topology = SkeletonTopology::builtin_15();
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let percep = PerceptualNet::fixed();

    let mut params = ParamSet::new();
    let mut nets = build_stage_nets(1, config, &topology, config.resolutions[0], &mut params, master_seed)?;
    let total_steps = config.total_stage1_steps();
    let mut log = LossLog::create(&run_dir.join("stage1_losses.csv"))?;
    let mut global_step = 0usize;
    let mut header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        stage: 1,
        step: 0,
        resolution: config.resolutions[0],
        config: config.clone(),
        gen_spec: nets.gen.spec,
        disc_specs: nets.disc_specs(),
        torso_median: 0.0,
        param_names: Vec::new(),
        param_shapes: Vec::new(),
    };
    let mut torso_median = 0.0f32;
    write_stage_checkpoint(run_dir, 1, 0, &header, &params)?;

    for (phase, (&resolution, &steps)) in config
        .resolutions
        .iter()
        .zip(&config.steps_per_resolution)
        .enumerate()
    {
        let paired = load_paired_dataset(manifest, &topology, Some(resolution))?;
        let unpaired = if config.flags.unpaired {
            Some(load_unpaired_dataset(manifest, &topology, Some(resolution))?)
        } else {
            None
        };
        if phase > 0 {
            grow_generator(&mut nets.gen, &mut params, resolution, phase, master_seed);
            header.gen_spec = nets.gen.spec;
        }
        header.resolution = resolution;
        let sample_cfg = SampleConfig {
            k: config.k,
            future_frames: config.flags.future_frames,
            thickness: default_thickness(resolution.0),
            augment: config.augment.at_height(resolution.0, config.flags.data_aug),
        };
        torso_median = median_torso_length(&paired.train, &topology).unwrap_or(0.0);
        let ctx = PairedStepContext {
            config,
            nets: &nets,
            percep: &percep,
            paired: &paired,
            topology: &topology,
            sample_cfg: &sample_cfg,
            inputs: StageInputs::PoseWindows,
        };
        for _ in 0..steps {
            let lr = lr_at(global_step, total_steps, config.lr_initial);
            let step_seed = subseed(master_seed, SeedDomain::Step, &[1, global_step as u64]);
            let mut report = paired_step(&ctx, &mut params, step_seed, lr)?;
            if let (Some(unpaired_ds), Some(d_w)) = (&unpaired, &nets.d_w) {
                if (global_step + 1) % config.unpaired_ratio == 0 {
                    let uctx = UnpairedStepContext {
                        config,
                        gen: &nets.gen,
                        d_w,
                        paired: &paired,
                        unpaired: unpaired_ds,
                        topology: &topology,
                        sample_cfg: &sample_cfg,
                        unpaired_cache: None,
                    };
                    let useed = subseed(master_seed, SeedDomain::Step, &[2, global_step as u64]);
                    let (d_w_loss, g_u_loss) = unpaired_step(&uctx, &mut params, useed, lr)?;
                    report.adv_unpaired = g_u_loss;
                    report.total_d_w = d_w_loss;
                }
            }
            global_step += 1;
            let write = global_step % config.log_every == 0 || global_step == total_steps;
            log.push(LossRow { step: global_step, lr, report }, write)?;
            if global_step % config.checkpoint_every == 0 && global_step < total_steps {
                header.step = global_step;
                header.torso_median = torso_median;
                write_stage_checkpoint(run_dir, 1, global_step, &header, &params)?;
            }
        }
    }
    header.step = global_step;
    header.torso_median = torso_median;
    let checkpoint_path = write_stage_checkpoint(run_dir, 1, global_step, &header, &params)?;
    Ok(StageOutcome {
        header,
        params,
        losses: log.rows,
        checkpoint_path,
    })
}

/// Run the frozen stage-1 generator over every frame of the given clips
/// and cache its outputs; stage 2 consumes these as inputs; the stage-1
/// parameters are never entered into any stage-2 graph.
fn build_g1_cache(
    g1: &Generator,
    g1_params: &ParamSet,
    clips: &[(usize, &[crate::pose::PoseSkeleton])],
    topology: &SkeletonTopology,
    sample_cfg: &SampleConfig,
    resolution: (usize, usize),
) -> Result<G1Cache> {
    let mut cache = G1Cache::new();
    for &(clip_idx, skeletons) in clips {
        for t in 0..skeletons.len() {
            let indices = if sample_cfg.future_frames {
                window_indices(skeletons.len(), t, sample_cfg.k)?
            } else {
                causal_window_indices(skeletons.len(), t, sample_cfg.k)?
            };
            let mut slices = Vec::with_capacity(indices.len());
            for &i in &indices {
                slices.push(crate::pose::rasterize_pose_map(
                    &skeletons[i],
                    topology,
                    resolution,
                    sample_cfg.thickness,
                )?);
            }
            let window = TemporalWindow { slices, center_index: t };
            let mut g = Graph::new();
            let input = g.constant(window_array(&window));
            let out = g1.forward(&mut g, g1_params, input, false)?;
            cache.insert((clip_idx, t), g.value(out).clone());
        }
    }
    Ok(cache)
}

/// Train the stage-2 refinement generator against frozen stage-1 outputs.
/// Pose augmentation is off in this stage — inputs are deterministic
/// stage-1 renders, which makes them cacheable.
pub fn train_stage2(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
    stage1_checkpoint: &Path,
    master_seed: u64,
) -> Result<StageOutcome> {
    config.validate()?;
    if !config.flags.stage2 {
        return Err(Error::Config(
            "stage-2 training requested but the stage2 flag is off".into(),
        ));
    }
    check_unpaired_available(config, manifest)?;
    let topology = SkeletonTopology::builtin_15();
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let percep = PerceptualNet::fixed();

    let (g1_header, g1_params) = load_checkpoint(stage1_checkpoint)?;
    if g1_header.stage != 1 {
        return Err(Error::Checkpoint(format!(
            "{} is a stage-{} checkpoint, expected stage 1",
            stage1_checkpoint.display(),
            g1_header.stage
        )));
    }
    if g1_header.config.k != config.k {
        return Err(Error::Checkpoint(format!(
            "stage-1 checkpoint was trained with K={}, config says K={}",
            g1_header.config.k, config.k
        )));
    }
    let g1 = bind_generator(&gen_prefix(1), &g1_header.gen_spec, &g1_params)?;
    let g1_frozen_before: Vec<ArrayD<f32>> =
        g1_params.iter().map(|(_, p)| p.value.clone()).collect();

    let resolution = *config.resolutions.last().expect("validated non-empty");
    let paired = load_paired_dataset(manifest, &topology, Some(resolution))?;
    let unpaired = if config.flags.unpaired {
        Some(load_unpaired_dataset(manifest, &topology, Some(resolution))?)
    } else {
        None
    };
    let sample_cfg = SampleConfig {
        k: config.k,
        future_frames: config.flags.future_frames,
        thickness: default_thickness(resolution.0),
        augment: crate::augment::AugmentConfig::disabled(),
    };

    let paired_refs: Vec<(usize, &[crate::pose::PoseSkeleton])> = paired
        .train
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.skeletons.as_slice()))
        .collect();
    let paired_cache = build_g1_cache(&g1, &g1_params, &paired_refs, &topology, &sample_cfg, resolution)?;
    let unpaired_cache = match &unpaired {
        Some(ds) => {
            let refs: Vec<(usize, &[crate::pose::PoseSkeleton])> = ds
                .clips
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.as_slice()))
                .collect();
            Some(build_g1_cache(&g1, &g1_params, &refs, &topology, &sample_cfg, resolution)?)
        }
        None => None,
    };

    let mut params = ParamSet::new();
    let nets = build_stage_nets(2, config, &topology, resolution, &mut params, master_seed)?;
    let total_steps = config.stage2_steps;
    let mut log = LossLog::create(&run_dir.join("stage2_losses.csv"))?;
    let mut header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        stage: 2,
        step: 0,
        resolution,
        config: config.clone(),
        gen_spec: nets.gen.spec,
        disc_specs: nets.disc_specs(),
        torso_median: g1_header.torso_median,
        param_names: Vec::new(),
        param_shapes: Vec::new(),
    };
    write_stage_checkpoint(run_dir, 2, 0, &header, &params)?;

    let ctx = PairedStepContext {
        config,
        nets: &nets,
        percep: &percep,
        paired: &paired,
        topology: &topology,
        sample_cfg: &sample_cfg,
        inputs: StageInputs::Stage1Outputs(&paired_cache),
    };
    for step in 0..total_steps {
        let lr = lr_at(step, total_steps, config.lr_initial);
        let step_seed = subseed(master_seed, SeedDomain::Step, &[3, step as u64]);
        let mut report = paired_step(&ctx, &mut params, step_seed, lr)?;
        if let (Some(unpaired_ds), Some(d_w)) = (&unpaired, &nets.d_w) {
            if (step + 1) % config.unpaired_ratio == 0 {
                let uctx = UnpairedStepContext {
                    config,
                    gen: &nets.gen,
                    d_w,
                    paired: &paired,
                    unpaired: unpaired_ds,
                    topology: &topology,
                    sample_cfg: &sample_cfg,
                    unpaired_cache: unpaired_cache.as_ref(),
                };
                let useed = subseed(master_seed, SeedDomain::Step, &[4, step as u64]);
                let (d_w_loss, g_u_loss) = unpaired_step(&uctx, &mut params, useed, lr)?;
                report.adv_unpaired = g_u_loss;
                report.total_d_w = d_w_loss;
            }
        }
        let done = step + 1;
        let write = done % config.log_every == 0 || done == total_steps;
        log.push(LossRow { step: done, lr, report }, write)?;
        if done % config.checkpoint_every == 0 && done < total_steps {
            header.step = done;
            write_stage_checkpoint(run_dir, 2, done, &header, &params)?;
        }
    }

    // Freeze contract: stage-2 training must leave stage-1 parameters
    // bit-identical.
    for ((_, p), before) in g1_params.iter().zip(&g1_frozen_before) {
        if p.value != *before {
            return Err(Error::Numeric(format!(
                "stage-1 parameter {} changed during stage-2 training",
                p.name
            )));
        }
    }

    header.step = total_steps;
    let checkpoint_path = write_stage_checkpoint(run_dir, 2, total_steps, &header, &params)?;
    Ok(StageOutcome {
        header,
        params,
        losses: log.rows,
        checkpoint_path,
    })
}
