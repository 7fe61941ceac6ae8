//! Dataset ingestion and sampling: chroma-key preprocessing, clip
//! preparation (background fill, union-bbox crop, contiguous train/val
//! split), temporal windowing, paired/unpaired batch sampling, and a
//! procedural stick-figure dataset whose renderer doubles as a
//! ground-truth pose-to-appearance oracle.

use crate::augment::{augment_pose, AugmentConfig};
use crate::error::{Error, Result};
use crate::pose::{
    parse_keypoints, pose_bbox, rasterize_pose_map, serialize_keypoints, Keypoint,
    KeypointSequence, PoseMap, PoseSkeleton, Rect, SkeletonTopology,
};
use crate::util::{subseed, SeedDomain};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

/// Background fill color used when replacing chroma-keyed regions.
pub const GREEN_FILL: [f32; 3] = [0.0, 0.6, 0.0];

/// One RGB image, stored (3, h, w) with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: Array3<f32>,
}

impl Frame {
    /// Wrap an array, clamping values into [0, 1].
    pub fn from_array(data: Array3<f32>) -> Self {
        assert_eq!(data.shape()[0], 3, "frames are RGB");
        Frame {
            data: data.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn solid(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Array3::zeros((3, height, width));
        for c in 0..3 {
            data.slice_mut(ndarray::s![c, .., ..]).fill(rgb[c]);
        }
        Frame { data }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[[c, y, x]]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[[c, y, x]] = v.clamp(0.0, 1.0);
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::image(path, e))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f32::from(px.0[c]) / 255.0;
            }
        }
        Ok(Frame { data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = (self.data[[c, y as usize, x as usize]] * 255.0).round() as u8;
            }
        }
        img.save(path).map_err(|e| Error::image(path, e))
    }

    /// Bilinear resample (half-pixel centers, edge clamp).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Frame {
        let (h, w) = (self.height(), self.width());
        if (h, w) == (out_h, out_w) {
            return self.clone();
        }
        let mut out = Array3::zeros((3, out_h, out_w));
        let sy = h as f32 / out_h as f32;
        let sx = w as f32 / out_w as f32;
        for yo in 0..out_h {
            let fy = ((yo as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f32;
            for xo in 0..out_w {
                let fx = ((xo as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f32;
                for c in 0..3 {
                    let a = self.data[[c, y0, x0]] * (1.0 - wx) + self.data[[c, y0, x1]] * wx;
                    let b = self.data[[c, y1, x0]] * (1.0 - wx) + self.data[[c, y1, x1]] * wx;
                    out[[c, yo, xo]] = a * (1.0 - wy) + b * wy;
                }
            }
        }
        Frame { data: out }
    }
}

/// Foreground mask: 1 where the pixel's RGB distance to `key_color` is
/// strictly greater than `threshold`.
pub fn chroma_key_mask(frame: &Frame, key_color: [f32; 3], threshold: f32) -> Array2<f32> {
    let (h, w) = (frame.height(), frame.width());
    let mut mask = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let d2: f32 = (0..3)
                .map(|c| {
                    let d = frame.get(c, y, x) - key_color[c];
                    d * d
                })
                .sum();
            if d2.sqrt() > threshold {
                mask[[y, x]] = 1.0;
            }
        }
    }
    mask
}

/// Replace every background pixel (mask 0) with the fill color.
pub fn fill_background(frame: &Frame, mask: &Array2<f32>, fill: [f32; 3]) -> Frame {
    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if mask[[y, x]] == 0.0 {
                for c in 0..3 {
                    out.data[[c, y, x]] = fill[c];
                }
            }
        }
    }
    out
}

/// Stack of 2K+1 time-ascending slices centered on `center_index`.
#[derive(Debug, Clone)]
pub struct TemporalWindow<S> {
    pub slices: Vec<S>,
    pub center_index: usize,
}

/// Window indices t-K..t+K with out-of-range entries clamped to the edges.
pub fn window_indices(len: usize, t: usize, k: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Dataset("temporal window over empty sequence".into()));
    }
    let t = t as i64;
    let k = k as i64;
    Ok(((t - k)..=(t + k))
        .map(|i| i.clamp(0, len as i64 - 1) as usize)
        .collect())
}

/// Causal variant: no future information. The window still has 2K+1 slices
/// so network shapes are unchanged; the K future slots are filled with
/// extra replicas of the oldest index: [t-K, ..., t-K, t-K+1, ..., t].
pub fn causal_window_indices(len: usize, t: usize, k: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Dataset("temporal window over empty sequence".into()));
    }
    let t = t as i64;
    let k = k as i64;
    let clampi = |i: i64| i.clamp(0, len as i64 - 1) as usize;
    let mut out = Vec::with_capacity(2 * k as usize + 1);
    for _ in 0..k {
        out.push(clampi(t - k));
    }
    for i in (t - k)..=t {
        out.push(clampi(i));
    }
    Ok(out)
}

/// Contiguous split of `total` frames into leading train and trailing val
/// segments with duration ratio `train_parts : val_parts`.
pub fn split_frames(total: usize, train_parts: usize, val_parts: usize) -> (usize, usize) {
    assert!(train_parts > 0 && val_parts > 0);
    if total <= 1 {
        return (total, 0);
    }
    let parts = train_parts + val_parts;
    let train = ((total * train_parts) as f64 / parts as f64).round() as usize;
    let train = train.clamp(1, total - 1);
    (train, total - train)
}

/// A clip after preparation: frames and skeletons in output-canvas
/// coordinates, perfectly aligned by index.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub frames: Vec<Frame>,
    pub skeletons: Vec<PoseSkeleton>,
    pub fps: f32,
}

impl LoadedClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Union of per-frame tight pose boxes, expanded by `margin_fraction` of
/// the union's larger side, clipped to the frame.
pub fn union_pose_bbox(
    skeletons: &[PoseSkeleton],
    margin_fraction: f32,
    frame_size: (u32, u32),
) -> Result<Rect> {
    let mut acc: Option<Rect> = None;
    for sk in skeletons {
        match pose_bbox(sk, 0.0, frame_size) {
            Ok(r) => acc = Some(acc.map_or(r, |a| a.union(&r))),
            Err(Error::NoPose { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let tight = acc.ok_or(Error::NoPose { frame: 0 })?;
    let margin = margin_fraction * tight.width().max(tight.height());
    Ok(Rect {
        x0: (tight.x0 - margin).max(0.0),
        y0: (tight.y0 - margin).max(0.0),
        x1: (tight.x1 + margin).min(frame_size.0 as f32),
        y1: (tight.y1 + margin).min(frame_size.1 as f32),
    })
}

/// Settings for [`prepare_paired_clip`].
#[derive(Debug, Clone, Copy)]
pub struct PrepareConfig {
    pub key_color: [f32; 3],
    pub chroma_threshold: f32,
    pub margin_fraction: f32,
    /// (height, width) of the output canvas.
    pub out_resolution: (usize, usize),
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            key_color: GREEN_FILL,
            chroma_threshold: 0.2,
            margin_fraction: 0.1,
            out_resolution: (64, 64),
        }
    }
}

/// Preprocess one paired clip: chroma-key the subject, fill the background
/// with solid green, crop by the clip-wide union pose box (temporally
/// stable), resize to the output canvas, and map keypoints into canvas
/// coordinates.
pub fn prepare_paired_clip(
    frames: &[Frame],
    keypoints: &KeypointSequence,
    cfg: &PrepareConfig,
) -> Result<LoadedClip> {
    if frames.is_empty() {
        return Err(Error::Dataset("clip has no frames".into()));
    }
    if frames.len() != keypoints.skeletons.len() {
        return Err(Error::Alignment(format!(
            "{} frames but {} keypoint records",
            frames.len(),
            keypoints.skeletons.len()
        )));
    }
    let frame_size = (frames[0].width() as u32, frames[0].height() as u32);
    let bbox = union_pose_bbox(&keypoints.skeletons, cfg.margin_fraction, frame_size)?;
    let (cx0, cy0) = (bbox.x0.floor() as usize, bbox.y0.floor() as usize);
    let cx1 = (bbox.x1.ceil() as usize).clamp(cx0 + 1, frame_size.0 as usize);
    let cy1 = (bbox.y1.ceil() as usize).clamp(cy0 + 1, frame_size.1 as usize);
    let (crop_w, crop_h) = (cx1 - cx0, cy1 - cy0);
    let (out_h, out_w) = cfg.out_resolution;
    let sx = out_w as f32 / crop_w as f32;
    let sy = out_h as f32 / crop_h as f32;

    let mut out_frames = Vec::with_capacity(frames.len());
    let mut out_skeletons = Vec::with_capacity(frames.len());
    for (frame, sk) in frames.iter().zip(&keypoints.skeletons) {
        let mask = chroma_key_mask(frame, cfg.key_color, cfg.chroma_threshold);
        let filled = fill_background(frame, &mask, GREEN_FILL);
        let mut crop = Array3::zeros((3, crop_h, crop_w));
        for c in 0..3 {
            for y in 0..crop_h {
                for x in 0..crop_w {
                    crop[[c, y, x]] = filled.get(c, cy0 + y, cx0 + x);
                }
            }
        }
        // Resampling blends figure edges into the background; re-key the
        // resized frame so everything still classified as background is
        // exactly the fill color.
        let resized = Frame { data: crop }.resize_bilinear(out_h, out_w);
        let mask = chroma_key_mask(&resized, GREEN_FILL, cfg.chroma_threshold);
        out_frames.push(fill_background(&resized, &mask, GREEN_FILL));

        let mut sk = sk.clone();
        for kp in &mut sk.keypoints {
            if kp.detected() {
                kp.x = ((kp.x - cx0 as f32) * sx).clamp(0.0, out_w as f32 * (1.0 - 1e-6));
                kp.y = ((kp.y - cy0 as f32) * sy).clamp(0.0, out_h as f32 * (1.0 - 1e-6));
            }
        }
        out_skeletons.push(sk);
    }
    Ok(LoadedClip {
        frames: out_frames,
        skeletons: out_skeletons,
        fps: keypoints.fps,
    })
}

/// Map an unpaired clip's keypoints into the output canvas the same way
/// paired clips are cropped (union bbox + margin, then scale). No frames
/// are involved.
pub fn prepare_unpaired_keypoints(
    keypoints: &KeypointSequence,
    margin_fraction: f32,
    out_resolution: (usize, usize),
) -> Result<KeypointSequence> {
    let frame_size = keypoints.source_resolution;
    let bbox = union_pose_bbox(&keypoints.skeletons, margin_fraction, frame_size)?;
    let (out_h, out_w) = out_resolution;
    let sx = out_w as f32 / bbox.width().max(1.0);
    let sy = out_h as f32 / bbox.height().max(1.0);
    let mut out = keypoints.clone();
    for sk in &mut out.skeletons {
        for kp in &mut sk.keypoints {
            if kp.detected() {
                kp.x = ((kp.x - bbox.x0) * sx).clamp(0.0, out_w as f32 * (1.0 - 1e-6));
                kp.y = ((kp.y - bbox.y0) * sy).clamp(0.0, out_h as f32 * (1.0 - 1e-6));
            }
        }
    }
    out.source_resolution = (out_w as u32, out_h as u32);
    Ok(out)
}

// ---- manifest ----

/// Train/val assignment of a paired clip segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedClipRef {
    pub frames_dir: PathBuf,
    pub keypoints_file: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnpairedClipRef {
    pub keypoints_file: PathBuf,
}

/// On-disk description of a prepared dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// (height, width) every prepared clip was resized to.
    pub resolution: (usize, usize),
    /// Name of the topology the keypoint files follow.
    pub topology: String,
    pub paired_clips: Vec<PairedClipRef>,
    #[serde(default)]
    pub unpaired_clips: Vec<UnpairedClipRef>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        // Store paths relative to the manifest's directory whenever they
        // live under it: load resolves against that directory, so the
        // saved manifest works from any working directory and survives
        // moving the dataset tree.
        let base = path.parent().unwrap_or(Path::new(""));
        let mut copy = self.clone();
        let relativize = |p: &mut PathBuf| {
            if let Ok(stripped) = p.strip_prefix(base) {
                *p = stripped.to_owned();
            }
        };
        for c in &mut copy.paired_clips {
            relativize(&mut c.frames_dir);
            relativize(&mut c.keypoints_file);
        }
        for c in &mut copy.unpaired_clips {
            relativize(&mut c.keypoints_file);
        }
        let text = serde_json::to_string_pretty(&copy)
            .map_err(|e| Error::Dataset(format!("manifest encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load and validate: version must match and every referenced path must
    /// exist. Relative paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "manifest version {} unsupported (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        for clip in &mut manifest.paired_clips {
            clip.frames_dir = resolve(&clip.frames_dir);
            clip.keypoints_file = resolve(&clip.keypoints_file);
            for p in [&clip.frames_dir, &clip.keypoints_file] {
                if !p.exists() {
                    return Err(Error::Dataset(format!("missing path {}", p.display())));
                }
            }
        }
        for clip in &mut manifest.unpaired_clips {
            clip.keypoints_file = resolve(&clip.keypoints_file);
            if !clip.keypoints_file.exists() {
                return Err(Error::Dataset(format!(
                    "missing path {}",
                    clip.keypoints_file.display()
                )));
            }
        }
        Ok(manifest)
    }
}

/// Numbered PNG files of a directory, sorted by name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
        .collect();
    files.sort();
    Ok(files)
}

/// Write a prepared clip as numbered PNGs plus a canvas-coordinate
/// keypoint file. Returns the (frames_dir, keypoints_file) pair.
pub fn write_clip(
    clip: &LoadedClip,
    topology: &SkeletonTopology,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        f.save_png(&frames_dir.join(format!("{i:06}.png")))?;
    }
    let (h, w) = match clip.frames.first() {
        Some(f) => (f.height(), f.width()),
        None => (0, 0),
    };
    let mut skeletons = clip.skeletons.clone();
    for (i, sk) in skeletons.iter_mut().enumerate() {
        sk.frame_index = i;
    }
    let seq = KeypointSequence {
        fps: clip.fps,
        source_resolution: (w as u32, h as u32),
        skeletons,
    };
    let kp_path = dir.join("keypoints.p2vk");
    std::fs::write(&kp_path, serialize_keypoints(&seq, topology))
        .map_err(|e| Error::io(&kp_path, e))?;
    Ok((frames_dir, kp_path))
}

/// Read a prepared clip (PNG frames + keypoint file) back into memory,
/// optionally resizing frames and rescaling keypoints to `resolution`.
pub fn load_clip(
    frames_dir: &Path,
    keypoints_file: &Path,
    topology: &SkeletonTopology,
    resolution: Option<(usize, usize)>,
) -> Result<LoadedClip> {
    let text =
        std::fs::read_to_string(keypoints_file).map_err(|e| Error::io(keypoints_file, e))?;
    let seq = parse_keypoints(&text, topology)?;
    let files = list_frame_files(frames_dir)?;
    if files.len() != seq.skeletons.len() {
        return Err(Error::Alignment(format!(
            "{} frame files but {} keypoint records",
            files.len(),
            seq.skeletons.len()
        )));
    }
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(Frame::load_png(f)?);
    }
    let mut skeletons = seq.skeletons;
    if let Some((oh, ow)) = resolution {
        let (src_w, src_h) = seq.source_resolution;
        if (src_h as usize, src_w as usize) != (oh, ow) {
            let sx = ow as f32 / src_w as f32;
            let sy = oh as f32 / src_h as f32;
            frames = frames.into_iter().map(|f| f.resize_bilinear(oh, ow)).collect();
            for sk in &mut skeletons {
                for kp in &mut sk.keypoints {
                    if kp.detected() {
                        kp.x = (kp.x * sx).clamp(0.0, ow as f32 * (1.0 - 1e-6));
                        kp.y = (kp.y * sy).clamp(0.0, oh as f32 * (1.0 - 1e-6));
                    }
                }
            }
        }
    }
    Ok(LoadedClip {
        frames,
        skeletons,
        fps: seq.fps,
    })
}

/// All paired clips of a manifest, loaded to RAM and grouped by split.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub train: Vec<LoadedClip>,
    pub val: Vec<LoadedClip>,
    pub resolution: (usize, usize),
}

/// Unpaired clips: canvas-coordinate skeleton sequences only.
#[derive(Debug, Clone, Default)]
pub struct UnpairedDataset {
    pub clips: Vec<Vec<PoseSkeleton>>,
}

/// Load every clip referenced by the manifest at the given working
/// resolution (defaults to the manifest resolution).
pub fn load_paired_dataset(
    manifest: &DatasetManifest,
    topology: &SkeletonTopology,
    resolution: Option<(usize, usize)>,
) -> Result<PairedDataset> {
    let res = resolution.unwrap_or(manifest.resolution);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for clip in &manifest.paired_clips {
        let loaded = load_clip(&clip.frames_dir, &clip.keypoints_file, topology, Some(res))?;
        match clip.split {
            Split::Train => train.push(loaded),
            Split::Val => val.push(loaded),
        }
    }
    if train.is_empty() {
        return Err(Error::Dataset("manifest has no train clips".into()));
    }
    Ok(PairedDataset {
        train,
        val,
        resolution: res,
    })
}

pub fn load_unpaired_dataset(
    manifest: &DatasetManifest,
    topology: &SkeletonTopology,
    resolution: Option<(usize, usize)>,
) -> Result<UnpairedDataset> {
    let (oh, ow) = resolution.unwrap_or(manifest.resolution);
    let mut clips = Vec::new();
    for clip in &manifest.unpaired_clips {
        let text = std::fs::read_to_string(&clip.keypoints_file)
            .map_err(|e| Error::io(&clip.keypoints_file, e))?;
        let seq = parse_keypoints(&text, topology)?;
        let (src_w, src_h) = seq.source_resolution;
        let sx = ow as f32 / src_w as f32;
        let sy = oh as f32 / src_h as f32;
        let mut skeletons = seq.skeletons;
        if (src_h as usize, src_w as usize) != (oh, ow) {
            for sk in &mut skeletons {
                for kp in &mut sk.keypoints {
                    if kp.detected() {
                        kp.x = (kp.x * sx).clamp(0.0, ow as f32 * (1.0 - 1e-6));
                        kp.y = (kp.y * sy).clamp(0.0, oh as f32 * (1.0 - 1e-6));
                    }
                }
            }
        }
        clips.push(skeletons);
    }
    Ok(UnpairedDataset { clips })
}

// ---- sampling ----

/// Windowing and augmentation settings shared by the samplers.
#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    /// Temporal half-width K of pose windows.
    pub k: usize,
    /// When false, windows are causal (no future slices).
    pub future_frames: bool,
    /// Pose-map line thickness in pixels.
    pub thickness: f32,
    pub augment: AugmentConfig,
}

/// One paired training sample.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub window: TemporalWindow<PoseMap>,
    pub center_map: PoseMap,
    pub target: Frame,
    pub clip: usize,
    pub t: usize,
}

/// One unpaired training sample: a pose window with no ground truth, plus
/// an independently drawn real (pose, frame) reference pair from the
/// paired train split.
#[derive(Debug, Clone)]
pub struct UnpairedSample {
    pub window: TemporalWindow<PoseMap>,
    pub center_map: PoseMap,
    pub reference_map: PoseMap,
    pub reference_frame: Frame,
    /// Index of the source clip in the unpaired set.
    pub clip: usize,
    /// Center frame index within that clip.
    pub t: usize,
}

fn windowed_pose_maps(
    skeletons: &[PoseSkeleton],
    topology: &SkeletonTopology,
    cfg: &SampleConfig,
    resolution: (usize, usize),
    t: usize,
    aug_seed: Option<u64>,
) -> Result<TemporalWindow<PoseMap>> {
    let indices = if cfg.future_frames {
        window_indices(skeletons.len(), t, cfg.k)?
    } else {
        causal_window_indices(skeletons.len(), t, cfg.k)?
    };
    let (out_h, out_w) = resolution;
    let frame_size = (out_w as u32, out_h as u32);
    let mut slices = Vec::with_capacity(indices.len());
    for &i in &indices {
        let sk = match aug_seed {
            Some(seed) => augment_pose(
                &skeletons[i],
                topology,
                &cfg.augment,
                frame_size,
                subseed(seed, SeedDomain::Augment, &[i as u64]),
            ),
            None => skeletons[i].clone(),
        };
        slices.push(rasterize_pose_map(&sk, topology, resolution, cfg.thickness)?);
    }
    Ok(TemporalWindow {
        slices,
        center_index: t,
    })
}

/// Uniformly draw `batch` independent (window, center map, target frame)
/// samples from the train split. Augmentation runs per window slice with
/// per-frame sub-seeds when enabled.
pub fn sample_paired_batch(
    ds: &PairedDataset,
    topology: &SkeletonTopology,
    cfg: &SampleConfig,
    batch: usize,
    rng_seed: u64,
) -> Result<Vec<PairedSample>> {
    if ds.train.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut rng =
            crate::nn::seeded_rng(subseed(rng_seed, SeedDomain::PairedSample, &[b as u64]));
        let clip = rng.random_range(0..ds.train.len());
        let t = rng.random_range(0..ds.train[clip].len());
        let aug_seed = cfg
            .augment
            .enabled
            .then(|| subseed(rng_seed, SeedDomain::Augment, &[b as u64, clip as u64, t as u64]));
        let window = windowed_pose_maps(
            &ds.train[clip].skeletons,
            topology,
            cfg,
            ds.resolution,
            t,
            aug_seed,
        )?;
        let center_map = window.slices[center_slice_index(cfg)].clone();
        out.push(PairedSample {
            window,
            center_map,
            target: ds.train[clip].frames[t].clone(),
            clip,
            t,
        });
    }
    Ok(out)
}

/// Draw `batch` groups of `m` consecutive paired samples, each group from
/// a single clip. Groups feed the temporal discriminator, which scores
/// stacks of adjacent frames. Within a group every source frame is
/// augmented identically across overlapping windows (sub-seeds key on the
/// absolute frame index), so the generator sees one consistent augmented
/// sequence. Near the clip end the last frame index repeats.
pub fn sample_temporal_groups(
    ds: &PairedDataset,
    topology: &SkeletonTopology,
    cfg: &SampleConfig,
    m: usize,
    batch: usize,
    rng_seed: u64,
) -> Result<Vec<Vec<PairedSample>>> {
    if ds.train.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }
    if m == 0 {
        return Err(Error::Dataset("group length m must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut rng =
            crate::nn::seeded_rng(subseed(rng_seed, SeedDomain::PairedSample, &[b as u64]));
        let clip = rng.random_range(0..ds.train.len());
        let len = ds.train[clip].len();
        let start = rng.random_range(0..len.saturating_sub(m - 1).max(1));
        let aug_seed = cfg
            .augment
            .enabled
            .then(|| subseed(rng_seed, SeedDomain::Augment, &[b as u64, clip as u64]));
        let mut group = Vec::with_capacity(m);
        for j in 0..m {
            let t = (start + j).min(len - 1);
            let window = windowed_pose_maps(
                &ds.train[clip].skeletons,
                topology,
                cfg,
                ds.resolution,
                t,
                aug_seed,
            )?;
            let center_map = window.slices[center_slice_index(cfg)].clone();
            group.push(PairedSample {
                window,
                center_map,
                target: ds.train[clip].frames[t].clone(),
                clip,
                t,
            });
        }
        out.push(group);
    }
    Ok(out)
}

/// Index of the center (time t) slice within a window's slice stack.
pub fn center_slice_index(cfg: &SampleConfig) -> usize {
    if cfg.future_frames {
        cfg.k
    } else {
        2 * cfg.k
    }
}

/// Draw `batch` unpaired samples: pose windows from unpaired clips (never
/// augmented, never paired with ground truth) plus independent real
/// reference pairs from the paired train split.
pub fn sample_unpaired_batch(
    paired: &PairedDataset,
    unpaired: &UnpairedDataset,
    topology: &SkeletonTopology,
    cfg: &SampleConfig,
    batch: usize,
    rng_seed: u64,
) -> Result<Vec<UnpairedSample>> {
    if unpaired.clips.is_empty() {
        return Err(Error::Dataset("empty unpaired set".into()));
    }
    if paired.train.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut rng =
            crate::nn::seeded_rng(subseed(rng_seed, SeedDomain::UnpairedSample, &[b as u64]));
        let clip = rng.random_range(0..unpaired.clips.len());
        let t = rng.random_range(0..unpaired.clips[clip].len());
        let window = windowed_pose_maps(
            &unpaired.clips[clip],
            topology,
            cfg,
            paired.resolution,
            t,
            None,
        )?;
        let center_map = window.slices[center_slice_index(cfg)].clone();
        let rclip = rng.random_range(0..paired.train.len());
        let rt = rng.random_range(0..paired.train[rclip].len());
        let reference_map = rasterize_pose_map(
            &paired.train[rclip].skeletons[rt],
            topology,
            paired.resolution,
            cfg.thickness,
        )?;
        out.push(UnpairedSample {
            window,
            center_map,
            reference_map,
            reference_frame: paired.train[rclip].frames[rt].clone(),
            clip,
            t,
        });
    }
    Ok(out)
}

/// The two joints whose distance defines the torso length: the "spine"
/// part's endpoints, or (neck, root) when no part has that name.
pub fn torso_endpoints(topology: &SkeletonTopology) -> (usize, usize) {
    topology
        .part_names()
        .iter()
        .position(|n| n == "spine")
        .map(|i| topology.parts()[i])
        .unwrap_or((1, topology.root_joint()))
}

/// Median torso length over a skeleton sequence, in pixels. None when no
/// frame has both torso endpoints detected.
pub fn median_torso_length_of(
    skeletons: &[PoseSkeleton],
    topology: &SkeletonTopology,
) -> Option<f32> {
    let (neck, hip) = torso_endpoints(topology);
    let mut lengths: Vec<f32> = Vec::new();
    for sk in skeletons {
        if let (Some(a), Some(b)) = (sk.keypoints.get(neck), sk.keypoints.get(hip)) {
            if a.detected() && b.detected() {
                lengths.push(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt());
            }
        }
    }
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = lengths.len() / 2;
    Some(if lengths.len() % 2 == 1 {
        lengths[mid]
    } else {
        0.5 * (lengths[mid - 1] + lengths[mid])
    })
}

/// Median torso (neck to hip-midpoint) length over all frames of the given
/// clips, in pixels. Used to normalize wild keypoint scale at inference.
pub fn median_torso_length(clips: &[LoadedClip], topology: &SkeletonTopology) -> Option<f32> {
    let all: Vec<PoseSkeleton> = clips
        .iter()
        .flat_map(|c| c.skeletons.iter().cloned())
        .collect();
    median_torso_length_of(&all, topology)
}

// ---- synthetic dataset ----

/// Appearance of the procedural figure: per-part stroke colors and widths,
/// drawn once per seed.
#[derive(Debug, Clone)]
struct FigureStyle {
    colors: Vec<[f32; 3]>,
    widths: Vec<f32>,
}

fn figure_style(topology: &SkeletonTopology, resolution: usize, seed: u64) -> FigureStyle {
    let mut rng = crate::nn::seeded_rng(subseed(seed, SeedDomain::Synth, &[0]));
    let n = topology.part_count();
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        // Rejection-sample colors far from the green fill so chroma keying
        // is unambiguous.
        loop {
            let c = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
            let d2: f32 = (0..3).map(|i| (c[i] - GREEN_FILL[i]).powi(2)).sum();
            if d2.sqrt() > 0.35 {
                colors.push(c);
                break;
            }
        }
    }
    let scale = resolution as f32 / 64.0;
    let widths = (0..n)
        .map(|_| rng.random_range(2.0..4.0f32) * scale)
        .collect();
    FigureStyle { colors, widths }
}

/// Smooth scalar trajectory: sum of two seeded sinusoids.
#[derive(Debug, Clone, Copy)]
struct Wobble {
    a1: f32,
    w1: f32,
    p1: f32,
    a2: f32,
    w2: f32,
    p2: f32,
}

impl Wobble {
    fn draw(rng: &mut impl Rng, amplitude: f32) -> Self {
        Wobble {
            a1: rng.random_range(0.5..1.0) * amplitude,
            w1: rng.random_range(0.05..0.15),
            p1: rng.random_range(0.0..std::f32::consts::TAU),
            a2: rng.random_range(0.1..0.5) * amplitude,
            w2: rng.random_range(0.15..0.35),
            p2: rng.random_range(0.0..std::f32::consts::TAU),
        }
    }

    fn at(&self, t: f32) -> f32 {
        self.a1 * (self.w1 * t + self.p1).sin() + self.a2 * (self.w2 * t + self.p2).sin()
    }
}

/// Procedurally animate and render a stick figure. The renderer is the
/// ground-truth pose-to-appearance mapping: skeletons and frames are
/// perfectly aligned, backgrounds are exactly the green fill, and the same
/// seed reproduces everything bit for bit.
pub fn synth_stick_figure_clip(
    seed: u64,
    num_frames: usize,
    resolution: (usize, usize),
) -> (Vec<Frame>, Vec<PoseSkeleton>) {
    assert!(num_frames >= 1);
    let topology = SkeletonTopology::builtin_15();
    let (h, w) = resolution;
    let style = figure_style(&topology, h, seed);
    let mut rng = crate::nn::seeded_rng(subseed(seed, SeedDomain::Synth, &[1]));

    let s = h as f32; // scale lengths by canvas height
    let torso = 0.22 * s;
    let head = 0.10 * s;
    let clav = 0.07 * s;
    let upper_arm = 0.11 * s;
    let forearm = 0.10 * s;
    let pelvis = 0.06 * s;
    let thigh = 0.14 * s;
    let shin = 0.13 * s;

    let root_x = Wobble::draw(&mut rng, 0.08 * w as f32);
    let root_y = Wobble::draw(&mut rng, 0.04 * s);
    let sway = Wobble::draw(&mut rng, 0.25); // torso lean, radians
    let arm_r = Wobble::draw(&mut rng, 0.9);
    let arm_l = Wobble::draw(&mut rng, 0.9);
    let elbow_r = Wobble::draw(&mut rng, 0.8);
    let elbow_l = Wobble::draw(&mut rng, 0.8);
    let leg_r = Wobble::draw(&mut rng, 0.5);
    let leg_l = Wobble::draw(&mut rng, 0.5);
    let knee_r = Wobble::draw(&mut rng, 0.5);
    let knee_l = Wobble::draw(&mut rng, 0.5);

    let mut frames = Vec::with_capacity(num_frames);
    let mut skeletons = Vec::with_capacity(num_frames);
    for fidx in 0..num_frames {
        let t = fidx as f32;
        let cx = w as f32 * 0.5 + root_x.at(t);
        let hip_y = s * 0.55 + root_y.at(t);
        let lean = sway.at(t);

        // Build joints; angles measured from straight-down.
        let dir = |angle: f32| (angle.sin(), angle.cos());
        let mut kp = vec![Keypoint::new(0.0, 0.0, 1.0); 15];
        let place = |from: (f32, f32), angle: f32, len: f32| -> (f32, f32) {
            let (dx, dy) = dir(angle);
            (from.0 + dx * len, from.1 + dy * len)
        };
        let mid_hip = (cx, hip_y);
        let neck = place(mid_hip, std::f32::consts::PI + lean, torso);
        let head_p = place(neck, std::f32::consts::PI + lean * 0.5, head);
        let r_sh = place(neck, std::f32::consts::FRAC_PI_2 + lean, -clav); // left of center
        let l_sh = place(neck, std::f32::consts::FRAC_PI_2 + lean, clav);
        let ra = arm_r.at(t);
        let la = arm_l.at(t);
        let r_el = place(r_sh, ra, upper_arm);
        let r_wr = place(r_el, ra + elbow_r.at(t), forearm);
        let l_el = place(l_sh, la, upper_arm);
        let l_wr = place(l_el, la + elbow_l.at(t), forearm);
        let r_hip = (mid_hip.0 - pelvis, mid_hip.1);
        let l_hip = (mid_hip.0 + pelvis, mid_hip.1);
        let rl = leg_r.at(t);
        let ll = leg_l.at(t);
        let r_kn = place(r_hip, rl, thigh);
        let r_an = place(r_kn, rl + knee_r.at(t).abs() * 0.7, shin);
        let l_kn = place(l_hip, ll, thigh);
        let l_an = place(l_kn, ll + knee_l.at(t).abs() * 0.7, shin);

        let coords = [
            head_p, neck, r_sh, r_el, r_wr, l_sh, l_el, l_wr, mid_hip, r_hip, r_kn, r_an,
            l_hip, l_kn, l_an,
        ];
        for (i, &(x, y)) in coords.iter().enumerate() {
            kp[i] = Keypoint::new(
                x.clamp(0.0, (w - 1) as f32),
                y.clamp(0.0, (h - 1) as f32),
                1.0,
            );
        }
        let sk = PoseSkeleton::new(kp, fidx);

        // Render: green background, then each part as a colored stroke.
        let mut img = Frame::solid(h, w, GREEN_FILL);
        for (c, &(ja, jb)) in topology.parts().iter().enumerate() {
            let a = sk.keypoints[ja];
            let b = sk.keypoints[jb];
            let radius = f64::from(style.widths[c]) / 2.0;
            let (ax, ay) = (f64::from(a.x), f64::from(a.y));
            let (bx, by) = (f64::from(b.x), f64::from(b.y));
            let x_min = (ax.min(bx) - radius).floor().max(0.0) as usize;
            let x_max = (ax.max(bx) + radius).ceil().min((w - 1) as f64) as usize;
            let y_min = (ay.min(by) - radius).floor().max(0.0) as usize;
            let y_max = (ay.max(by) + radius).ceil().min((h - 1) as f64) as usize;
            for y in y_min..=y_max {
                for x in x_min..=x_max {
                    let d2 =
                        crate::pose::dist2_point_segment(x as f64, y as f64, ax, ay, bx, by);
                    if d2 <= radius * radius {
                        for ch in 0..3 {
                            img.set(ch, y, x, style.colors[c][ch]);
                        }
                    }
                }
            }
        }
        frames.push(img);
        skeletons.push(sk);
    }
    (frames, skeletons)
}

/// Geometric foreground mask of the procedural renderer: true where any
/// part stroke covers the pixel. Computed from segment distances, not
/// pixel colors, so it can serve as ground truth when testing chroma-key
/// masks. `seed` must be the clip seed given to [`synth_stick_figure_clip`].
pub fn synth_figure_mask(
    seed: u64,
    skeleton: &PoseSkeleton,
    resolution: (usize, usize),
) -> Array2<bool> {
    let topology = SkeletonTopology::builtin_15();
    let (h, w) = resolution;
    let style = figure_style(&topology, h, seed);
    let mut mask = Array2::from_elem((h, w), false);
    for (c, &(ja, jb)) in topology.parts().iter().enumerate() {
        let a = skeleton.keypoints[ja];
        let b = skeleton.keypoints[jb];
        let radius = f64::from(style.widths[c]) / 2.0;
        let (ax, ay) = (f64::from(a.x), f64::from(a.y));
        let (bx, by) = (f64::from(b.x), f64::from(b.y));
        let x_min = (ax.min(bx) - radius).floor().max(0.0) as usize;
        let x_max = (ax.max(bx) + radius).ceil().min((w - 1) as f64) as usize;
        let y_min = (ay.min(by) - radius).floor().max(0.0) as usize;
        let y_max = (ay.max(by) + radius).ceil().min((h - 1) as f64) as usize;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let d2 = crate::pose::dist2_point_segment(x as f64, y as f64, ax, ay, bx, by);
                if d2 <= radius * radius {
                    mask[[y, x]] = true;
                }
            }
        }
    }
    mask
}

/// Generate and write a complete procedural corpus: `paired_clips` clip
/// directories (frames plus keypoints, split 17:3 by frame count within
/// each clip — the leading segment trains, the trailing one validates) and
/// `unpaired_clips` keypoint-only sequences with a different figure, all
/// referenced from a manifest at `root/manifest.json`. Returns the
/// manifest path.
pub fn write_synthetic_corpus(
    root: &Path,
    paired_clips: usize,
    unpaired_clips: usize,
    frames_per_clip: usize,
    resolution: (usize, usize),
    seed: u64,
) -> Result<PathBuf> {
    if paired_clips == 0 || frames_per_clip == 0 {
        return Err(Error::Dataset(
            "need at least one paired clip and one frame".into(),
        ));
    }
    let topology = SkeletonTopology::builtin_15();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut paired = Vec::new();
    for i in 0..paired_clips {
        let clip_seed = subseed(seed, SeedDomain::Synth, &[2, i as u64]);
        let (frames, skeletons) = synth_stick_figure_clip(clip_seed, frames_per_clip, resolution);
        let (train_len, val_len) = split_frames(frames_per_clip, 17, 3);
        let segments: [(&str, Split, usize, usize); 2] = [
            ("train", Split::Train, 0, train_len),
            ("val", Split::Val, train_len, train_len + val_len),
        ];
        for (tag, split, lo, hi) in segments {
            if hi == lo {
                continue;
            }
            let clip = LoadedClip {
                frames: frames[lo..hi].to_vec(),
                skeletons: skeletons[lo..hi].to_vec(),
                fps: 30.0,
            };
            let dir = root.join(format!("clip_{i:03}_{tag}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (frames_dir, keypoints_file) = write_clip(&clip, &topology, &dir)?;
            paired.push(PairedClipRef {
                frames_dir,
                keypoints_file,
                split,
            });
        }
    }
    let mut unpaired = Vec::new();
    for i in 0..unpaired_clips {
        let clip_seed = subseed(seed, SeedDomain::Synth, &[3, i as u64]);
        let (_, skeletons) = synth_stick_figure_clip(clip_seed, frames_per_clip, resolution);
        let seq = KeypointSequence {
            fps: 30.0,
            source_resolution: (resolution.1 as u32, resolution.0 as u32),
            skeletons,
        };
        let kp_path = root.join(format!("wild_{i:03}.p2vk"));
        std::fs::write(&kp_path, serialize_keypoints(&seq, &topology))
            .map_err(|e| Error::io(&kp_path, e))?;
        unpaired.push(UnpairedClipRef {
            keypoints_file: kp_path,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        resolution,
        topology: "builtin-15".into(),
        paired_clips: paired,
        unpaired_clips: unpaired,
    };
    let path = root.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

// ---- binary tensor container ----

const TENSOR_MAGIC: &[u8; 8] = b"P2VTENS\x01";

#[derive(Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorIndex {
    entries: Vec<TensorIndexEntry>,
}

/// Write named f32 tensors into one container file: an 8-byte magic, a
/// little-endian u64 JSON index length, the JSON index (names + shapes in
/// order), then each tensor's data as little-endian f32 in index order.
pub fn write_tensor_file(path: &Path, entries: &[(String, ArrayD<f32>)]) -> Result<()> {
    let index = TensorIndex {
        entries: entries
            .iter()
            .map(|(name, a)| TensorIndexEntry {
                name: name.clone(),
                shape: a.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&index)
        .map_err(|e| Error::Dataset(format!("tensor index encode: {e}")))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let w = |out: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    w(&mut out, TENSOR_MAGIC)?;
    w(&mut out, &(header.len() as u64).to_le_bytes())?;
    w(&mut out, &header)?;
    for (_, a) in entries {
        let contiguous = a.as_standard_layout();
        for &v in contiguous.as_slice().expect("standard layout") {
            w(&mut out, &v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a container written by [`write_tensor_file`].
pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::parse(path.display().to_string(), "bad tensor file magic"));
    }
    let mut len_bytes = [0u8; 8];
    input
        .read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let index: TensorIndex = serde_json::from_slice(&header)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::with_capacity(index.entries.len());
    for entry in index.entries {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        input.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        out.push((entry.name, array));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chroma_key_strict_boundary() {
        let mut f = Frame::solid(2, 2, GREEN_FILL);
        // exactly key color -> 0
        // at distance exactly threshold -> 0 (strict >); just above -> 1
        f.set(0, 0, 1, GREEN_FILL[0] + 0.2);
        f.set(0, 1, 0, GREEN_FILL[0] + 0.2 + 1e-4);
        let mask = chroma_key_mask(&f, GREEN_FILL, 0.2);
        assert_eq!(mask[[0, 0]], 0.0);
        assert_eq!(mask[[0, 1]], 0.0, "distance exactly threshold stays background");
        assert_eq!(mask[[1, 0]], 1.0, "distance just above threshold is foreground");
        assert_eq!(mask[[1, 1]], 0.0);
    }

    #[test]
    fn all_key_frame_gives_zero_mask() {
        let f = Frame::solid(4, 4, GREEN_FILL);
        assert_eq!(chroma_key_mask(&f, GREEN_FILL, 0.2).sum(), 0.0);
    }

    #[test]
    fn window_indices_match_contract() {
        assert_eq!(window_indices(10, 5, 2).unwrap(), vec![3, 4, 5, 6, 7]);
        assert_eq!(window_indices(10, 0, 2).unwrap(), vec![0, 0, 0, 1, 2]);
        assert_eq!(window_indices(10, 9, 2).unwrap(), vec![7, 8, 9, 9, 9]);
        assert_eq!(window_indices(10, 5, 0).unwrap(), vec![5]);
        assert!(window_indices(0, 0, 2).is_err());
        // single-frame sequence: all replicas
        assert_eq!(window_indices(1, 0, 2).unwrap(), vec![0; 5]);
    }

    #[test]
    fn causal_window_has_no_future() {
        assert_eq!(causal_window_indices(10, 5, 2).unwrap(), vec![3, 3, 3, 4, 5]);
        assert_eq!(causal_window_indices(10, 0, 2).unwrap(), vec![0, 0, 0, 0, 0]);
        for t in 0..10 {
            let w = causal_window_indices(10, t, 2).unwrap();
            assert_eq!(w.len(), 5);
            assert!(w.iter().all(|&i| i <= t), "future leak at t={t}: {w:?}");
        }
    }

    #[test]
    fn split_ratio_matches_17_3() {
        assert_eq!(split_frames(300, 17, 3), (255, 45));
        assert_eq!(split_frames(20, 17, 3), (17, 3));
        // never empties either side for total >= 2
        for total in 2..50 {
            let (tr, va) = split_frames(total, 17, 3);
            assert!(tr >= 1 && va >= 1, "total {total}: {tr}/{va}");
            assert_eq!(tr + va, total);
        }
    }

    #[test]
    fn synth_clip_is_deterministic() {
        let (fa, sa) = synth_stick_figure_clip(9, 4, (32, 32));
        let (fb, sb) = synth_stick_figure_clip(9, 4, (32, 32));
        assert_eq!(sa, sb);
        for (a, b) in fa.iter().zip(&fb) {
            assert_eq!(a.data(), b.data());
        }
        let (fc, _) = synth_stick_figure_clip(10, 4, (32, 32));
        assert_ne!(fa[0].data(), fc[0].data(), "different seeds differ");
    }

    #[test]
    fn synth_background_is_exactly_green() {
        let (frames, _) = synth_stick_figure_clip(3, 2, (48, 48));
        let f = &frames[0];
        let mask = chroma_key_mask(f, GREEN_FILL, 0.2);
        let mut bg = 0usize;
        for y in 0..f.height() {
            for x in 0..f.width() {
                if mask[[y, x]] == 0.0 {
                    bg += 1;
                    for c in 0..3 {
                        assert_eq!(f.get(c, y, x), GREEN_FILL[c]);
                    }
                }
            }
        }
        assert!(bg > 0, "expected some background");
    }

    #[test]
    fn synth_pose_map_lands_on_foreground() {
        let topo = SkeletonTopology::builtin_15();
        let (frames, sks) = synth_stick_figure_clip(5, 3, (64, 64));
        for (f, sk) in frames.iter().zip(&sks) {
            let map = rasterize_pose_map(&sk.clone(), &topo, (64, 64), 1.0).unwrap();
            let mask = chroma_key_mask(f, GREEN_FILL, 0.2);
            let mut on = 0usize;
            let mut hit = 0usize;
            for c in 0..map.channels() {
                for y in 0..64 {
                    for x in 0..64 {
                        if map.get(c, y, x) > 0.0 {
                            on += 1;
                            if mask[[y, x]] > 0.0 {
                                hit += 1;
                            }
                        }
                    }
                }
            }
            assert!(on > 0);
            let frac = hit as f64 / on as f64;
            assert!(frac >= 0.95, "overlap {frac}");
        }
    }

    #[test]
    fn prepare_crops_and_transforms_keypoints() {
        let (frames, sks) = synth_stick_figure_clip(2, 6, (96, 96));
        let seq = KeypointSequence {
            fps: 10.0,
            source_resolution: (96, 96),
            skeletons: sks,
        };
        let cfg = PrepareConfig {
            out_resolution: (64, 64),
            ..PrepareConfig::default()
        };
        let clip = prepare_paired_clip(&frames, &seq, &cfg).unwrap();
        assert_eq!(clip.len(), 6);
        for f in &clip.frames {
            assert_eq!((f.height(), f.width()), (64, 64));
        }
        for sk in &clip.skeletons {
            for kp in &sk.keypoints {
                assert!(kp.x >= 0.0 && kp.x < 64.0, "x {}", kp.x);
                assert!(kp.y >= 0.0 && kp.y < 64.0, "y {}", kp.y);
            }
        }
        // Background of prepared frames is exactly the green fill.
        let f = &clip.frames[0];
        let mask = chroma_key_mask(f, GREEN_FILL, 0.2);
        for y in 0..64 {
            for x in 0..64 {
                if mask[[y, x]] == 0.0 {
                    for c in 0..3 {
                        assert_eq!(f.get(c, y, x), GREEN_FILL[c]);
                    }
                }
            }
        }
    }

    #[test]
    fn prepare_rejects_misaligned_counts() {
        let (frames, sks) = synth_stick_figure_clip(2, 4, (48, 48));
        let seq = KeypointSequence {
            fps: 10.0,
            source_resolution: (48, 48),
            skeletons: sks[..3].to_vec(),
        };
        let err = prepare_paired_clip(&frames, &seq, &PrepareConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn static_subject_union_equals_single_bbox() {
        // All skeletons identical: union crop == single-frame bbox + margin.
        let (_, sks) = synth_stick_figure_clip(4, 1, (96, 96));
        let sk = &sks[0];
        let frames_size = (96, 96);
        let single = pose_bbox(sk, 0.1, frames_size).unwrap();
        let union =
            union_pose_bbox(&vec![sk.clone(); 5], 0.1, frames_size).unwrap();
        assert_eq!(single, union);
    }

    #[test]
    fn clip_round_trip_via_disk() {
        let topo = SkeletonTopology::builtin_15();
        let (frames, sks) = synth_stick_figure_clip(7, 3, (32, 32));
        let clip = LoadedClip {
            frames,
            skeletons: sks,
            fps: 10.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let (frames_dir, kp_file) = write_clip(&clip, &topo, dir.path()).unwrap();
        let loaded = load_clip(&frames_dir, &kp_file, &topo, None).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.skeletons, clip.skeletons);
        // PNG round trip quantizes to 1/255 steps.
        for (a, b) in loaded.frames.iter().zip(&clip.frames) {
            let max_err = a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 0.5 / 255.0 + 1e-6, "max_err {max_err}");
        }
    }

    #[test]
    fn manifest_round_trip_and_missing_file_detection() {
        let topo = SkeletonTopology::builtin_15();
        let dir = tempfile::tempdir().unwrap();
        let (frames, sks) = synth_stick_figure_clip(1, 2, (32, 32));
        let clip = LoadedClip {
            frames,
            skeletons: sks,
            fps: 10.0,
        };
        let clip_dir = dir.path().join("clip0");
        std::fs::create_dir_all(&clip_dir).unwrap();
        let (frames_dir, kp_file) = write_clip(&clip, &topo, &clip_dir).unwrap();
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            resolution: (32, 32),
            topology: "builtin-15".into(),
            paired_clips: vec![PairedClipRef {
                frames_dir,
                keypoints_file: kp_file,
                split: Split::Train,
            }],
            unpaired_clips: vec![],
        };
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.paired_clips.len(), 1);

        let mut broken = manifest.clone();
        broken.paired_clips[0].keypoints_file = dir.path().join("nope.p2vk");
        broken.save(&path).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }

    #[test]
    fn saved_manifest_survives_moving_the_dataset_tree() {
        let dir = tempfile::tempdir().unwrap();
        let original = dir.path().join("corpus");
        let manifest_path = write_synthetic_corpus(&original, 1, 1, 6, (16, 16), 2).unwrap();
        // Paths under the manifest directory are stored relative to it.
        let raw = std::fs::read_to_string(&manifest_path).unwrap();
        assert!(
            !raw.contains(original.to_str().unwrap()),
            "manifest should not embed its own directory: {raw}"
        );
        let moved = dir.path().join("relocated");
        std::fs::rename(&original, &moved).unwrap();
        let loaded = DatasetManifest::load(&moved.join("manifest.json")).unwrap();
        assert!(loaded.paired_clips[0].frames_dir.starts_with(&moved));
        load_paired_dataset(&loaded, &SkeletonTopology::builtin_15(), None).unwrap();
    }

    fn tiny_dataset() -> (PairedDataset, SkeletonTopology) {
        let topo = SkeletonTopology::builtin_15();
        let (frames, sks) = synth_stick_figure_clip(11, 8, (32, 32));
        let clip = LoadedClip {
            frames,
            skeletons: sks,
            fps: 10.0,
        };
        (
            PairedDataset {
                train: vec![clip],
                val: vec![],
                resolution: (32, 32),
            },
            topo,
        )
    }

    fn sample_cfg(augment: bool) -> SampleConfig {
        SampleConfig {
            k: 2,
            future_frames: true,
            thickness: 1.0,
            augment: if augment {
                AugmentConfig::default_for_height(32)
            } else {
                AugmentConfig::disabled()
            },
        }
    }

    #[test]
    fn paired_batch_shapes_and_determinism() {
        let (ds, topo) = tiny_dataset();
        let cfg = sample_cfg(true);
        let batch = sample_paired_batch(&ds, &topo, &cfg, 4, 77).unwrap();
        assert_eq!(batch.len(), 4);
        for s in &batch {
            assert_eq!(s.window.slices.len(), 5);
            for m in &s.window.slices {
                assert_eq!((m.channels(), m.height(), m.width()), (14, 32, 32));
            }
            assert_eq!((s.target.height(), s.target.width()), (32, 32));
        }
        let again = sample_paired_batch(&ds, &topo, &cfg, 4, 77).unwrap();
        for (a, b) in batch.iter().zip(&again) {
            assert_eq!(a.clip, b.clip);
            assert_eq!(a.t, b.t);
            for (x, y) in a.window.slices.iter().zip(&b.window.slices) {
                assert_eq!(x.data(), y.data());
            }
        }
    }

    #[test]
    fn paired_batch_without_augment_matches_raw_rasterization() {
        let (ds, topo) = tiny_dataset();
        let cfg = sample_cfg(false);
        let batch = sample_paired_batch(&ds, &topo, &cfg, 2, 5).unwrap();
        for s in &batch {
            let raw = rasterize_pose_map(
                &ds.train[s.clip].skeletons[s.t],
                &topo,
                ds.resolution,
                cfg.thickness,
            )
            .unwrap();
            assert_eq!(s.center_map.data(), raw.data());
        }
    }

    #[test]
    fn unpaired_batch_contract() {
        let (ds, topo) = tiny_dataset();
        let (_, usks) = synth_stick_figure_clip(13, 1, (32, 32));
        let unpaired = UnpairedDataset { clips: vec![usks] };
        let cfg = sample_cfg(false);
        let batch = sample_unpaired_batch(&ds, &unpaired, &topo, &cfg, 3, 9).unwrap();
        for s in &batch {
            // one-frame clip at K=2: all five slices identical
            assert_eq!(s.window.slices.len(), 5);
            for m in &s.window.slices {
                assert_eq!(m.data(), s.window.slices[0].data());
            }
            assert_eq!((s.reference_frame.height(), s.reference_frame.width()), (32, 32));
        }
        let empty = UnpairedDataset::default();
        assert!(sample_unpaired_batch(&ds, &empty, &topo, &cfg, 1, 9).is_err());
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.p2vt");
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3.25, 0.0, 9.5, -0.125])
            .unwrap();
        let b = ArrayD::from_elem(IxDyn(&[4]), 0.5f32);
        write_tensor_file(&path, &[("a".into(), a.clone()), ("b".into(), b.clone())]).unwrap();
        let loaded = read_tensor_file(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].1, b);
    }

    #[test]
    fn resize_preserves_constants_and_range() {
        let f = Frame::solid(8, 8, [0.25, 0.5, 0.75]);
        let r = f.resize_bilinear(5, 11);
        for v in r.data().iter() {
            assert!((v - 0.25).abs() < 1e-6 || (v - 0.5).abs() < 1e-6 || (v - 0.75).abs() < 1e-6);
        }
        let (frames, _) = synth_stick_figure_clip(1, 1, (32, 32));
        let up = frames[0].resize_bilinear(48, 48);
        for v in up.data().iter() {
            assert!((0.0..=1.0).contains(v));
        }
    }
}
