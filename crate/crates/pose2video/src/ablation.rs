//! The ablation ladder: train every switch configuration on the same
//! corpus, render the held-out validation poses after perturbing them the
//! way imperfect detectors would, and score each row with frame metrics
//! plus corpus FID.

use crate::augment::{augment_pose, AugmentConfig};
use crate::config::{AblationRow, TrainConfig};
use crate::data::{load_paired_dataset, DatasetManifest, Frame};
use crate::error::Result;
use crate::infer::InferencePipeline;
use crate::metrics::{evaluate_frames, MetricsReport};
use crate::percep::PerceptualNet;
use crate::pose::{PoseSkeleton, SkeletonTopology};
use crate::trainer::{train_stage1, train_stage2};
use crate::util::{subseed, SeedDomain};
use std::path::{Path, PathBuf};

/// One trained and evaluated ladder row.
#[derive(Debug)]
pub struct AblationOutcome {
    pub row: AblationRow,
    pub report: MetricsReport,
    pub run_dir: PathBuf,
}

/// Perturbation applied to validation poses before rendering: mild jitter
/// and occasional channel drops, no limb rescaling. Mimics detector noise
/// so rows trained with pose augmentation can show their robustness.
fn validation_perturbation(height: usize) -> AugmentConfig {
    AugmentConfig {
        enabled: true,
        drop_prob: 0.05,
        jitter_sigma: 0.01 * height as f32,
        limb_scale_range: (1.0, 1.0),
    }
}

fn perturb_validation_poses(
    skeletons: &[PoseSkeleton],
    topology: &SkeletonTopology,
    resolution: (usize, usize),
    clip_index: usize,
    seed: u64,
) -> Vec<PoseSkeleton> {
    let cfg = validation_perturbation(resolution.0);
    let frame_size = (resolution.1 as u32, resolution.0 as u32);
    skeletons
        .iter()
        .enumerate()
        .map(|(t, sk)| {
            let s = subseed(seed, SeedDomain::Augment, &[u64::MAX, clip_index as u64, t as u64]);
            augment_pose(sk, topology, &cfg, frame_size, s)
        })
        .collect()
}

/// Render the manifest's validation split through a trained pipeline with
/// perturbed input poses and score it against the ground-truth frames.
pub fn evaluate_on_validation(
    pipeline: &InferencePipeline,
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<MetricsReport> {
    let topology = SkeletonTopology::builtin_15();
    let resolution = pipeline.resolution();
    let paired = load_paired_dataset(manifest, &topology, Some(resolution))?;
    let net = PerceptualNet::fixed();
    let mut generated: Vec<(String, Frame)> = Vec::new();
    let mut reference: Vec<(String, Frame)> = Vec::new();
    for (ci, clip) in paired.val.iter().enumerate() {
        let perturbed = perturb_validation_poses(&clip.skeletons, &topology, resolution, ci, seed);
        let frames = pipeline.render_sequence(&perturbed)?;
        for (t, (gen, real)) in frames.into_iter().zip(&clip.frames).enumerate() {
            let name = format!("clip{ci}_{t:06}");
            generated.push((name.clone(), gen));
            reference.push((name, real.clone()));
        }
    }
    evaluate_frames(&net, &generated, &reference)
}

/// Train one ladder row (stage 1, and stage 2 where the row enables it)
/// and evaluate it on the perturbed validation split.
pub fn run_row(
    base: &TrainConfig,
    row: AblationRow,
    manifest: &DatasetManifest,
    out_root: &Path,
    seed: u64,
) -> Result<AblationOutcome> {
    let config = base.clone().with_row(row);
    let run_dir = out_root.join(row.to_string());
    let s1 = train_stage1(&config, manifest, &run_dir, seed)?;
    let stage2_path = if config.flags.stage2 {
        let s2 = train_stage2(&config, manifest, &run_dir, &s1.checkpoint_path, seed)?;
        Some(s2.checkpoint_path)
    } else {
        None
    };
    let pipeline = InferencePipeline::load(&s1.checkpoint_path, stage2_path.as_deref())?;
    let report = evaluate_on_validation(&pipeline, manifest, seed)?;
    Ok(AblationOutcome { row, report, run_dir })
}

/// Run all five ladder rows, weakest to full method.
pub fn run_ladder(
    base: &TrainConfig,
    manifest: &DatasetManifest,
    out_root: &Path,
    seed: u64,
) -> Result<Vec<AblationOutcome>> {
    AblationRow::ALL
        .iter()
        .map(|&row| run_row(base, row, manifest, out_root, seed))
        .collect()
}

/// Combined ladder report, one row per configuration.
pub fn ladder_csv(outcomes: &[AblationOutcome]) -> String {
    let mut out = String::from("row,ssim_mean,ssim_std,perceptual_mean,perceptual_std,fid\n");
    for o in outcomes {
        let r = &o.report;
        let fid = r.fid.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{fid}\n",
            o.row, r.mean_ssim, r.std_ssim, r.mean_perceptual, r.std_perceptual
        ));
    }
    out
}
