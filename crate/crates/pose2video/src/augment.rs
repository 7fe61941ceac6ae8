//! Skeleton augmentation: limb-length scaling, joint jitter, and part
//! (channel) dropout, simulating pose-detector failure modes during
//! training.
//!
//! All three effects are pure seeded functions: the same seed and input
//! always produce bit-identical output. [`augment_pose`] composes them in
//! the order scale -> jitter -> drop, so dropping a part is the last word
//! on its channel.

use crate::error::{Error, Result};
use crate::pose::{PoseSkeleton, SkeletonTopology};
use crate::util::{subseed, SeedDomain};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Augmentation knobs. `jitter_sigma` is in pixels at the resolution the
/// skeleton lives in; callers working at reduced resolutions scale it
/// proportionally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Per-part dropout probability.
    pub drop_prob: f32,
    /// Std. dev. of the per-axis Gaussian joint offset, in pixels.
    pub jitter_sigma: f32,
    /// Uniform range of limb length multipliers.
    pub limb_scale_range: (f32, f32),
}

impl AugmentConfig {
    /// Defaults: mild corruption comparable to detector noise at the given
    /// frame height.
    pub fn default_for_height(height: usize) -> Self {
        AugmentConfig {
            enabled: true,
            drop_prob: 0.05,
            jitter_sigma: 0.015 * height as f32,
            limb_scale_range: (0.8, 1.25),
        }
    }

    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            drop_prob: 0.0,
            jitter_sigma: 0.0,
            limb_scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!(
                "drop_prob {} outside [0, 1]",
                self.drop_prob
            )));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma {} must be >= 0",
                self.jitter_sigma
            )));
        }
        let (lo, hi) = self.limb_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "limb_scale_range ({lo}, {hi}) needs 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

/// Drop each part independently with probability `drop_prob`.
///
/// Dropped parts are recorded in the skeleton's `dropped_parts` list, which
/// the rasterizer honors directly, so a shared joint still draws in its
/// surviving parts. Joints whose every containing part is dropped also get
/// their confidence zeroed.
pub fn drop_parts(
    skeleton: &PoseSkeleton,
    topology: &SkeletonTopology,
    drop_prob: f32,
    rng_seed: u64,
) -> PoseSkeleton {
    let mut rng = crate::nn::seeded_rng(rng_seed);
    let mut out = skeleton.clone();
    let mut dropped = vec![false; topology.part_count()];
    for (c, d) in dropped.iter_mut().enumerate() {
        let u: f32 = rng.random();
        if u < drop_prob {
            *d = true;
            if !out.dropped_parts.contains(&c) {
                out.dropped_parts.push(c);
            }
        }
    }
    for joint in 0..topology.joint_count() {
        let owners = topology.parts_of_joint(joint);
        if !owners.is_empty() && owners.iter().all(|&p| dropped[p]) {
            out.keypoints[joint].confidence = 0.0;
        }
    }
    out
}

/// Displace each detected joint by an independent N(0, sigma^2) offset per
/// axis, then clip coordinates to the frame. Confidences are unchanged.
pub fn perturb_joints(
    skeleton: &PoseSkeleton,
    jitter_sigma: f32,
    frame_size: (u32, u32),
    rng_seed: u64,
) -> PoseSkeleton {
    let mut out = skeleton.clone();
    if jitter_sigma == 0.0 {
        return out;
    }
    let mut rng = crate::nn::seeded_rng(rng_seed);
    let dist = Normal::new(0.0f32, jitter_sigma).expect("sigma validated");
    let (w, h) = (frame_size.0 as f32, frame_size.1 as f32);
    for kp in &mut out.keypoints {
        // Draw for every joint so the stream stays aligned regardless of
        // which joints are detected.
        let dx = dist.sample(&mut rng);
        let dy = dist.sample(&mut rng);
        if kp.detected() {
            kp.x = (kp.x + dx).clamp(0.0, w);
            kp.y = (kp.y + dy).clamp(0.0, h);
        }
    }
    out
}

/// Multiply each eligible limb's length by an independent uniform factor
/// from `range`, anchoring the proximal joint and translating descendants
/// rigidly.
///
/// Implemented as forward kinematics over the topology's tree: every
/// joint's displacement is its parent's displacement plus
/// `(factor - 1) * (joint - parent)` when the connecting part is a scaled
/// limb. With factors of exactly 1 every displacement stays exactly zero,
/// so the identity range reproduces the input bit for bit.
pub fn scale_limbs(
    skeleton: &PoseSkeleton,
    topology: &SkeletonTopology,
    range: (f32, f32),
    rng_seed: u64,
) -> PoseSkeleton {
    let (lo, hi) = range;
    let mut rng = crate::nn::seeded_rng(rng_seed);
    // One factor per part, drawn in part order for a stable stream; only
    // limb parts consult theirs.
    let mut factor = vec![1.0f32; topology.part_count()];
    for (c, f) in factor.iter_mut().enumerate() {
        if topology.limb_parts().contains(&c) {
            let u: f32 = rng.random();
            *f = lo + u * (hi - lo);
        }
    }

    let parents = topology.joint_parents();
    // Part index for each (parent, child) tree edge.
    let edge_part = |parent: usize, child: usize| -> Option<usize> {
        topology
            .parts()
            .iter()
            .position(|&(a, b)| (a, b) == (parent, child) || (a, b) == (child, parent))
    };

    let mut out = skeleton.clone();
    let mut delta = vec![(0.0f64, 0.0f64); topology.joint_count()];
    for joint in topology.joints_topological() {
        let Some(parent) = parents[joint] else { continue };
        let (pdx, pdy) = delta[parent];
        let mut d = (pdx, pdy);
        if let Some(part) = edge_part(parent, joint) {
            let f = f64::from(factor[part]);
            if f != 1.0 {
                let vx = f64::from(skeleton.keypoints[joint].x)
                    - f64::from(skeleton.keypoints[parent].x);
                let vy = f64::from(skeleton.keypoints[joint].y)
                    - f64::from(skeleton.keypoints[parent].y);
                d.0 += (f - 1.0) * vx;
                d.1 += (f - 1.0) * vy;
            }
        }
        delta[joint] = d;
        if d != (0.0, 0.0) {
            let kp = &mut out.keypoints[joint];
            kp.x = (f64::from(kp.x) + d.0) as f32;
            kp.y = (f64::from(kp.y) + d.1) as f32;
        }
    }
    out
}

/// Full augmentation pipeline: scale limbs, jitter joints, drop parts, each
/// with an independent sub-seed. A disabled config is the identity.
pub fn augment_pose(
    skeleton: &PoseSkeleton,
    topology: &SkeletonTopology,
    config: &AugmentConfig,
    frame_size: (u32, u32),
    rng_seed: u64,
) -> PoseSkeleton {
    if !config.enabled {
        return skeleton.clone();
    }
    let scaled = scale_limbs(
        skeleton,
        topology,
        config.limb_scale_range,
        subseed(rng_seed, SeedDomain::LimbScale, &[]),
    );
    let jittered = perturb_joints(
        &scaled,
        config.jitter_sigma,
        frame_size,
        subseed(rng_seed, SeedDomain::Jitter, &[]),
    );
    drop_parts(
        &jittered,
        topology,
        config.drop_prob,
        subseed(rng_seed, SeedDomain::Drop, &[]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{rasterize_pose_map, Keypoint};

    fn topo() -> SkeletonTopology {
        SkeletonTopology::builtin_15()
    }

    fn standing_skeleton() -> PoseSkeleton {
        // A plausible standing pose inside a 64x64 frame.
        let pts = [
            (32.0, 8.0),  // head
            (32.0, 16.0), // neck
            (26.0, 17.0), // r_shoulder
            (24.0, 26.0), // r_elbow
            (23.0, 34.0), // r_wrist
            (38.0, 17.0), // l_shoulder
            (40.0, 26.0), // l_elbow
            (41.0, 34.0), // l_wrist
            (32.0, 34.0), // mid_hip
            (28.0, 35.0), // r_hip
            (27.0, 46.0), // r_knee
            (27.0, 57.0), // r_ankle
            (36.0, 35.0), // l_hip
            (37.0, 46.0), // l_knee
            (37.0, 57.0), // l_ankle
        ];
        PoseSkeleton::new(
            pts.iter().map(|&(x, y)| Keypoint::new(x, y, 1.0)).collect(),
            0,
        )
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default_for_height(256).validate().is_ok());
        let mut c = AugmentConfig::disabled();
        c.drop_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::disabled();
        c.jitter_sigma = -1.0;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::disabled();
        c.limb_scale_range = (0.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::disabled();
        c.limb_scale_range = (1.2, 0.8);
        assert!(c.validate().is_err());
    }

    #[test]
    fn drop_zero_is_identity() {
        let sk = standing_skeleton();
        assert_eq!(drop_parts(&sk, &topo(), 0.0, 7), sk);
    }

    #[test]
    fn drop_one_empties_every_channel() {
        let topo = topo();
        let sk = standing_skeleton();
        let dropped = drop_parts(&sk, &topo, 1.0, 7);
        assert_eq!(dropped.dropped_parts.len(), topo.part_count());
        assert!(dropped.keypoints.iter().all(|kp| kp.confidence == 0.0));
        let map = rasterize_pose_map(&dropped, &topo, (64, 64), 2.0).unwrap();
        assert_eq!(map.data().sum(), 0.0);
    }

    #[test]
    fn drop_is_deterministic_and_seed_sensitive() {
        let topo = topo();
        let sk = standing_skeleton();
        let a = drop_parts(&sk, &topo, 0.5, 7);
        let b = drop_parts(&sk, &topo, 0.5, 7);
        assert_eq!(a, b);
        // Different seeds should (for this seed pair) pick different parts.
        let c = drop_parts(&sk, &topo, 0.5, 8);
        assert_ne!(a.dropped_parts, c.dropped_parts);
    }

    #[test]
    fn drop_keeps_shared_joints_confident() {
        let topo = topo();
        let sk = standing_skeleton();
        // Drop with a seed/probability that leaves some parts standing, then
        // check: every joint with at least one surviving part keeps conf 1.
        let d = drop_parts(&sk, &topo, 0.4, 3);
        assert!(!d.dropped_parts.is_empty());
        assert!(d.dropped_parts.len() < topo.part_count());
        for joint in 0..topo.joint_count() {
            let owners = topo.parts_of_joint(joint);
            let all_dropped = owners.iter().all(|p| d.dropped_parts.contains(p));
            if all_dropped {
                assert_eq!(d.keypoints[joint].confidence, 0.0, "joint {joint}");
            } else {
                assert_eq!(d.keypoints[joint].confidence, 1.0, "joint {joint}");
            }
        }
    }

    #[test]
    fn jitter_zero_is_identity() {
        let sk = standing_skeleton();
        assert_eq!(perturb_joints(&sk, 0.0, (64, 64), 5), sk);
    }

    #[test]
    fn jitter_moments_over_many_draws() {
        // Law-of-large-numbers check on one joint across 10,000 seeds.
        let sk = standing_skeleton();
        let n = 10_000;
        let mut sum = (0.0f64, 0.0f64);
        let mut sum2 = (0.0f64, 0.0f64);
        for seed in 0..n {
            let j = perturb_joints(&sk, 2.0, (1024, 1024), seed);
            let dx = f64::from(j.keypoints[4].x - sk.keypoints[4].x);
            let dy = f64::from(j.keypoints[4].y - sk.keypoints[4].y);
            sum.0 += dx;
            sum.1 += dy;
            sum2.0 += dx * dx;
            sum2.1 += dy * dy;
        }
        let n = n as f64;
        for (s, s2) in [(sum.0, sum2.0), (sum.1, sum2.1)] {
            let mean = s / n;
            let std = (s2 / n - mean * mean).sqrt();
            assert!(mean.abs() < 0.1, "mean {mean}");
            assert!((std - 2.0).abs() < 0.1, "std {std}");
        }
    }

    #[test]
    fn jitter_clips_to_frame() {
        let mut sk = standing_skeleton();
        sk.keypoints[0] = Keypoint::new(0.0, 0.0, 1.0);
        // Over many seeds the corner joint must never leave the frame.
        for seed in 0..200 {
            let j = perturb_joints(&sk, 50.0, (64, 64), seed);
            for kp in &j.keypoints {
                assert!(kp.x >= 0.0 && kp.x <= 64.0);
                assert!(kp.y >= 0.0 && kp.y <= 64.0);
            }
        }
    }

    #[test]
    fn jitter_leaves_undetected_joints_alone() {
        let mut sk = standing_skeleton();
        sk.keypoints[3].confidence = 0.0;
        let j = perturb_joints(&sk, 5.0, (64, 64), 11);
        assert_eq!(j.keypoints[3], sk.keypoints[3]);
    }

    #[test]
    fn scale_identity_range_is_exact() {
        let sk = standing_skeleton();
        for seed in 0..20 {
            assert_eq!(scale_limbs(&sk, &topo(), (1.0, 1.0), seed), sk);
        }
    }

    #[test]
    fn scale_moves_distal_joint_and_descendants() {
        let topo = topo();
        let mut sk = standing_skeleton();
        // Place the right arm on a horizontal line for easy arithmetic.
        sk.keypoints[3] = Keypoint::new(10.0, 20.0, 1.0); // r_elbow
        sk.keypoints[4] = Keypoint::new(14.0, 20.0, 1.0); // r_wrist
        // Find a seed where r_forearm (part 3) gets a factor clearly != 1
        // by scanning; then verify geometry against hand arithmetic.
        let range = (2.0, 2.0); // degenerate range: factor exactly 2
        let scaled = scale_limbs(&sk, &topo, range, 0);
        // r_upper_arm also doubled; recompute expectations step by step.
        // shoulder (26,17) -> elbow (10,20): elbow' = s + 2*(e - s)
        let s = sk.keypoints[2];
        let e = sk.keypoints[3];
        let w = sk.keypoints[4];
        let e2 = (s.x + 2.0 * (e.x - s.x), s.y + 2.0 * (e.y - s.y));
        let w2 = (e2.0 + 2.0 * (w.x - e.x), e2.1 + 2.0 * (w.y - e.y));
        assert!((scaled.keypoints[3].x - e2.0).abs() < 1e-4);
        assert!((scaled.keypoints[3].y - e2.1).abs() < 1e-4);
        assert!((scaled.keypoints[4].x - w2.0).abs() < 1e-4);
        assert!((scaled.keypoints[4].y - w2.1).abs() < 1e-4);
        // Proximal anchors never move: shoulder, neck, hips, head.
        for j in [0, 1, 2, 5, 8, 9, 12] {
            assert_eq!(scaled.keypoints[j], sk.keypoints[j], "joint {j}");
        }
    }

    #[test]
    fn scale_translates_rigid_descendants() {
        // Custom 3-joint chain: elbow(root) - wrist - hand, forearm scalable,
        // hand link not. Hand must follow the wrist rigidly.
        let topo = SkeletonTopology::new(
            3,
            vec![(0, 1), (1, 2)],
            vec!["forearm".into(), "hand".into()],
            0,
            vec![0],
        )
        .unwrap();
        let sk = PoseSkeleton::new(
            vec![
                Keypoint::new(0.0, 0.0, 1.0),
                Keypoint::new(1.0, 0.0, 1.0),
                Keypoint::new(1.2, 0.0, 1.0),
            ],
            0,
        );
        let scaled = scale_limbs(&sk, &topo, (2.0, 2.0), 0);
        assert!((scaled.keypoints[1].x - 2.0).abs() < 1e-6);
        assert!((scaled.keypoints[2].x - 2.2).abs() < 1e-6);
        assert_eq!(scaled.keypoints[0], sk.keypoints[0]);
    }

    #[test]
    fn augment_disabled_is_identity() {
        let sk = standing_skeleton();
        let cfg = AugmentConfig {
            enabled: false,
            drop_prob: 0.9,
            jitter_sigma: 10.0,
            limb_scale_range: (0.5, 2.0),
        };
        assert_eq!(augment_pose(&sk, &topo(), &cfg, (64, 64), 123), sk);
    }

    #[test]
    fn augment_identity_values_are_identity() {
        let sk = standing_skeleton();
        let cfg = AugmentConfig {
            enabled: true,
            drop_prob: 0.0,
            jitter_sigma: 0.0,
            limb_scale_range: (1.0, 1.0),
        };
        assert_eq!(augment_pose(&sk, &topo(), &cfg, (64, 64), 123), sk);
    }

    #[test]
    fn augment_is_deterministic() {
        let sk = standing_skeleton();
        let cfg = AugmentConfig {
            enabled: true,
            drop_prob: 0.3,
            jitter_sigma: 2.0,
            limb_scale_range: (0.8, 1.25),
        };
        let a = augment_pose(&sk, &topo(), &cfg, (64, 64), 7);
        let b = augment_pose(&sk, &topo(), &cfg, (64, 64), 7);
        assert_eq!(a, b);
        let c = augment_pose(&sk, &topo(), &cfg, (64, 64), 8);
        assert_ne!(a, c);
    }

    #[test]
    fn augment_preserves_joint_count_and_frame_index() {
        let mut sk = standing_skeleton();
        sk.frame_index = 42;
        let cfg = AugmentConfig::default_for_height(64);
        for seed in 0..50 {
            let a = augment_pose(&sk, &topo(), &cfg, (64, 64), seed);
            assert_eq!(a.keypoints.len(), sk.keypoints.len());
            assert_eq!(a.frame_index, 42);
        }
    }
}
