//! Run configuration: training hyperparameters, network size presets, and
//! the five-row ablation ladder. Configs round-trip through TOML; CLI
//! flags override file values, which override defaults.

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const CONFIG_VERSION: u32 = 1;

/// Network size knobs shared by the generator and discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub base_width: usize,
    pub num_downsamples: usize,
    pub num_residual_blocks: usize,
    /// Scale count for the paired and unpaired discriminators.
    pub disc_scales: usize,
    /// Scale count for the temporal discriminator.
    pub temporal_disc_scales: usize,
}

impl Default for NetConfig {
    /// Desk-scale preset: small enough for CPU training runs.
    fn default() -> Self {
        NetConfig {
            base_width: 16,
            num_downsamples: 3,
            num_residual_blocks: 3,
            disc_scales: 2,
            temporal_disc_scales: 1,
        }
    }
}

impl NetConfig {
    /// Full-scale preset matching the published architecture family.
    pub fn paper_preset() -> Self {
        NetConfig {
            base_width: 64,
            num_downsamples: 4,
            num_residual_blocks: 9,
            disc_scales: 3,
            temporal_disc_scales: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0
            || self.num_downsamples == 0
            || self.num_residual_blocks == 0
            || self.disc_scales == 0
            || self.temporal_disc_scales == 0
        {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Pose augmentation strengths, resolution independent. Jitter is a
/// fraction of frame height so the same config drives every resolution in
/// a progressive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSettings {
    pub drop_prob: f32,
    pub jitter_fraction: f32,
    pub limb_scale: (f32, f32),
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            drop_prob: 0.05,
            jitter_fraction: 0.015,
            limb_scale: (0.8, 1.25),
        }
    }
}

impl AugmentSettings {
    /// Concrete per-resolution augmentation parameters.
    pub fn at_height(&self, height: usize, enabled: bool) -> AugmentConfig {
        AugmentConfig {
            enabled,
            drop_prob: self.drop_prob,
            jitter_sigma: self.jitter_fraction * height as f32,
            limb_scale_range: self.limb_scale,
        }
    }
}

/// The four switches the ablation ladder toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub data_aug: bool,
    pub future_frames: bool,
    pub stage2: bool,
    pub unpaired: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            data_aug: true,
            future_frames: true,
            stage2: true,
            unpaired: true,
        }
    }
}

/// Ablation ladder rows, weakest to full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationRow {
    PlStage1,
    PlStage1Da,
    PlStage1DaF,
    PlStage2,
    PlUlStage2,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::PlStage1,
        AblationRow::PlStage1Da,
        AblationRow::PlStage1DaF,
        AblationRow::PlStage2,
        AblationRow::PlUlStage2,
    ];

    pub fn flags(self) -> AblationFlags {
        match self {
            AblationRow::PlStage1 => AblationFlags {
                data_aug: false,
                future_frames: false,
                stage2: false,
                unpaired: false,
            },
            AblationRow::PlStage1Da => AblationFlags {
                data_aug: true,
                future_frames: false,
                stage2: false,
                unpaired: false,
            },
            AblationRow::PlStage1DaF => AblationFlags {
                data_aug: true,
                future_frames: true,
                stage2: false,
                unpaired: false,
            },
            AblationRow::PlStage2 => AblationFlags {
                data_aug: true,
                future_frames: true,
                stage2: true,
                unpaired: false,
            },
            AblationRow::PlUlStage2 => AblationFlags::default(),
        }
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationRow::PlStage1 => "PL-Stage1",
            AblationRow::PlStage1Da => "PL-Stage1-DA",
            AblationRow::PlStage1DaF => "PL-Stage1-DA-F",
            AblationRow::PlStage2 => "PL-Stage2",
            AblationRow::PlUlStage2 => "PL-UL-Stage2",
        };
        f.write_str(s)
    }
}

impl FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PL-Stage1" => Ok(AblationRow::PlStage1),
            "PL-Stage1-DA" => Ok(AblationRow::PlStage1Da),
            "PL-Stage1-DA-F" => Ok(AblationRow::PlStage1DaF),
            "PL-Stage2" => Ok(AblationRow::PlStage2),
            "PL-UL-Stage2" => Ok(AblationRow::PlUlStage2),
            other => Err(Error::Config(format!(
                "unknown ablation row {other:?} (expected PL-Stage1, PL-Stage1-DA, \
                 PL-Stage1-DA-F, PL-Stage2, or PL-UL-Stage2)"
            ))),
        }
    }
}

/// Complete training run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    /// Temporal half-width of pose windows.
    pub k: usize,
    /// Consecutive frames per temporal-discriminator stack.
    pub m: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    /// One unpaired step after every `unpaired_ratio` paired steps.
    pub unpaired_ratio: usize,
    /// Progressive schedule: (height, width) per phase, coarse to fine.
    pub resolutions: Vec<(usize, usize)>,
    /// Paired steps per resolution phase; same length as `resolutions`.
    pub steps_per_resolution: Vec<usize>,
    pub stage2_steps: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub weights: LossWeights,
    pub augment: AugmentSettings,
    pub net: NetConfig,
    pub flags: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: CONFIG_VERSION,
            k: 2,
            m: 3,
            batch_size: 1,
            lr_initial: 0.0002,
            unpaired_ratio: 3,
            resolutions: vec![(64, 64)],
            steps_per_resolution: vec![1000],
            stage2_steps: 400,
            checkpoint_every: 200,
            log_every: 10,
            weights: LossWeights::default(),
            augment: AugmentSettings::default(),
            net: NetConfig::default(),
            flags: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    /// Apply one ablation row's switch settings.
    pub fn with_row(mut self, row: AblationRow) -> Self {
        self.flags = row.flags();
        self
    }

    pub fn total_stage1_steps(&self) -> usize {
        self.steps_per_resolution.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.unpaired_ratio < 1 {
            return Err(Error::Config("unpaired_ratio must be at least 1".into()));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config("lr_initial must be positive".into()));
        }
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one resolution required".into()));
        }
        if self.resolutions.len() != self.steps_per_resolution.len() {
            return Err(Error::Config(format!(
                "{} resolutions but {} step counts",
                self.resolutions.len(),
                self.steps_per_resolution.len()
            )));
        }
        let div = 1usize << self.net.num_downsamples;
        for &(h, w) in &self.resolutions {
            if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
                return Err(Error::Config(format!(
                    "resolution {h}x{w} must be a positive multiple of {div}"
                )));
            }
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "checkpoint_every and log_every must be positive".into(),
            ));
        }
        if !(self.augment.drop_prob >= 0.0 && self.augment.drop_prob <= 1.0) {
            return Err(Error::Config("drop_prob must be in [0,1]".into()));
        }
        if !(self.augment.jitter_fraction >= 0.0) {
            return Err(Error::Config("jitter_fraction must be >= 0".into()));
        }
        let (lo, hi) = self.augment.limb_scale;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "limb_scale ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        self.weights.validate()?;
        self.net.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::parse("config", e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::GanFlavor;

    #[test]
    fn defaults_are_valid_and_pin_core_hyperparameters() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.m, 3);
        assert_eq!(c.lr_initial, 0.0002);
        assert_eq!(c.unpaired_ratio, 3);
        assert_eq!(c.weights.lambda_vgg, 10.0);
        assert_eq!(c.weights.lambda_fm, 10.0);
        assert_eq!(c.weights.gan_flavor, GanFlavor::LeastSquares);
        assert_eq!(c.augment.drop_prob, 0.05);
        assert_eq!(c.augment.limb_scale, (0.8, 1.25));
    }

    #[test]
    fn toml_round_trip_preserves_everything() {
        let mut c = TrainConfig::default();
        c.resolutions = vec![(32, 32), (64, 64)];
        c.steps_per_resolution = vec![100, 300];
        c.weights.gan_flavor = GanFlavor::Log;
        c.flags.unpaired = false;
        let text = c.to_toml().unwrap();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = TrainConfig::from_toml("k = 1\nbatch_size = 2\n").unwrap();
        assert_eq!(c.k, 1);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.m, 3);
        assert_eq!(c.lr_initial, 0.0002);
    }

    #[test]
    fn ablation_rows_set_expected_flags() {
        let f = AblationRow::PlStage1.flags();
        assert!(!f.data_aug && !f.future_frames && !f.stage2 && !f.unpaired);
        let f = AblationRow::PlStage1Da.flags();
        assert!(f.data_aug && !f.future_frames && !f.stage2 && !f.unpaired);
        let f = AblationRow::PlStage1DaF.flags();
        assert!(f.data_aug && f.future_frames && !f.stage2 && !f.unpaired);
        let f = AblationRow::PlStage2.flags();
        assert!(f.data_aug && f.future_frames && f.stage2 && !f.unpaired);
        let f = AblationRow::PlUlStage2.flags();
        assert!(f.data_aug && f.future_frames && f.stage2 && f.unpaired);
    }

    #[test]
    fn ablation_row_names_round_trip() {
        for row in AblationRow::ALL {
            let parsed: AblationRow = row.to_string().parse().unwrap();
            assert_eq!(parsed, row);
        }
        assert!("PL-Stage3".parse::<AblationRow>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = TrainConfig::default();
        c.resolutions = vec![(60, 64)]; // not divisible by 2^3
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.steps_per_resolution = vec![];
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.m = 0;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.augment.limb_scale = (1.2, 0.8);
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.version = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn augment_settings_scale_with_height() {
        let s = AugmentSettings::default();
        let a = s.at_height(64, true);
        assert!(a.enabled);
        assert!((a.jitter_sigma - 0.96).abs() < 1e-6);
        let a = s.at_height(128, false);
        assert!(!a.enabled);
        assert!((a.jitter_sigma - 1.92).abs() < 1e-6);
    }
}
