//! Loss terms for both training stages: paired/temporal/unpaired
//! adversarial losses in two flavors, the perceptual feature loss, the
//! discriminator feature-matching loss, and the weighted total generator
//! objective.

use crate::error::{Error, Result};
use crate::nets::{DiscOutput, Discriminator};
use crate::nn::{Graph, ParamSet, T};
use crate::percep::{PerceptualNet, STAGE_WEIGHTS};
use serde::{Deserialize, Serialize};

/// Clamp bounds applied to probabilities before logs.
pub const PROB_CLAMP: (f32, f32) = (1e-7, 1.0 - 1e-7);

/// Which adversarial objective to use. The least-squares form is the
/// default; the log form uses a non-saturating generator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GanFlavor {
    Log,
    #[default]
    LeastSquares,
}

/// Objective weights. Defaults: lambda_vgg = lambda_fm = 10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_vgg: f32,
    pub lambda_fm: f32,
    pub gan_flavor: GanFlavor,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_vgg: 10.0,
            lambda_fm: 10.0,
            gan_flavor: GanFlavor::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_vgg < 0.0 || self.lambda_fm < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-term scalars of one training step, for logging and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_paired: f32,
    pub adv_temporal: f32,
    pub adv_unpaired: f32,
    pub vgg: f32,
    pub fm_paired: f32,
    pub fm_temporal: f32,
    pub total_g: f32,
    pub total_d_p: f32,
    pub total_d_t: f32,
    pub total_d_w: f32,
}

fn check_finite(g: &Graph, scores: &[T], what: &str) -> Result<()> {
    for &s in scores {
        if g.value(s).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {what} scores")));
        }
    }
    Ok(())
}

/// Discriminator loss over per-scale raw score maps, averaged over scales.
///
/// Log flavor: mean of -[ln sigma(real) + ln(1 - sigma(fake))] with
/// probabilities clamped away from {0, 1}. Least squares: mean of
/// 0.5 * [(real - 1)^2 + fake^2].
pub fn d_loss_from_scores(
    g: &mut Graph,
    flavor: GanFlavor,
    real_scores: &[T],
    fake_scores: &[T],
) -> T {
    assert_eq!(real_scores.len(), fake_scores.len());
    let n = real_scores.len() as f32;
    let mut total: Option<T> = None;
    for (&r, &f) in real_scores.iter().zip(fake_scores) {
        let term = match flavor {
            GanFlavor::Log => {
                let pr = g.sigmoid(r);
                let pr = g.clamp(pr, PROB_CLAMP.0, PROB_CLAMP.1);
                let log_r = g.ln(pr);
                let real_term = g.mean_all(log_r);
                let pf = g.sigmoid(f);
                let pf = g.clamp(pf, PROB_CLAMP.0, PROB_CLAMP.1);
                let neg = g.scale(pf, -1.0);
                let one_minus = g.add_scalar(neg, 1.0);
                let log_f = g.ln(one_minus);
                let fake_term = g.mean_all(log_f);
                let s = g.add(real_term, fake_term);
                g.scale(s, -1.0)
            }
            GanFlavor::LeastSquares => {
                let rm1 = g.add_scalar(r, -1.0);
                let rsq = g.square(rm1);
                let real_term = g.mean_all(rsq);
                let fsq = g.square(f);
                let fake_term = g.mean_all(fsq);
                let s = g.add(real_term, fake_term);
                g.scale(s, 0.5)
            }
        };
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    let t = total.expect("at least one scale");
    g.scale(t, 1.0 / n)
}

/// Generator-side adversarial loss over fake score maps, averaged over
/// scales. Log flavor is non-saturating (-ln sigma(fake)); least squares
/// is 0.5 * (fake - 1)^2.
pub fn g_loss_from_scores(g: &mut Graph, flavor: GanFlavor, fake_scores: &[T]) -> T {
    let n = fake_scores.len() as f32;
    let mut total: Option<T> = None;
    for &f in fake_scores {
        let term = match flavor {
            GanFlavor::Log => {
                let pf = g.sigmoid(f);
                let pf = g.clamp(pf, PROB_CLAMP.0, PROB_CLAMP.1);
                let log_f = g.ln(pf);
                let m = g.mean_all(log_f);
                g.scale(m, -1.0)
            }
            GanFlavor::LeastSquares => {
                let fm1 = g.add_scalar(f, -1.0);
                let sq = g.square(fm1);
                let m = g.mean_all(sq);
                g.scale(m, 0.5)
            }
        };
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    let t = total.expect("at least one scale");
    g.scale(t, 1.0 / n)
}

/// Outputs of one combined adversarial evaluation.
pub struct AdvLosses {
    pub d_loss: T,
    pub g_loss: T,
    /// D's features on the real branch (for feature matching).
    pub real_out: DiscOutput,
    /// D's features on the attached fake branch.
    pub fake_out: DiscOutput,
}

/// Paired adversarial loss: D scores (condition, frame) pairs. The
/// discriminator loss sees the fake detached; the generator loss re-scores
/// the attached fake through a frozen D.
pub fn adversarial_loss_paired(
    g: &mut Graph,
    params: &ParamSet,
    d: &Discriminator,
    condition: T,
    real: T,
    fake: T,
    flavor: GanFlavor,
) -> Result<AdvLosses> {
    let real_out = d.forward(g, params, Some(condition), real, true)?;
    let fake_detached = g.detach(fake);
    let fake_d = d.forward(g, params, Some(condition), fake_detached, true)?;
    check_finite(g, &real_out.scores, "paired real")?;
    check_finite(g, &fake_d.scores, "paired fake")?;
    let d_loss = d_loss_from_scores(g, flavor, &real_out.scores, &fake_d.scores);
    let fake_out = d.forward(g, params, Some(condition), fake, false)?;
    let g_loss = g_loss_from_scores(g, flavor, &fake_out.scores);
    Ok(AdvLosses {
        d_loss,
        g_loss,
        real_out,
        fake_out,
    })
}

/// Temporal adversarial loss on channel-stacked M-frame sequences,
/// unconditioned. `real_stack`/`fake_stack` are (N, 3M, H, W).
pub fn adversarial_loss_temporal(
    g: &mut Graph,
    params: &ParamSet,
    d: &Discriminator,
    real_stack: T,
    fake_stack: T,
    flavor: GanFlavor,
) -> Result<AdvLosses> {
    let expect = d.spec.input_channels;
    for &t in [&real_stack, &fake_stack] {
        let c = g.shape(t)[1];
        if c != expect {
            return Err(Error::Shape(format!(
                "temporal stack has {c} channels, expected {expect}"
            )));
        }
    }
    let real_out = d.forward(g, params, None, real_stack, true)?;
    let fake_detached = g.detach(fake_stack);
    let fake_d = d.forward(g, params, None, fake_detached, true)?;
    check_finite(g, &real_out.scores, "temporal real")?;
    check_finite(g, &fake_d.scores, "temporal fake")?;
    let d_loss = d_loss_from_scores(g, flavor, &real_out.scores, &fake_d.scores);
    let fake_out = d.forward(g, params, None, fake_stack, false)?;
    let g_loss = g_loss_from_scores(g, flavor, &fake_out.scores);
    Ok(AdvLosses {
        d_loss,
        g_loss,
        real_out,
        fake_out,
    })
}

/// Unpaired adversarial loss: the positive branch scores an independently
/// drawn real reference pair (p', f'); the negative branch scores the wild
/// pose with the generated frame. No reconstruction or feature-matching
/// term accompanies this loss.
pub fn adversarial_loss_unpaired(
    g: &mut Graph,
    params: &ParamSet,
    d: &Discriminator,
    wild_pose: T,
    fake: T,
    reference_pose: T,
    reference_frame: T,
    flavor: GanFlavor,
) -> Result<AdvLosses> {
    let real_out = d.forward(g, params, Some(reference_pose), reference_frame, true)?;
    let fake_detached = g.detach(fake);
    let fake_d = d.forward(g, params, Some(wild_pose), fake_detached, true)?;
    check_finite(g, &real_out.scores, "unpaired real")?;
    check_finite(g, &fake_d.scores, "unpaired fake")?;
    let d_loss = d_loss_from_scores(g, flavor, &real_out.scores, &fake_d.scores);
    let fake_out = d.forward(g, params, Some(wild_pose), fake, false)?;
    let g_loss = g_loss_from_scores(g, flavor, &fake_out.scores);
    Ok(AdvLosses {
        d_loss,
        g_loss,
        real_out,
        fake_out,
    })
}

/// Perceptual distance between generated and target frames, both
/// (N, 3, H, W) in [0, 1]: stage-weighted mean absolute feature
/// differences through the frozen extractor.
pub fn perceptual_loss(g: &mut Graph, net: &PerceptualNet, generated: T, target: T) -> T {
    let gen_feats = net.features(g, generated);
    let tgt_feats = net.features(g, target);
    let mut total: Option<T> = None;
    for ((gf, tf), &w) in gen_feats.into_iter().zip(tgt_feats).zip(STAGE_WEIGHTS.iter()) {
        let d = g.mean_abs_diff(gf, tf);
        let term = g.scale(d, w);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    total.expect("five stages")
}

/// Feature-matching loss: mean absolute difference between fake and real
/// discriminator features, averaged over all layers and scales. Real
/// features are detached, so this loss never trains the discriminator.
pub fn feature_matching_loss(g: &mut Graph, real: &DiscOutput, fake: &DiscOutput) -> T {
    assert_eq!(real.features.len(), fake.features.len());
    let mut count = 0usize;
    let mut total: Option<T> = None;
    for (rs, fs) in real.features.iter().zip(&fake.features) {
        assert_eq!(rs.len(), fs.len());
        for (&rf, &ff) in rs.iter().zip(fs) {
            let rc = g.detach(rf);
            let term = g.mean_abs_diff(ff, rc);
            count += 1;
            total = Some(match total {
                Some(t) => g.add(t, term),
                None => term,
            });
        }
    }
    let t = total.expect("at least one feature");
    g.scale(t, 1.0 / count as f32)
}

/// Generator-side scalar terms of one step; `None` means the branch is
/// disabled and contributes exactly zero.
#[derive(Default, Clone, Copy)]
pub struct GenTerms {
    pub adv_paired: Option<T>,
    pub adv_temporal: Option<T>,
    pub adv_unpaired: Option<T>,
    pub vgg: Option<T>,
    pub fm_paired: Option<T>,
    pub fm_temporal: Option<T>,
}

/// Weighted total generator objective:
/// adv_paired + adv_temporal + adv_unpaired
///   + lambda_vgg * vgg + lambda_fm * (fm_paired + fm_temporal).
/// Any NaN term aborts the step with a diagnostic.
pub fn total_generator_loss(
    g: &mut Graph,
    terms: &GenTerms,
    weights: &LossWeights,
) -> Result<(T, LossReport)> {
    let mut report = LossReport::default();
    let named = [
        ("adv_paired", terms.adv_paired, 1.0),
        ("adv_temporal", terms.adv_temporal, 1.0),
        ("adv_unpaired", terms.adv_unpaired, 1.0),
        ("vgg", terms.vgg, weights.lambda_vgg),
        ("fm_paired", terms.fm_paired, weights.lambda_fm),
        ("fm_temporal", terms.fm_temporal, weights.lambda_fm),
    ];
    let mut total: Option<T> = None;
    for (name, term, weight) in named {
        let Some(t) = term else { continue };
        let value = g.scalar(t);
        if value.is_nan() {
            return Err(Error::Numeric(format!("{name} loss is NaN")));
        }
        match name {
            "adv_paired" => report.adv_paired = value,
            "adv_temporal" => report.adv_temporal = value,
            "adv_unpaired" => report.adv_unpaired = value,
            "vgg" => report.vgg = value,
            "fm_paired" => report.fm_paired = value,
            "fm_temporal" => report.fm_temporal = value,
            _ => unreachable!(),
        }
        let weighted = g.scale(t, weight);
        total = Some(match total {
            Some(acc) => g.add(acc, weighted),
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no generator loss terms enabled".into()))?;
    report.total_g = g.scalar(total);
    if report.total_g.is_nan() {
        return Err(Error::Numeric("total generator loss is NaN".into()));
    }
    Ok((total, report))
}
