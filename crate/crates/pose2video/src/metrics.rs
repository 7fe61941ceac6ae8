//! Evaluation metrics: windowed SSIM, Fréchet distance between feature
//! distributions, a normalized feature-space perceptual distance, and a
//! CSV report over frame directories.

use crate::data::{list_frame_files, Frame};
use crate::error::{Error, Result};
use crate::nn::Graph;
use crate::percep::PerceptualNet;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayD, IxDyn};
use std::path::Path;

/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;
/// Gaussian window sigma.
pub const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers for unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over all fully interior 11x11 windows and
/// all channels, computed in f64 with a Gaussian window. Frames must share
/// a resolution of at least the window size; values are expected in [0,1].
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "ssim resolution mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wt = win[dy * SSIM_WINDOW + dx];
                        let va = f64::from(a.get(c, y0 + dy, x0 + dx));
                        let vb = f64::from(b.get(c, y0 + dy, x0 + dx));
                        mu_a += wt * va;
                        mu_b += wt * vb;
                        aa += wt * va * va;
                        bb += wt * vb * vb;
                        ab += wt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Covariance regularizer added to both FID covariance estimates.
pub const FID_EPS: f64 = 1e-6;

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let tol = 1e-6 * max_abs.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -tol {
            return Err(Error::Numeric(format!(
                "matrix square root: eigenvalue {v} below -{tol}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&roots);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn mean_and_cov(x: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mu = vec![0.0; d];
    for row in x.rows() {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (row[i] - mu[i]) * (row[j] - mu[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += FID_EPS;
    }
    (mu, cov)
}

/// Fréchet distance between the Gaussian fits of two feature sets (rows =
/// samples): ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The
/// cross term uses the symmetrized square root sqrt(sqrt(S_a) S_b
/// sqrt(S_a)); covariances get an epsilon*I regularizer. Each set needs at
/// least two samples and matching dimensionality.
pub fn fid(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<f64> {
    let (na, da) = features_a.dim();
    let (nb, db) = features_b.dim();
    if da != db {
        return Err(Error::Shape(format!(
            "feature dims differ: {da} vs {db}"
        )));
    }
    if na < 2 || nb < 2 {
        return Err(Error::Dataset(format!(
            "fid needs at least 2 samples per set, got {na} and {nb}"
        )));
    }
    let (mu_a, cov_a) = mean_and_cov(features_a);
    let (mu_b, cov_b) = mean_and_cov(features_b);
    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root_a = sym_sqrt(&cov_a)?;
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sym_sqrt(&inner)?;
    let trace = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace).max(0.0))
}

/// Frame pair distance in the frozen extractor's feature space: at every
/// spatial position the channel vector is scaled to unit norm, squared
/// differences are averaged within each stage, and stages are summed.
pub fn perceptual_distance(net: &PerceptualNet, a: &Frame, b: &Frame) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "perceptual distance resolution mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let feats = |frame: &Frame| -> Vec<ArrayD<f32>> {
        let mut g = Graph::new();
        let (h, w) = (frame.height(), frame.width());
        let mut input = ArrayD::zeros(IxDyn(&[1, 3, h, w]));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    input[[0, c, y, x]] = frame.get(c, y, x);
                }
            }
        }
        let node = g.constant(input);
        let nodes = net.features(&mut g, node);
        nodes.into_iter().map(|n| g.value(n).clone()).collect()
    };
    let fa = feats(a);
    let fb = feats(b);
    let mut total = 0.0f64;
    for (sa, sb) in fa.iter().zip(&fb) {
        let shape = sa.shape();
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let normalize = |s: &ArrayD<f32>, ch: usize, y: usize, x: usize, norm: f64| -> f64 {
            f64::from(s[[0, ch, y, x]]) / norm
        };
        let mut stage_sum = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let norm_of = |s: &ArrayD<f32>| -> f64 {
                    let mut n = 0.0f64;
                    for ch in 0..c {
                        let v = f64::from(s[[0, ch, y, x]]);
                        n += v * v;
                    }
                    (n + 1e-10).sqrt()
                };
                let na = norm_of(sa);
                let nb = norm_of(sb);
                for ch in 0..c {
                    let d = normalize(sa, ch, y, x, na) - normalize(sb, ch, y, x, nb);
                    stage_sum += d * d;
                }
            }
        }
        total += stage_sum / (c * h * w) as f64;
    }
    Ok(total)
}

/// Per-frame metric rows plus corpus aggregates.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub mean_perceptual: f64,
    pub std_perceptual: f64,
    /// None when either corpus is too small for a covariance estimate.
    pub fid: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameMetrics {
    pub name: String,
    pub ssim: f64,
    pub perceptual: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Metrics over two aligned frame lists. FID is computed from pooled
/// extractor features when both sides have at least two frames, and left
/// out otherwise.
pub fn evaluate_frames(
    net: &PerceptualNet,
    generated: &[(String, Frame)],
    reference: &[(String, Frame)],
) -> Result<MetricsReport> {
    if generated.len() != reference.len() {
        return Err(Error::Dataset(format!(
            "{} generated frames but {} reference frames",
            generated.len(),
            reference.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::Dataset("no frames to evaluate".into()));
    }
    let mut frames = Vec::with_capacity(generated.len());
    for ((name, gf), (_, rf)) in generated.iter().zip(reference) {
        frames.push(FrameMetrics {
            name: name.clone(),
            ssim: ssim(gf, rf)?,
            perceptual: perceptual_distance(net, gf, rf)?,
        });
    }
    let (mean_ssim, std_ssim) = mean_std(&frames.iter().map(|f| f.ssim).collect::<Vec<_>>());
    let (mean_perceptual, std_perceptual) =
        mean_std(&frames.iter().map(|f| f.perceptual).collect::<Vec<_>>());
    let fid_value = if generated.len() >= 2 {
        let gen_frames: Vec<Frame> = generated.iter().map(|(_, f)| f.clone()).collect();
        let ref_frames: Vec<Frame> = reference.iter().map(|(_, f)| f.clone()).collect();
        Some(fid(
            &net.pooled_features(&gen_frames),
            &net.pooled_features(&ref_frames),
        )?)
    } else {
        None
    };
    Ok(MetricsReport {
        frames,
        mean_ssim,
        std_ssim,
        mean_perceptual,
        std_perceptual,
        fid: fid_value,
    })
}

/// Directory wrapper around [`evaluate_frames`]: loads the sorted PNG
/// frames of both directories and compares them pairwise.
pub fn evaluate_run(
    net: &PerceptualNet,
    generated_dir: &Path,
    reference_dir: &Path,
) -> Result<MetricsReport> {
    let load = |dir: &Path| -> Result<Vec<(String, Frame)>> {
        list_frame_files(dir)?
            .into_iter()
            .map(|p| {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, Frame::load_png(&p)?))
            })
            .collect()
    };
    evaluate_frames(net, &load(generated_dir)?, &load(reference_dir)?)
}

impl MetricsReport {
    /// CSV with one row per frame and mean/std summary rows; FID appears
    /// only on the mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,ssim,perceptual,fid\n");
        for f in &self.frames {
            out.push_str(&format!("{},{:.6},{:.6},\n", f.name, f.ssim, f.perceptual));
        }
        let fid_cell = self
            .fid
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "mean,{:.6},{:.6},{}\n",
            self.mean_ssim, self.mean_perceptual, fid_cell
        ));
        out.push_str(&format!(
            "std,{:.6},{:.6},\n",
            self.std_ssim, self.std_perceptual
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use ndarray::Array3;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_frame(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = seeded_rng(seed);
        let mut data = Array3::zeros((3, h, w));
        for v in data.iter_mut() {
            *v = rng.random::<f32>();
        }
        Frame::from_array(data)
    }

    #[test]
    fn ssim_identity_is_one() {
        let f = noise_frame(1, 16, 16);
        let s = ssim(&f, &f).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // mu_a=0, mu_b=1, zero variance everywhere:
        // SSIM = C1 / (1 + C1) = 1e-4 / 1.0001.
        let black = Frame::solid(16, 16, [0.0; 3]);
        let white = Frame::solid(16, 16, [1.0; 3]);
        let s = ssim(&black, &white).unwrap();
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
        assert!((s - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn ssim_symmetry() {
        let a = noise_frame(2, 20, 14);
        let b = noise_frame(3, 20, 14);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_shape_errors() {
        let a = noise_frame(4, 16, 16);
        let b = noise_frame(5, 16, 18);
        assert!(matches!(ssim(&a, &b), Err(Error::Shape(_))));
        let tiny = noise_frame(6, 8, 8);
        assert!(matches!(ssim(&tiny, &tiny), Err(Error::Shape(_))));
    }

    fn gaussian_features(seed: u64, n: usize, d: usize, shift: f64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        let mut x = Array2::zeros((n, d));
        for v in x.iter_mut() {
            let s: f64 = StandardNormal.sample(&mut rng);
            *v = s + shift;
        }
        x
    }

    #[test]
    fn fid_identical_sets_is_zero() {
        let a = gaussian_features(7, 40, 5, 0.0);
        let d = fid(&a, &a.clone()).unwrap();
        assert!(d <= 1e-6, "{d}");
    }

    #[test]
    fn fid_symmetry() {
        let a = gaussian_features(8, 60, 6, 0.0);
        let b = gaussian_features(9, 50, 6, 0.4);
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab > 0.0);
    }

    #[test]
    fn fid_input_validation() {
        let a = gaussian_features(10, 10, 4, 0.0);
        let b = gaussian_features(11, 10, 5, 0.0);
        assert!(matches!(fid(&a, &b), Err(Error::Shape(_))));
        let single = gaussian_features(12, 1, 4, 0.0);
        assert!(matches!(fid(&a, &single), Err(Error::Dataset(_))));
    }

    #[test]
    fn fid_gaussian_mean_shift_matches_closed_form() {
        // N(0, I_d) vs N(mu, I_d) has Fréchet distance ||mu||^2. With
        // shift 1.0 in each of 8 dims, that is 8. The relative Monte-Carlo
        // noise shrinks as the shift grows (sigma ~ 2 sigma_mean / ||mu||),
        // so this size sits well inside the 5% band.
        let a = gaussian_features(13, 10_000, 8, 0.0);
        let b = gaussian_features(14, 10_000, 8, 1.0);
        let d = fid(&a, &b).unwrap();
        let expect = 8.0;
        assert!(
            (d - expect).abs() < 0.05 * expect,
            "fid {d} vs closed form {expect}"
        );
    }


    #[test]
    fn matrix_sqrt_rejects_indefinite_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(sym_sqrt(&m), Err(Error::Numeric(_))));
        // Mild negative curvature within tolerance is clamped instead.
        let near = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-9]);
        let r = sym_sqrt(&near).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn perceptual_distance_identity_and_symmetry() {
        let net = PerceptualNet::fixed();
        let a = noise_frame(15, 16, 16);
        let b = noise_frame(16, 16, 16);
        assert_eq!(perceptual_distance(&net, &a, &a).unwrap(), 0.0);
        let ab = perceptual_distance(&net, &a, &b).unwrap();
        let ba = perceptual_distance(&net, &b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
        let c = noise_frame(17, 16, 18);
        assert!(perceptual_distance(&net, &a, &c).is_err());
    }

    #[test]
    fn evaluate_frames_on_identical_corpora() {
        let net = PerceptualNet::fixed();
        let frames: Vec<(String, Frame)> = (0..3)
            .map(|i| (format!("{i:06}.png"), noise_frame(20 + i, 16, 16)))
            .collect();
        let report = evaluate_frames(&net, &frames, &frames).unwrap();
        assert!((report.mean_ssim - 1.0).abs() < 1e-9);
        assert!(report.mean_perceptual.abs() < 1e-12);
        let fid_v = report.fid.expect("three frames support fid");
        assert!(fid_v <= 1e-6, "{fid_v}");
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 2);
        assert_eq!(lines[0], "frame,ssim,perceptual,fid");
        assert!(lines[1].starts_with("000000.png,"));
        assert!(lines[4].starts_with("mean,"));
        assert!(lines[5].starts_with("std,"));
        // Per-frame rows leave the fid column empty.
        assert!(lines[1].ends_with(','));
        assert!(!lines[4].ends_with(','));
    }

    #[test]
    fn evaluate_frames_single_frame_skips_fid() {
        let net = PerceptualNet::fixed();
        let frames = vec![("a.png".to_string(), noise_frame(30, 16, 16))];
        let report = evaluate_frames(&net, &frames, &frames).unwrap();
        assert!(report.fid.is_none());
        assert!((report.mean_ssim - 1.0).abs() < 1e-9);
        assert_eq!(report.std_ssim, 0.0);
        let csv = report.to_csv();
        assert!(csv.lines().nth(2).unwrap().starts_with("mean,"));
        assert!(csv.lines().nth(2).unwrap().ends_with(','));
    }

    #[test]
    fn evaluate_run_reads_directories() {
        let net = PerceptualNet::fixed();
        let dir = tempfile::tempdir().unwrap();
        let gen_dir = dir.path().join("gen");
        let ref_dir = dir.path().join("ref");
        std::fs::create_dir_all(&gen_dir).unwrap();
        std::fs::create_dir_all(&ref_dir).unwrap();
        for i in 0..2 {
            let f = noise_frame(40 + i, 16, 16);
            f.save_png(&gen_dir.join(format!("{i:06}.png"))).unwrap();
            f.save_png(&ref_dir.join(format!("{i:06}.png"))).unwrap();
        }
        let report = evaluate_run(&net, &gen_dir, &ref_dir).unwrap();
        // PNG round-trips through u8, so both sides decode identically.
        assert!((report.mean_ssim - 1.0).abs() < 1e-9);
        assert!(report.fid.unwrap() <= 1e-6);

        std::fs::remove_file(ref_dir.join("000001.png")).unwrap();
        assert!(matches!(
            evaluate_run(&net, &gen_dir, &ref_dir),
            Err(Error::Dataset(_))
        ));
    }
}
