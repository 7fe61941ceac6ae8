//! Frozen convolutional feature extractor used by the perceptual loss and
//! the feature-based video metrics.
//!
//! Five conv-ReLU stages (3 -> 16 -> 32 -> 64 -> 128 -> 128 channels) with
//! 2x2 average pooling between stages. The weights are drawn once from a
//! fixed seed and never trained, so every run — training, evaluation,
//! tests — scores against the same embedding. Inputs are RGB in [0, 1].

use crate::data::Frame;
use crate::nn::{randn, seeded_rng, Graph, ParamId, ParamSet, T};
use ndarray::{Array2, Array4, ArrayD, IxDyn};

/// Channel widths after each stage.
pub const STAGE_CHANNELS: [usize; 5] = [16, 32, 64, 128, 128];

/// Per-stage weights of the perceptual loss, shallow to deep.
pub const STAGE_WEIGHTS: [f32; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];

/// Seed the shared extractor weights are drawn from. Fixed so that feature
/// distances are comparable across runs and processes.
pub const DEFAULT_SEED: u64 = 0x70657263_65700001;

/// Dimension of [`PerceptualNet::pooled_features`] vectors.
pub const FEATURE_DIM: usize = STAGE_CHANNELS[4];

pub struct PerceptualNet {
    params: ParamSet,
    layers: Vec<(ParamId, ParamId)>,
}

impl PerceptualNet {
    /// The shared fixed-weight extractor.
    pub fn fixed() -> Self {
        Self::with_seed(DEFAULT_SEED)
    }

    pub fn with_seed(seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = seeded_rng(seed);
        let mut layers = Vec::new();
        let mut cin = 3usize;
        for (i, &cout) in STAGE_CHANNELS.iter().enumerate() {
            // He-style scaling keeps activations healthy through depth.
            let std = (2.0 / (cin * 9) as f32).sqrt();
            let w = params.add(&format!("percep/{i}/w"), randn(&mut rng, &[cout, cin, 3, 3], std));
            let b = params.add(&format!("percep/{i}/b"), ArrayD::zeros(IxDyn(&[cout])));
            layers.push((w, b));
            cin = cout;
        }
        PerceptualNet { params, layers }
    }

    /// Raw (weight, bias) arrays per stage, shallow to deep. Lets tests
    /// rebuild the forward pass independently of the graph engine.
    pub fn stage_params(&self) -> Vec<(ArrayD<f32>, ArrayD<f32>)> {
        self.layers
            .iter()
            .map(|&(w, b)| (self.params.get(w).value.clone(), self.params.get(b).value.clone()))
            .collect()
    }

    /// Per-stage ReLU feature maps for a (N, 3, H, W) input node. The
    /// extractor's parameters always enter the graph frozen; gradients flow
    /// only to the input.
    pub fn features(&self, g: &mut Graph, x: T) -> Vec<T> {
        let mut feats = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                let shape = g.shape(cur);
                let (h, ww) = (shape[2], shape[3]);
                if h > 1 && ww > 1 && h % 2 == 0 && ww % 2 == 0 {
                    cur = g.avg_pool2(cur);
                }
            }
            let wn = g.param(&self.params, w, false);
            let bn = g.param(&self.params, b, false);
            let conv = g.conv2d(cur, wn, bn, 1, 1);
            cur = g.relu(conv);
            feats.push(cur);
        }
        feats
    }

    /// Spatially averaged final-stage features, one row per frame, in f64.
    /// This is the embedding the distribution metrics run on.
    pub fn pooled_features(&self, frames: &[Frame]) -> Array2<f64> {
        let mut out = Array2::zeros((frames.len(), FEATURE_DIM));
        for (chunk_start, chunk) in frames.chunks(8).enumerate().map(|(i, c)| (i * 8, c)) {
            let n = chunk.len();
            let (h, w) = (chunk[0].height(), chunk[0].width());
            let mut batch = Array4::<f32>::zeros((n, 3, h, w));
            for (i, f) in chunk.iter().enumerate() {
                batch
                    .slice_mut(ndarray::s![i, .., .., ..])
                    .assign(f.data());
            }
            let mut g = Graph::new();
            let x = g.constant(batch.into_dyn());
            let feats = self.features(&mut g, x);
            let last = g.value(*feats.last().expect("five stages"));
            let shape = last.shape().to_vec();
            let area = (shape[2] * shape[3]) as f64;
            for i in 0..n {
                for c in 0..FEATURE_DIM {
                    let mut s = 0.0f64;
                    for y in 0..shape[2] {
                        for x in 0..shape[3] {
                            s += f64::from(last[[i, c, y, x]]);
                        }
                    }
                    out[[chunk_start + i, c]] = s / area;
                }
            }
        }
        out
    }
}
