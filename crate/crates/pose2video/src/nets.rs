//! Generator and discriminator architectures: a residual encoder-decoder
//! generator and multi-scale patch discriminators, both sized by spec
//! structs that serialize into checkpoint headers.

use crate::error::{Error, Result};
use crate::nn::{randn, seeded_rng, Graph, ParamId, ParamSet, T};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const NORM_EPS: f32 = 1e-5;

/// Shape of a generator: stage 1 consumes stacked pose maps, stage 2
/// consumes stacked stage-1 RGB outputs. Output is always RGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub stage: u8,
    pub in_channels: usize,
    pub base_width: usize,
    pub num_downsamples: usize,
    pub num_residual_blocks: usize,
    /// (height, width) the generator operates at.
    pub resolution: (usize, usize),
}

impl GeneratorSpec {
    /// Stage-1 spec: input channels n_s * (2K+1) pose-map slices.
    pub fn stage1(
        pose_channels: usize,
        k: usize,
        base_width: usize,
        num_downsamples: usize,
        num_residual_blocks: usize,
        resolution: (usize, usize),
    ) -> Self {
        GeneratorSpec {
            stage: 1,
            in_channels: pose_channels * (2 * k + 1),
            base_width,
            num_downsamples,
            num_residual_blocks,
            resolution,
        }
    }

    /// Stage-2 spec: input channels 3 * (2K+1) stacked RGB frames.
    pub fn stage2(
        k: usize,
        base_width: usize,
        num_downsamples: usize,
        num_residual_blocks: usize,
        resolution: (usize, usize),
    ) -> Self {
        GeneratorSpec {
            stage: 2,
            in_channels: 3 * (2 * k + 1),
            base_width,
            num_downsamples,
            num_residual_blocks,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("generator stage {} not in {{1,2}}", self.stage)));
        }
        if self.in_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("generator channels must be positive".into()));
        }
        let div = 1 << self.num_downsamples;
        let (h, w) = self.resolution;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "resolution {h}x{w} not divisible by 2^{}",
                self.num_downsamples
            )));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// Role of a discriminator, which fixes its conditioning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscKind {
    /// Scores (condition pose/stage-1 stack, single frame) pairs.
    Paired,
    /// Scores M-frame stacks with no condition.
    Temporal,
    /// Scores (pose map, frame) pairs where poses may come from unpaired
    /// sources.
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub kind: DiscKind,
    pub condition_channels: usize,
    pub input_channels: usize,
    pub num_scales: usize,
    pub base_width: usize,
    pub patch_output: bool,
}

impl DiscriminatorSpec {
    pub fn paired_stage1(pose_channels: usize, num_scales: usize, base_width: usize) -> Self {
        DiscriminatorSpec {
            kind: DiscKind::Paired,
            condition_channels: pose_channels,
            input_channels: 3,
            num_scales,
            base_width,
            patch_output: true,
        }
    }

    /// Stage-2 paired discriminator conditions on the stage-1 output stack.
    pub fn paired_stage2(k: usize, num_scales: usize, base_width: usize) -> Self {
        DiscriminatorSpec {
            kind: DiscKind::Paired,
            condition_channels: 3 * (2 * k + 1),
            input_channels: 3,
            num_scales,
            base_width,
            patch_output: true,
        }
    }

    pub fn temporal(m: usize, num_scales: usize, base_width: usize) -> Self {
        DiscriminatorSpec {
            kind: DiscKind::Temporal,
            condition_channels: 0,
            input_channels: 3 * m,
            num_scales,
            base_width,
            patch_output: true,
        }
    }

    pub fn unpaired(pose_channels: usize, num_scales: usize, base_width: usize) -> Self {
        DiscriminatorSpec {
            kind: DiscKind::Unpaired,
            condition_channels: pose_channels,
            input_channels: 3,
            num_scales,
            base_width,
            patch_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DiscKind::Temporal && self.condition_channels != 0 {
            return Err(Error::Config("temporal discriminator takes no condition".into()));
        }
        if self.kind != DiscKind::Temporal && self.condition_channels == 0 {
            return Err(Error::Config(format!(
                "{:?} discriminator requires condition channels",
                self.kind
            )));
        }
        if self.input_channels == 0 || self.base_width == 0 || self.num_scales == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        Ok(())
    }

    fn total_in(&self) -> usize {
        self.condition_channels + self.input_channels
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

fn add_conv(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Conv {
    let w = params.add(&format!("{name}/w"), randn(rng, &[cout, cin, k, k], 0.02));
    let b = params.add(&format!("{name}/b"), ArrayD::zeros(IxDyn(&[cout])));
    Conv { w, b, stride, pad }
}

fn add_norm(params: &mut ParamSet, name: &str, c: usize) -> Norm {
    let gamma = params.add(&format!("{name}/gamma"), ArrayD::from_elem(IxDyn(&[c]), 1.0f32));
    let beta = params.add(&format!("{name}/beta"), ArrayD::zeros(IxDyn(&[c])));
    Norm { gamma, beta }
}

fn lookup(params: &ParamSet, name: &str) -> Result<ParamId> {
    params
        .id_of(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

fn bind_conv(params: &ParamSet, name: &str, stride: usize, pad: usize) -> Result<Conv> {
    Ok(Conv {
        w: lookup(params, &format!("{name}/w"))?,
        b: lookup(params, &format!("{name}/b"))?,
        stride,
        pad,
    })
}

fn bind_norm(params: &ParamSet, name: &str) -> Result<Norm> {
    Ok(Norm {
        gamma: lookup(params, &format!("{name}/gamma"))?,
        beta: lookup(params, &format!("{name}/beta"))?,
    })
}

impl Conv {
    fn forward(&self, g: &mut Graph, params: &ParamSet, x: T, trainable: bool) -> T {
        let w = g.param(params, self.w, trainable);
        let b = g.param(params, self.b, trainable);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

impl Norm {
    fn forward(&self, g: &mut Graph, params: &ParamSet, x: T, trainable: bool) -> T {
        let gamma = g.param(params, self.gamma, trainable);
        let beta = g.param(params, self.beta, trainable);
        g.instance_norm(x, gamma, beta, NORM_EPS)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    c1: Conv,
    n1: Norm,
    c2: Conv,
    n2: Norm,
}

/// Residual encoder-decoder generator. Encoder: 7x7 stem then strided 3x3
/// halvings; middle: residual blocks; decoder: nearest upsample + 3x3
/// (resize-convolution); 7x7 tail into tanh, so outputs live in [-1, 1].
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    head: Conv,
    head_norm: Norm,
    downs: Vec<(Conv, Norm)>,
    blocks: Vec<ResBlock>,
    ups: Vec<(Conv, Norm)>,
    tail: Conv,
}

/// Build a generator, registering parameters under `prefix` in `params`.
pub fn build_generator(
    prefix: &str,
    spec: &GeneratorSpec,
    params: &mut ParamSet,
    rng_seed: u64,
) -> Result<Generator> {
    spec.validate()?;
    let mut rng = seeded_rng(rng_seed);
    let rng = &mut rng;
    let w0 = spec.base_width;
    let head = add_conv(params, rng, &format!("{prefix}/head"), spec.in_channels, w0, 7, 1, 3);
    let head_norm = add_norm(params, &format!("{prefix}/head_norm"), w0);
    let mut downs = Vec::new();
    for i in 0..spec.num_downsamples {
        let cin = spec.width_at(i);
        let cout = spec.width_at(i + 1);
        let c = add_conv(params, rng, &format!("{prefix}/down{i}"), cin, cout, 3, 2, 1);
        let n = add_norm(params, &format!("{prefix}/down{i}_norm"), cout);
        downs.push((c, n));
    }
    let mid = spec.width_at(spec.num_downsamples);
    let mut blocks = Vec::new();
    for i in 0..spec.num_residual_blocks {
        blocks.push(ResBlock {
            c1: add_conv(params, rng, &format!("{prefix}/res{i}a"), mid, mid, 3, 1, 1),
            n1: add_norm(params, &format!("{prefix}/res{i}a_norm"), mid),
            c2: add_conv(params, rng, &format!("{prefix}/res{i}b"), mid, mid, 3, 1, 1),
            n2: add_norm(params, &format!("{prefix}/res{i}b_norm"), mid),
        });
    }
    let mut ups = Vec::new();
    for i in 0..spec.num_downsamples {
        let cin = spec.width_at(spec.num_downsamples - i);
        let cout = spec.width_at(spec.num_downsamples - i - 1);
        let c = add_conv(params, rng, &format!("{prefix}/up{i}"), cin, cout, 3, 1, 1);
        let n = add_norm(params, &format!("{prefix}/up{i}_norm"), cout);
        ups.push((c, n));
    }
    let tail = add_conv(params, rng, &format!("{prefix}/tail"), w0, 3, 7, 1, 3);
    Ok(Generator {
        spec: *spec,
        head,
        head_norm,
        downs,
        blocks,
        ups,
        tail,
    })
}

/// Reattach a generator to parameters already present in `params` (loaded
/// from a checkpoint) by replaying the builder's naming scheme.
pub fn bind_generator(prefix: &str, spec: &GeneratorSpec, params: &ParamSet) -> Result<Generator> {
    spec.validate()?;
    let head = bind_conv(params, &format!("{prefix}/head"), 1, 3)?;
    let head_norm = bind_norm(params, &format!("{prefix}/head_norm"))?;
    let mut downs = Vec::new();
    for i in 0..spec.num_downsamples {
        downs.push((
            bind_conv(params, &format!("{prefix}/down{i}"), 2, 1)?,
            bind_norm(params, &format!("{prefix}/down{i}_norm"))?,
        ));
    }
    let mut blocks = Vec::new();
    for i in 0..spec.num_residual_blocks {
        blocks.push(ResBlock {
            c1: bind_conv(params, &format!("{prefix}/res{i}a"), 1, 1)?,
            n1: bind_norm(params, &format!("{prefix}/res{i}a_norm"))?,
            c2: bind_conv(params, &format!("{prefix}/res{i}b"), 1, 1)?,
            n2: bind_norm(params, &format!("{prefix}/res{i}b_norm"))?,
        });
    }
    let mut ups = Vec::new();
    for i in 0..spec.num_downsamples {
        ups.push((
            bind_conv(params, &format!("{prefix}/up{i}"), 1, 1)?,
            bind_norm(params, &format!("{prefix}/up{i}_norm"))?,
        ));
    }
    let tail = bind_conv(params, &format!("{prefix}/tail"), 1, 3)?;
    Ok(Generator {
        spec: *spec,
        head,
        head_norm,
        downs,
        blocks,
        ups,
        tail,
    })
}

/// Discriminator counterpart of [`bind_generator`].
pub fn bind_discriminator(
    prefix: &str,
    spec: &DiscriminatorSpec,
    params: &ParamSet,
) -> Result<Discriminator> {
    spec.validate()?;
    let mut scales = Vec::new();
    for s in 0..spec.num_scales {
        let strides = [2, 2, 1];
        let has_norm = [false, true, true];
        let mut convs = Vec::new();
        for i in 0..3 {
            let c = bind_conv(params, &format!("{prefix}/s{s}/conv{i}"), strides[i], 1)?;
            let n = if has_norm[i] {
                Some(bind_norm(params, &format!("{prefix}/s{s}/conv{i}_norm"))?)
            } else {
                None
            };
            convs.push((c, n));
        }
        let head = bind_conv(params, &format!("{prefix}/s{s}/head"), 1, 1)?;
        scales.push(DScale { convs, head });
    }
    Ok(Discriminator {
        spec: *spec,
        scales,
    })
}

impl Generator {
    /// Forward a (N, in_channels, H, W) node to (N, 3, H, W) in [-1, 1].
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: T, trainable: bool) -> Result<T> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects (N, {}, h, w), got {shape:?}",
                self.spec.in_channels
            )));
        }
        let mut cur = self.head.forward(g, params, x, trainable);
        cur = self.head_norm.forward(g, params, cur, trainable);
        cur = g.relu(cur);
        for (c, n) in &self.downs {
            cur = c.forward(g, params, cur, trainable);
            cur = n.forward(g, params, cur, trainable);
            cur = g.relu(cur);
        }
        for b in &self.blocks {
            let skip = cur;
            let mut h = b.c1.forward(g, params, cur, trainable);
            h = b.n1.forward(g, params, h, trainable);
            h = g.relu(h);
            h = b.c2.forward(g, params, h, trainable);
            h = b.n2.forward(g, params, h, trainable);
            cur = g.add(skip, h);
        }
        for (c, n) in &self.ups {
            cur = g.upsample_nearest2(cur);
            cur = c.forward(g, params, cur, trainable);
            cur = n.forward(g, params, cur, trainable);
            cur = g.relu(cur);
        }
        let out = self.tail.forward(g, params, cur, trainable);
        Ok(g.tanh(out))
    }

    /// Names of the input-side parameters (the layers that change when
    /// in_channels or resolution-entry shape changes).
    pub fn input_layer_params(&self) -> Vec<ParamId> {
        vec![self.head.w, self.head.b]
    }

    /// The final RGB projection's parameters, reinitialized together with
    /// the input layers at progressive-resolution transitions.
    pub fn output_layer_params(&self) -> Vec<ParamId> {
        vec![self.tail.w, self.tail.b]
    }

    /// Shape of the stem's weight tensor, for growth reinitialization.
    pub fn head_weight_shape(&self) -> Vec<usize> {
        vec![self.spec.base_width, self.spec.in_channels, 7, 7]
    }

    /// Shape of the tail's weight tensor, for growth reinitialization.
    pub fn tail_weight_shape(&self) -> Vec<usize> {
        vec![3, self.spec.base_width, 7, 7]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = vec![
            self.head.w,
            self.head.b,
            self.head_norm.gamma,
            self.head_norm.beta,
        ];
        for (c, n) in &self.downs {
            out.extend([c.w, c.b, n.gamma, n.beta]);
        }
        for b in &self.blocks {
            out.extend([b.c1.w, b.c1.b, b.n1.gamma, b.n1.beta]);
            out.extend([b.c2.w, b.c2.b, b.n2.gamma, b.n2.beta]);
        }
        for (c, n) in &self.ups {
            out.extend([c.w, c.b, n.gamma, n.beta]);
        }
        out.extend([self.tail.w, self.tail.b]);
        out
    }
}

/// One patch-discriminator tower: three feature layers then a 1-channel
/// score head.
#[derive(Debug, Clone)]
struct DScale {
    convs: Vec<(Conv, Option<Norm>)>,
    head: Conv,
}

/// Multi-scale patch discriminator. Scale i consumes the channel-stacked
/// (condition ⊕ input) downsampled i times, so every scale sees the
/// condition. Intermediate leaky-ReLU activations are exposed for feature
/// matching.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    scales: Vec<DScale>,
}

/// Per-scale score maps and feature stacks from one forward pass.
pub struct DiscOutput {
    /// One patch-score map node per scale, raw (no sigmoid).
    pub scores: Vec<T>,
    /// features[scale][layer]: leaky-ReLU activations, shallow to deep.
    pub features: Vec<Vec<T>>,
}

pub fn build_discriminator(
    prefix: &str,
    spec: &DiscriminatorSpec,
    params: &mut ParamSet,
    rng_seed: u64,
) -> Result<Discriminator> {
    spec.validate()?;
    let mut rng = seeded_rng(rng_seed);
    let rng = &mut rng;
    let mut scales = Vec::new();
    for s in 0..spec.num_scales {
        let w0 = spec.base_width;
        let cfg = [
            (spec.total_in(), w0, 2, false),
            (w0, 2 * w0, 2, true),
            (2 * w0, 4 * w0, 1, true),
        ];
        let mut convs = Vec::new();
        for (i, &(cin, cout, stride, norm)) in cfg.iter().enumerate() {
            let c = add_conv(params, rng, &format!("{prefix}/s{s}/conv{i}"), cin, cout, 4, stride, 1);
            let n = norm.then(|| add_norm(params, &format!("{prefix}/s{s}/conv{i}_norm"), cout));
            convs.push((c, n));
        }
        let head = add_conv(params, rng, &format!("{prefix}/s{s}/head"), 4 * w0, 1, 4, 1, 1);
        scales.push(DScale { convs, head });
    }
    Ok(Discriminator {
        spec: *spec,
        scales,
    })
}

impl Discriminator {
    /// Score a (condition, input) pair. `condition` must be `None` exactly
    /// for the temporal kind.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        condition: Option<T>,
        input: T,
        trainable: bool,
    ) -> Result<DiscOutput> {
        match (self.spec.kind, condition.is_some()) {
            (DiscKind::Temporal, true) => {
                return Err(Error::Shape("temporal discriminator takes no condition".into()))
            }
            (DiscKind::Temporal, false) => {}
            (_, false) => {
                return Err(Error::Shape(format!(
                    "{:?} discriminator requires a condition",
                    self.spec.kind
                )))
            }
            (_, true) => {}
        }
        if let Some(c) = condition {
            let cs = g.shape(c)[1];
            if cs != self.spec.condition_channels {
                return Err(Error::Shape(format!(
                    "condition channels {cs} != spec {}",
                    self.spec.condition_channels
                )));
            }
        }
        let ic = g.shape(input)[1];
        if ic != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "input channels {ic} != spec {}",
                self.spec.input_channels
            )));
        }
        let stacked = match condition {
            Some(c) => g.concat_channels(&[c, input]),
            None => input,
        };
        let mut scores = Vec::new();
        let mut features = Vec::new();
        let mut scale_in = stacked;
        for (s, scale) in self.scales.iter().enumerate() {
            if s > 0 {
                scale_in = g.avg_pool2(scale_in);
            }
            let mut cur = scale_in;
            let mut feats = Vec::new();
            for (c, n) in &scale.convs {
                cur = c.forward(g, params, cur, trainable);
                if let Some(n) = n {
                    cur = n.forward(g, params, cur, trainable);
                }
                cur = g.leaky_relu(cur, 0.2);
                feats.push(cur);
            }
            scores.push(scale.head.forward(g, params, cur, trainable));
            features.push(feats);
        }
        Ok(DiscOutput { scores, features })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for scale in &self.scales {
            for (c, n) in &scale.convs {
                out.extend([c.w, c.b]);
                if let Some(n) = n {
                    out.extend([n.gamma, n.beta]);
                }
            }
            out.extend([scale.head.w, scale.head.b]);
        }
        out
    }
}
