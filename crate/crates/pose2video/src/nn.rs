//! Minimal tape-based reverse-mode autodiff over `f32` tensors.
//!
//! A [`Graph`] is rebuilt for every training step: parameters enter as leaf
//! nodes copied out of a [`ParamSet`], ops record their parents on a tape,
//! and [`Graph::backward`] walks the tape in reverse. Gradients for parent
//! nodes that do not require gradients are skipped entirely, so e.g. a
//! discriminator pass over detached generator output never touches generator
//! weights.
//!
//! The op set is exactly what the networks here need: convolution
//! (im2col + matrix multiply), 2x2 average pooling, 2x nearest-neighbour
//! upsampling, instance normalization, pointwise activations, channel
//! concatenation, and scalar reductions. Reductions and normalization
//! statistics accumulate in `f64` before rounding back to `f32` so losses
//! are stable enough for tight closed-form tests.

use ndarray::{Array1, Array2, Array4, ArrayD, Ix4, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct T(usize);

/// Handle to a parameter in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One trainable tensor plus its Adam state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub m: ArrayD<f32>,
    pub v: ArrayD<f32>,
    /// Number of Adam updates applied to this parameter. Kept per parameter
    /// so re-initialized layers restart their bias correction cleanly.
    pub t: u64,
}

/// Named collection of parameters with Adam optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: ArrayD<f32>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            value,
            m,
            v,
            t: 0,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace a parameter's tensor and reset its optimizer state.
    pub fn reinit(&mut self, id: ParamId, value: ArrayD<f32>) {
        let p = &mut self.params[id.0];
        p.m = ArrayD::zeros(value.raw_dim());
        p.v = ArrayD::zeros(value.raw_dim());
        p.t = 0;
        p.value = value;
    }

    /// One Adam update per listed gradient.
    pub fn adam_step(&mut self, grads: &[(ParamId, ArrayD<f32>)], lr: f32, betas: (f32, f32)) {
        const EPS: f32 = 1e-8;
        let (b1, b2) = betas;
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            assert_eq!(p.value.shape(), g.shape(), "gradient shape mismatch for {}", p.name);
            p.t += 1;
            let bc1 = 1.0 - b1.powi(p.t as i32);
            let bc2 = 1.0 - b2.powi(p.t as i32);
            let (value, m, v) = (&mut p.value, &mut p.m, &mut p.v);
            for ((pv, (mv, vv)), gv) in value
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g.iter())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}

/// Draw a tensor with independent N(0, std^2) entries.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f32) -> ArrayD<f32> {
    let dist = Normal::new(0.0f32, std).expect("std must be finite");
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
}

/// Seeded RNG for parameter init and sampling decisions.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool2 {
        x: usize,
    },
    UpsampleNearest2 {
        x: usize,
    },
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        // Forward statistics cached for backward: per (n, c).
        mean: Array2<f64>,
        istd: Array2<f64>,
    },
    Relu {
        x: usize,
    },
    LeakyRelu {
        x: usize,
        slope: f32,
    },
    Tanh {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Abs {
        x: usize,
    },
    Square {
        x: usize,
    },
    Ln {
        x: usize,
    },
    Clamp {
        x: usize,
        lo: f32,
        hi: f32,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        k: f32,
    },
    AddScalar {
        x: usize,
    },
    ConcatChannels {
        xs: Vec<usize>,
    },
    MeanAll {
        x: usize,
    },
}

struct Node {
    value: ArrayD<f32>,
    op: Op,
    requires_grad: bool,
}

/// The tape. Create nodes through the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Param leaves present in this graph, for gradient readout.
    param_leaves: Vec<(ParamId, usize)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: ArrayD<f32>, op: Op, requires_grad: bool) -> T {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        T(self.nodes.len() - 1)
    }

    /// Constant input: no gradient flows into it.
    pub fn constant(&mut self, value: ArrayD<f32>) -> T {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (used directly in tests; training
    /// code uses [`Graph::param`]).
    pub fn leaf(&mut self, value: ArrayD<f32>) -> T {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a parameter as a leaf. When `trainable` is false the value is
    /// still used but no gradient is computed for it (frozen networks).
    pub fn param(&mut self, params: &ParamSet, id: ParamId, trainable: bool) -> T {
        let t = self.push(params.get(id).value.clone(), Op::Leaf, trainable);
        if trainable {
            self.param_leaves.push((id, t.0));
        }
        t
    }

    /// Copy of a node's value as a fresh constant: gradients stop here.
    pub fn detach(&mut self, x: T) -> T {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, x: T) -> &ArrayD<f32> {
        &self.nodes[x.0].value
    }

    /// Value of a scalar (single-element) node.
    pub fn scalar(&self, x: T) -> f32 {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.iter().next().copied().unwrap()
    }

    pub fn shape(&self, x: T) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    fn requires(&self, x: usize) -> bool {
        self.nodes[x].requires_grad
    }

    // ---- ops ----

    /// 2-D convolution on (N, C, H, W) with square-symmetric zero padding.
    pub fn conv2d(&mut self, x: T, w: T, b: T, stride: usize, pad: usize) -> T {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d input must be 4-D");
        let wv = self.nodes[w.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d weight must be 4-D");
        let bv = &self.nodes[b.0].value;
        let (n, cin, h, win) = xv.dim();
        let (cout, cin_w, kh, kw) = wv.dim();
        assert_eq!(cin, cin_w, "conv2d channel mismatch");
        assert_eq!(bv.len(), cout, "conv2d bias length mismatch");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (win + 2 * pad - kw) / stride + 1;

        let col = im2col(&xv.to_owned(), kh, kw, stride, pad, ho, wo);
        let w_mat = wv
            .to_owned()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let y_mat = w_mat.dot(&col); // (cout, n*ho*wo)

        let mut y = Array4::<f32>::zeros((n, cout, ho, wo));
        for ni in 0..n {
            for co in 0..cout {
                let bias = bv[[co]];
                for yo in 0..ho {
                    for xo in 0..wo {
                        y[[ni, co, yo, xo]] =
                            y_mat[[co, ni * ho * wo + yo * wo + xo]] + bias;
                    }
                }
            }
        }
        let rg = self.requires(x.0) || self.requires(w.0) || self.requires(b.0);
        self.push(
            y.into_dyn(),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
            rg,
        )
    }

    /// 2x2 average pooling with stride 2. Requires even spatial dims.
    pub fn avg_pool2(&mut self, x: T) -> T {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("avg_pool2 input must be 4-D");
        let (n, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::<f32>::zeros((n, c, ho, wo));
        for ni in 0..n {
            for ci in 0..c {
                for yo in 0..ho {
                    for xo in 0..wo {
                        let s = xv[[ni, ci, 2 * yo, 2 * xo]]
                            + xv[[ni, ci, 2 * yo, 2 * xo + 1]]
                            + xv[[ni, ci, 2 * yo + 1, 2 * xo]]
                            + xv[[ni, ci, 2 * yo + 1, 2 * xo + 1]];
                        y[[ni, ci, yo, xo]] = s * 0.25;
                    }
                }
            }
        }
        let rg = self.requires(x.0);
        self.push(y.into_dyn(), Op::AvgPool2 { x: x.0 }, rg)
    }

    /// 2x nearest-neighbour upsampling.
    pub fn upsample_nearest2(&mut self, x: T) -> T {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("upsample input must be 4-D");
        let (n, c, h, w) = xv.dim();
        let mut y = Array4::<f32>::zeros((n, c, 2 * h, 2 * w));
        for ni in 0..n {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        let v = xv[[ni, ci, yi, xi]];
                        y[[ni, ci, 2 * yi, 2 * xi]] = v;
                        y[[ni, ci, 2 * yi, 2 * xi + 1]] = v;
                        y[[ni, ci, 2 * yi + 1, 2 * xi]] = v;
                        y[[ni, ci, 2 * yi + 1, 2 * xi + 1]] = v;
                    }
                }
            }
        }
        let rg = self.requires(x.0);
        self.push(y.into_dyn(), Op::UpsampleNearest2 { x: x.0 }, rg)
    }

    /// Instance normalization over spatial dims with affine (gamma, beta),
    /// both shaped (C). Statistics are accumulated in f64.
    pub fn instance_norm(&mut self, x: T, gamma: T, beta: T, eps: f32) -> T {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("instance_norm input must be 4-D");
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let (n, c, h, w) = xv.dim();
        assert_eq!(gv.len(), c);
        assert_eq!(bv.len(), c);
        let area = (h * w) as f64;
        let mut mean = Array2::<f64>::zeros((n, c));
        let mut istd = Array2::<f64>::zeros((n, c));
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for yi in 0..h {
                    for xi in 0..w {
                        let v = f64::from(xv[[ni, ci, yi, xi]]);
                        s += v;
                        s2 += v * v;
                    }
                }
                let mu = s / area;
                let var = (s2 / area - mu * mu).max(0.0);
                let is = 1.0 / (var + f64::from(eps)).sqrt();
                mean[[ni, ci]] = mu;
                istd[[ni, ci]] = is;
                let g = f64::from(gv[[ci]]);
                let b = f64::from(bv[[ci]]);
                for yi in 0..h {
                    for xi in 0..w {
                        let v = f64::from(xv[[ni, ci, yi, xi]]);
                        y[[ni, ci, yi, xi]] = (g * (v - mu) * is + b) as f32;
                    }
                }
            }
        }
        let rg = self.requires(x.0) || self.requires(gamma.0) || self.requires(beta.0);
        self.push(
            y.into_dyn(),
            Op::InstanceNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                istd,
            },
            rg,
        )
    }

    pub fn relu(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        let rg = self.requires(x.0);
        self.push(y, Op::Relu { x: x.0 }, rg)
    }

    pub fn leaky_relu(&mut self, x: T, slope: f32) -> T {
        let y = self.nodes[x.0]
            .value
            .mapv(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.requires(x.0);
        self.push(y, Op::LeakyRelu { x: x.0, slope }, rg)
    }

    pub fn tanh(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(f32::tanh);
        let rg = self.requires(x.0);
        self.push(y, Op::Tanh { x: x.0 }, rg)
    }

    pub fn sigmoid(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.requires(x.0);
        self.push(y, Op::Sigmoid { x: x.0 }, rg)
    }

    pub fn abs(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(f32::abs);
        let rg = self.requires(x.0);
        self.push(y, Op::Abs { x: x.0 }, rg)
    }

    pub fn square(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(|v| v * v);
        let rg = self.requires(x.0);
        self.push(y, Op::Square { x: x.0 }, rg)
    }

    /// Natural log; inputs must already be positive (clamp first).
    pub fn ln(&mut self, x: T) -> T {
        let y = self.nodes[x.0].value.mapv(f32::ln);
        let rg = self.requires(x.0);
        self.push(y, Op::Ln { x: x.0 }, rg)
    }

    pub fn clamp(&mut self, x: T, lo: f32, hi: f32) -> T {
        let y = self.nodes[x.0].value.mapv(|v| v.clamp(lo, hi));
        let rg = self.requires(x.0);
        self.push(y, Op::Clamp { x: x.0, lo, hi }, rg)
    }

    pub fn add(&mut self, a: T, b: T) -> T {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let y = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(y, Op::Add { a: a.0, b: b.0 }, rg)
    }

    pub fn sub(&mut self, a: T, b: T) -> T {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let y = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.requires(a.0) || self.requires(b.0);
        self.push(y, Op::Sub { a: a.0, b: b.0 }, rg)
    }

    pub fn scale(&mut self, x: T, k: f32) -> T {
        let y = self.nodes[x.0].value.mapv(|v| v * k);
        let rg = self.requires(x.0);
        self.push(y, Op::Scale { x: x.0, k }, rg)
    }

    pub fn add_scalar(&mut self, x: T, k: f32) -> T {
        let y = self.nodes[x.0].value.mapv(|v| v + k);
        let rg = self.requires(x.0);
        self.push(y, Op::AddScalar { x: x.0 }, rg)
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[T]) -> T {
        assert!(!xs.is_empty());
        let views: Vec<_> = xs
            .iter()
            .map(|t| {
                self.nodes[t.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .expect("concat input must be 4-D")
            })
            .collect();
        let y = ndarray::concatenate(
            ndarray::Axis(1),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("concat shapes must agree");
        let rg = xs.iter().any(|t| self.requires(t.0));
        let ids = xs.iter().map(|t| t.0).collect();
        self.push(y.into_dyn(), Op::ConcatChannels { xs: ids }, rg)
    }

    /// Mean over every element, accumulated in f64, returned as a scalar node.
    pub fn mean_all(&mut self, x: T) -> T {
        let v = &self.nodes[x.0].value;
        let total: f64 = v.iter().map(|&e| f64::from(e)).sum();
        let mean = (total / v.len() as f64) as f32;
        let rg = self.requires(x.0);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), mean),
            Op::MeanAll { x: x.0 },
            rg,
        )
    }

    /// Mean absolute difference, a common building block here.
    pub fn mean_abs_diff(&mut self, a: T, b: T) -> T {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    // ---- backward ----

    /// Reverse pass from a scalar node. Returns gradients for every
    /// trainable param leaf in this graph.
    pub fn backward(&mut self, loss: T) -> Vec<(ParamId, ArrayD<f32>)> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<ArrayD<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(self.nodes[loss.0].value.raw_dim(), 1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(gy); // keep for readout
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                    let gy4 = gy.view().into_dimensionality::<Ix4>().unwrap();
                    let (n, cout, ho, wo) = gy4.dim();
                    let xv = self.nodes[x]
                        .value
                        .view()
                        .into_dimensionality::<Ix4>()
                        .unwrap()
                        .to_owned();
                    let wv = self.nodes[w]
                        .value
                        .view()
                        .into_dimensionality::<Ix4>()
                        .unwrap()
                        .to_owned();
                    let (_, cin, h, win) = xv.dim();
                    let (_, _, kh, kw) = wv.dim();

                    let mut gy_mat = Array2::<f32>::zeros((cout, n * ho * wo));
                    for ni in 0..n {
                        for co in 0..cout {
                            for yo in 0..ho {
                                for xo in 0..wo {
                                    gy_mat[[co, ni * ho * wo + yo * wo + xo]] =
                                        gy4[[ni, co, yo, xo]];
                                }
                            }
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let mut db = Array1::<f32>::zeros(cout);
                        for co in 0..cout {
                            let mut s = 0.0f64;
                            for col in 0..n * ho * wo {
                                s += f64::from(gy_mat[[co, col]]);
                            }
                            db[co] = s as f32;
                        }
                        accumulate(&mut grads[b], db.into_dyn());
                    }
                    if self.nodes[w].requires_grad {
                        let col = im2col(&xv, kh, kw, stride, pad, ho, wo);
                        let dw_mat = gy_mat.dot(&col.t()); // (cout, cin*kh*kw)
                        let dw = dw_mat
                            .into_shape_with_order((cout, cin, kh, kw))
                            .unwrap();
                        accumulate(&mut grads[w], dw.into_dyn());
                    }
                    if self.nodes[x].requires_grad {
                        let w_mat = wv
                            .into_shape_with_order((cout, cin * kh * kw))
                            .unwrap();
                        let dcol = w_mat.t().dot(&gy_mat); // (cin*kh*kw, n*ho*wo)
                        let dx = col2im(&dcol, n, cin, h, win, kh, kw, stride, pad, ho, wo);
                        accumulate(&mut grads[x], dx.into_dyn());
                    }
                }
                Op::AvgPool2 { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let gy4 = gy.view().into_dimensionality::<Ix4>().unwrap();
                        let (n, c, ho, wo) = gy4.dim();
                        let mut dx = Array4::<f32>::zeros((n, c, 2 * ho, 2 * wo));
                        for ni in 0..n {
                            for ci in 0..c {
                                for yo in 0..ho {
                                    for xo in 0..wo {
                                        let g = gy4[[ni, ci, yo, xo]] * 0.25;
                                        dx[[ni, ci, 2 * yo, 2 * xo]] += g;
                                        dx[[ni, ci, 2 * yo, 2 * xo + 1]] += g;
                                        dx[[ni, ci, 2 * yo + 1, 2 * xo]] += g;
                                        dx[[ni, ci, 2 * yo + 1, 2 * xo + 1]] += g;
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[x], dx.into_dyn());
                    }
                }
                Op::UpsampleNearest2 { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let gy4 = gy.view().into_dimensionality::<Ix4>().unwrap();
                        let (n, c, ho, wo) = gy4.dim();
                        let (h, w) = (ho / 2, wo / 2);
                        let mut dx = Array4::<f32>::zeros((n, c, h, w));
                        for ni in 0..n {
                            for ci in 0..c {
                                for yi in 0..h {
                                    for xi in 0..w {
                                        dx[[ni, ci, yi, xi]] = gy4[[ni, ci, 2 * yi, 2 * xi]]
                                            + gy4[[ni, ci, 2 * yi, 2 * xi + 1]]
                                            + gy4[[ni, ci, 2 * yi + 1, 2 * xi]]
                                            + gy4[[ni, ci, 2 * yi + 1, 2 * xi + 1]];
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[x], dx.into_dyn());
                    }
                }
                Op::InstanceNorm { x, gamma, beta, mean, istd } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let mean = mean.clone();
                    let istd = istd.clone();
                    let gy4 = gy.view().into_dimensionality::<Ix4>().unwrap();
                    let (n, c, h, w) = gy4.dim();
                    let area = (h * w) as f64;
                    let xv = self.nodes[x]
                        .value
                        .view()
                        .into_dimensionality::<Ix4>()
                        .unwrap()
                        .to_owned();
                    let gv = self.nodes[gamma].value.clone();

                    if self.nodes[beta].requires_grad {
                        let mut db = Array1::<f32>::zeros(c);
                        for ci in 0..c {
                            let mut s = 0.0f64;
                            for ni in 0..n {
                                for yi in 0..h {
                                    for xi in 0..w {
                                        s += f64::from(gy4[[ni, ci, yi, xi]]);
                                    }
                                }
                            }
                            db[ci] = s as f32;
                        }
                        accumulate(&mut grads[beta], db.into_dyn());
                    }
                    if self.nodes[gamma].requires_grad {
                        let mut dg = Array1::<f32>::zeros(c);
                        for ci in 0..c {
                            let mut s = 0.0f64;
                            for ni in 0..n {
                                let (mu, is) = (mean[[ni, ci]], istd[[ni, ci]]);
                                for yi in 0..h {
                                    for xi in 0..w {
                                        let xhat =
                                            (f64::from(xv[[ni, ci, yi, xi]]) - mu) * is;
                                        s += f64::from(gy4[[ni, ci, yi, xi]]) * xhat;
                                    }
                                }
                            }
                            dg[ci] = s as f32;
                        }
                        accumulate(&mut grads[gamma], dg.into_dyn());
                    }
                    if self.nodes[x].requires_grad {
                        let mut dx = Array4::<f32>::zeros((n, c, h, w));
                        for ni in 0..n {
                            for ci in 0..c {
                                let (mu, is) = (mean[[ni, ci]], istd[[ni, ci]]);
                                let g = f64::from(gv[[ci]]);
                                // dxhat = gy * gamma; dx = istd * (dxhat
                                //   - mean(dxhat) - xhat * mean(dxhat * xhat))
                                let mut sum_dxhat = 0.0f64;
                                let mut sum_dxhat_xhat = 0.0f64;
                                for yi in 0..h {
                                    for xi in 0..w {
                                        let xhat =
                                            (f64::from(xv[[ni, ci, yi, xi]]) - mu) * is;
                                        let dxhat = f64::from(gy4[[ni, ci, yi, xi]]) * g;
                                        sum_dxhat += dxhat;
                                        sum_dxhat_xhat += dxhat * xhat;
                                    }
                                }
                                let m_dxhat = sum_dxhat / area;
                                let m_dxhat_xhat = sum_dxhat_xhat / area;
                                for yi in 0..h {
                                    for xi in 0..w {
                                        let xhat =
                                            (f64::from(xv[[ni, ci, yi, xi]]) - mu) * is;
                                        let dxhat = f64::from(gy4[[ni, ci, yi, xi]]) * g;
                                        dx[[ni, ci, yi, xi]] =
                                            (is * (dxhat - m_dxhat - xhat * m_dxhat_xhat))
                                                as f32;
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[x], dx.into_dyn());
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let mask = self.nodes[i].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        accumulate(&mut grads[x], &gy * &mask);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let (x, slope) = (*x, *slope);
                    if self.nodes[x].requires_grad {
                        let mask = self.nodes[x]
                            .value
                            .mapv(|v| if v >= 0.0 { 1.0 } else { slope });
                        accumulate(&mut grads[x], &gy * &mask);
                    }
                }
                Op::Tanh { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[i].value.mapv(|y| 1.0 - y * y);
                        accumulate(&mut grads[x], &gy * &d);
                    }
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[i].value.mapv(|y| y * (1.0 - y));
                        accumulate(&mut grads[x], &gy * &d);
                    }
                }
                Op::Abs { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let s = self.nodes[x].value.mapv(|v| {
                            if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        });
                        accumulate(&mut grads[x], &gy * &s);
                    }
                }
                Op::Square { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[x].value.mapv(|v| 2.0 * v);
                        accumulate(&mut grads[x], &gy * &d);
                    }
                }
                Op::Ln { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[x].value.mapv(|v| 1.0 / v);
                        accumulate(&mut grads[x], &gy * &d);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let (x, lo, hi) = (*x, *lo, *hi);
                    if self.nodes[x].requires_grad {
                        let mask = self.nodes[x]
                            .value
                            .mapv(|v| if v > lo && v < hi { 1.0 } else { 0.0 });
                        accumulate(&mut grads[x], &gy * &mask);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads[a], gy.clone());
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut grads[b], gy.clone());
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads[a], gy.clone());
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut grads[b], gy.mapv(|v| -v));
                    }
                }
                Op::Scale { x, k } => {
                    let (x, k) = (*x, *k);
                    if self.nodes[x].requires_grad {
                        accumulate(&mut grads[x], gy.mapv(|v| v * k));
                    }
                }
                Op::AddScalar { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        accumulate(&mut grads[x], gy.clone());
                    }
                }
                Op::ConcatChannels { xs } => {
                    let xs = xs.clone();
                    let gy4 = gy.view().into_dimensionality::<Ix4>().unwrap();
                    let mut offset = 0usize;
                    for xi in xs {
                        let c = self.nodes[xi].value.shape()[1];
                        if self.nodes[xi].requires_grad {
                            let part = gy4
                                .slice(ndarray::s![.., offset..offset + c, .., ..])
                                .to_owned();
                            accumulate(&mut grads[xi], part.into_dyn());
                        }
                        offset += c;
                    }
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let n = self.nodes[x].value.len() as f32;
                        let g = gy.iter().next().copied().unwrap() / n;
                        let dx = ArrayD::from_elem(self.nodes[x].value.raw_dim(), g);
                        accumulate(&mut grads[x], dx);
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(self.param_leaves.len());
        for &(pid, node) in &self.param_leaves {
            let g = grads[node]
                .take()
                .unwrap_or_else(|| ArrayD::zeros(self.nodes[node].value.raw_dim()));
            out.push((pid, g));
        }
        out
    }
}

fn accumulate(slot: &mut Option<ArrayD<f32>>, g: ArrayD<f32>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Unfold (N, C, H, W) into a (C*kh*kw, N*Ho*Wo) patch matrix.
fn im2col(
    x: &Array4<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut col = Array2::<f32>::zeros((c * kh * kw, n * ho * wo));
    for ni in 0..n {
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    for yo in 0..ho {
                        let yi = yo * stride + ky;
                        if yi < pad || yi >= h + pad {
                            continue;
                        }
                        let yi = yi - pad;
                        let base = ni * ho * wo + yo * wo;
                        for xo in 0..wo {
                            let xi = xo * stride + kx;
                            if xi < pad || xi >= w + pad {
                                continue;
                            }
                            col[[row, base + xo]] = x[[ni, ci, yi, xi - pad]];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a (C*kh*kw, N*Ho*Wo) gradient matrix back onto (N, C, H, W).
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &Array2<f32>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<f32> {
    let mut dx = Array4::<f32>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    for yo in 0..ho {
                        let yi = yo * stride + ky;
                        if yi < pad || yi >= h + pad {
                            continue;
                        }
                        let yi = yi - pad;
                        let base = ni * ho * wo + yo * wo;
                        for xo in 0..wo {
                            let xi = xo * stride + kx;
                            if xi < pad || xi >= w + pad {
                                continue;
                            }
                            dx[[ni, ci, yi, xi - pad]] += dcol[[row, base + xo]];
                        }
                    }
                }
            }
        }
    }
    dx
}
