//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward/backward pass. Every
//! operator appends a node holding its output; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into the store. All reductions run in a fixed loop order, so repeated
//! passes over the same inputs are bitwise identical.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Probability clamp applied by [`Graph::focal_loss`].
pub const FOCAL_CLAMP: f64 = 1e-6;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameter handles of one batchnorm layer.
#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample { x: Var, factor: usize },
    Concat(Vec<Var>),
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    GlobalAvg(Var),
    GlobalMax { x: Var, argmax: Vec<u32> },
    ChannelMean(Var),
    ChannelMax { x: Var, argmax: Vec<u32> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Reshape(Var),
    Sum(Var),
    Scale { x: Var, c: T },
    Focal { pred: Var, coef: Vec<T> },
    MaskedL1 { pred: Var, coef: Vec<T> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Real = f32> {
    store: &'s mut ParamStore<T>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    kink_hash: Option<u64>,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3)
}

fn shape_err(what: &str, detail: String) -> NnError {
    NnError::ShapeMismatch(format!("{what}: {detail}"))
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Self { store, mode, nodes: Vec::new(), bound: HashMap::new(), kink_hash: None }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Start hashing every non-differentiable decision (relu signs, max selections, clamps).
    ///
    /// Two forward passes with equal signatures lie on the same smooth piece of the function,
    /// which is what the finite-difference checker needs to know.
    pub fn track_kinks(&mut self) {
        self.kink_hash = Some(0xcbf2_9ce4_8422_2325);
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kink_hash
    }

    fn kink(&mut self, v: u64) {
        if let Some(h) = self.kink_hash.as_mut() {
            *h = mix(*h, v);
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A data leaf that receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A data leaf whose gradient is kept after backward (used by gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter. Repeated calls return the same node, so a parameter used in
    /// several places accumulates one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let p = self.store.get(id);
        let value = p.value.clone();
        let trainable = p.is_trainable();
        let v = self.push(value, Op::Param(id), trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let wshape = self.value(w).shape().to_vec();
        let [cout, wcin, k, k2] = wshape[..] else {
            return Err(shape_err("conv2d", format!("weight must be 4-D, got {wshape:?}")));
        };
        if wcin != cin || k != k2 || stride == 0 {
            return Err(shape_err("conv2d", format!("input {cin} channels vs weight {wshape:?}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err("conv2d", format!("bias shape {:?}", self.value(b).shape())));
            }
        }
        let geo = ConvGeometry::new(cin, h, wd, k, stride, pad)
            .ok_or_else(|| shape_err("conv2d", format!("{h}x{wd} input, k={k} s={stride} p={pad}")))?;
        let (ho, wo) = (geo.ho, geo.wo);
        let p = ho * wo;
        let kk = cin * k * k;
        let mut out = vec![T::zero(); n * cout * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut cols = Vec::new();
        for i in 0..n {
            let xi = &xv[i * cin * h * wd..(i + 1) * cin * h * wd];
            let oi = &mut out[i * cout * p..(i + 1) * cout * p];
            let src: &[T] = if geo.is_pointwise() {
                xi
            } else {
                cols.resize(kk * p, T::zero());
                geo.im2col(xi, &mut cols);
                &cols
            };
            T::gemm(cout, kk, p, T::one(), wv, kk, 1, src, p, 1, T::zero(), oi);
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for i in 0..n {
                for (c, &bc) in bv.iter().enumerate() {
                    let base = (i * cout + c) * p;
                    out[base..base + p].iter_mut().for_each(|o| *o = *o + bc);
                }
            }
        }
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        let t = Tensor::new(&[n, cout, ho, wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, needs))
    }

    /// Batch normalisation over `(N, H, W)` per channel.
    ///
    /// In [`Mode::Train`] batch statistics normalise the input and the running statistics in the
    /// store are updated with momentum [`BN_MOMENTUM`]; in [`Mode::Eval`] the running statistics
    /// are used as-is.
    pub fn batch_norm(&mut self, x: Var, bn: BnParams) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let gamma = self.param(bn.gamma);
        let beta = self.param(bn.beta);
        for v in [gamma, beta] {
            if self.value(v).shape() != [c] {
                return Err(shape_err("batch_norm", format!("{c} channels vs {:?}", self.value(v).shape())));
            }
        }
        let hw = h * w;
        let m = n * hw;
        let eps = T::from_f64(BN_EPS);
        let batch_stats = self.mode == Mode::Train;
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if batch_stats {
            let mf = T::from_f64(m as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for &v in &xv[base..base + hw] {
                        s = s + v;
                    }
                }
                let mu = s / mf;
                let mut sq = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for &v in &xv[base..base + hw] {
                        let d = v - mu;
                        sq = sq + d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = sq / mf;
            }
            let mom = T::from_f64(BN_MOMENTUM);
            let unbias = if m > 1 { T::from_f64(m as f64 / (m as f64 - 1.0)) } else { T::one() };
            let rm = &mut self.store.get_mut(bn.running_mean).value;
            for (r, &mu) in rm.data_mut().iter_mut().zip(&mean) {
                *r = (T::one() - mom) * *r + mom * mu;
            }
            let rv = &mut self.store.get_mut(bn.running_var).value;
            for (r, &v) in rv.data_mut().iter_mut().zip(&var) {
                *r = (T::one() - mom) * *r + mom * v * unbias;
            }
        } else {
            mean.copy_from_slice(self.store.value(bn.running_mean).data());
            var.copy_from_slice(self.store.value(bn.running_var).data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for j in base..base + hw {
                    let xh = (xv[j] - mu) * is;
                    xhat[j] = xh;
                    out[j] = xh * g + b;
                }
            }
        }
        let needs = self.ng(&[x, gamma, beta]);
        let t = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.map(|v| if v > T::zero() { v } else { T::zero() });
        if self.kink_hash.is_some() {
            let mut h = 0u64;
            for (i, v) in xv.data().iter().enumerate() {
                // The sign pattern, including exact zeros, identifies the smooth piece.
                let s = if *v > T::zero() { 1 } else if *v < T::zero() { 2 } else { 3 };
                h = mix(h, (i as u64) << 2 | s);
            }
            self.kink(h);
        }
        let needs = self.ng(&[x]);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let needs = self.ng(&[x]);
        self.push(out, Op::Sigmoid(x), needs)
    }

    /// Max pooling with a `k x k` window and stride `k`. Ties go to the lowest linear index.
    pub fn max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err("max_pool", format!("{h}x{w} not divisible by {k}")));
        }
        let (ho, wo) = (h / k, w / k);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        let row = base + (oy * k + dy) * w + ox * k;
                        for j in row..row + k {
                            if xv[j] > xv[best] {
                                best = j;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        self.kink_indices(&argmax);
        let needs = self.ng(&[x]);
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, needs))
    }

    fn kink_indices(&mut self, idx: &[u32]) {
        if self.kink_hash.is_some() {
            let h = idx.iter().fold(0u64, |h, &i| mix(h, i as u64));
            self.kink(h);
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if factor == 0 {
            return Err(shape_err("upsample_nearest", "factor 0".into()));
        }
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                let row = base + (oy / factor) * w;
                for ox in 0..wo {
                    out.push(xv[row + ox / factor]);
                }
            }
        }
        let needs = self.ng(&[x]);
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(t, Op::Upsample { x, factor }, needs))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut ctot = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(first), self.shape(v))));
            }
            ctot += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for i in 0..n {
            for &v in xs {
                let t = self.value(v);
                let per = t.len() / n;
                out.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
        }
        let needs = self.ng(xs);
        let t = Tensor::new(&[n, ctot, h, w], out)?;
        Ok(self.push(t, Op::Concat(xs.to_vec()), needs))
    }

    /// `a + b`, with `b` broadcast over any axis where it has extent 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let needs = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    /// `a * b`, with `b` broadcast over any axis where it has extent 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let needs = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, needs))
    }

    /// Element-wise maximum of equally shaped tensors; ties select `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("maximum", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| if x >= y { x } else { y }).collect();
        if self.kink_hash.is_some() {
            let h = av.iter().zip(bv).enumerate().fold(0u64, |h, (i, (x, y))| {
                let s = if x > y { 1 } else if x < y { 2 } else { 3 };
                mix(h, (i as u64) << 2 | s)
            });
            self.kink(h);
        }
        let shape = self.shape(a).to_vec();
        let needs = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Maximum { a, b }, needs))
    }

    fn broadcast_binary(&self, what: &str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let map = BroadcastMap::new(sa, sb).ok_or_else(|| shape_err(what, format!("{sa:?} vs {sb:?}")))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.len());
        if map.same {
            out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        } else {
            map.for_each(|ia, ib| out.push(f(av[ia], bv[ib])));
        }
        Tensor::new(sa, out)
    }

    /// Spatial mean per channel, `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let denom = T::from_f64(hw as f64);
        let xv = self.value(x).data();
        let out: Vec<T> = (0..n * c)
            .map(|p| xv[p * hw..(p + 1) * hw].iter().fold(T::zero(), |s, &v| s + v) / denom)
            .collect();
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n, c, 1, 1], out)?, Op::GlobalAvg(x), needs))
    }

    /// Spatial max per channel, `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let mut best = p * hw;
            for j in p * hw..(p + 1) * hw {
                if xv[j] > xv[best] {
                    best = j;
                }
            }
            out.push(xv[best]);
            argmax.push(best as u32);
        }
        self.kink_indices(&argmax);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n, c, 1, 1], out)?, Op::GlobalMax { x, argmax }, needs))
    }

    /// Mean over channels, `(N, C, H, W) -> (N, 1, H, W)`.
    pub fn channel_mean_map(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let denom = T::from_f64(c as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * hw];
        for i in 0..n {
            let o = &mut out[i * hw..(i + 1) * hw];
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for (oj, &v) in o.iter_mut().zip(&xv[base..base + hw]) {
                    *oj = *oj + v;
                }
            }
            o.iter_mut().for_each(|v| *v = *v / denom);
        }
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n, 1, h, w], out)?, Op::ChannelMean(x), needs))
    }

    /// Max over channels, `(N, C, H, W) -> (N, 1, H, W)`. Ties go to the lowest channel.
    pub fn channel_max_map(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * hw);
        let mut argmax = Vec::with_capacity(n * hw);
        for i in 0..n {
            for j in 0..hw {
                let mut best = i * c * hw + j;
                for ch in 1..c {
                    let idx = (i * c + ch) * hw + j;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best as u32);
            }
        }
        self.kink_indices(&argmax);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n, 1, h, w], out)?, Op::ChannelMax { x, argmax }, needs))
    }

    /// `x W^T + b` with `x` flattened to `(N, in)` and `W` of shape `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let n = xs[0];
        let fin = xs.iter().skip(1).product::<usize>();
        let ws = self.shape(w).to_vec();
        let [fout, wfin] = ws[..] else {
            return Err(shape_err("linear", format!("weight must be 2-D, got {ws:?}")));
        };
        if wfin != fin {
            return Err(shape_err("linear", format!("input features {fin} vs weight {ws:?}")));
        }
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(shape_err("linear", format!("bias {:?}", self.shape(b))));
            }
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(n, fin, fout, T::one(), self.value(x).data(), fin, 1, self.value(w).data(), 1, fin, beta, &mut out);
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        Ok(self.push(Tensor::new(&[n, fout], out)?, Op::Linear { x, w, b }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        let needs = self.ng(&[x]);
        self.push(out, Op::Scale { x, c }, needs)
    }

    /// Penalty-reduced pixel-wise focal loss (`alpha = 2`, `beta = 4`) on probabilities.
    ///
    /// Cells where `target == 1` are peaks. The sum is divided by the number of peaks (at
    /// least 1). Predictions are clamped to `[FOCAL_CLAMP, 1 - FOCAL_CLAMP]` and receive zero
    /// gradient where the clamp is active.
    pub fn focal_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("focal_loss", format!("{:?} vs {:?}", self.shape(pred), target.shape())));
        }
        let lo = T::from_f64(FOCAL_CLAMP);
        let hi = T::one() - lo;
        let one = T::one();
        let two = T::from_f64(2.0);
        let peaks = target.data().iter().filter(|&&y| y == one).count().max(1);
        let inv_n = one / T::from_f64(peaks as f64);
        let pv = self.value(pred).data();
        let mut loss = T::zero();
        let mut coef = Vec::with_capacity(pv.len());
        let mut clamps = 0u64;
        for (i, (&p, &y)) in pv.iter().zip(target.data()).enumerate() {
            let clamped = p < lo || p > hi;
            if clamped {
                clamps = mix(clamps, i as u64);
            }
            let q = p.max(lo).min(hi);
            if y == one {
                let omq = one - q;
                loss = loss - omq * omq * q.ln();
                let d = -(-two * omq * q.ln() + omq * omq / q);
                coef.push(if clamped { T::zero() } else { d * inv_n });
            } else {
                let w = (one - y).powi(4);
                loss = loss - w * q * q * (one - q).ln();
                let d = -w * (two * q * (one - q).ln() - q * q / (one - q));
                coef.push(if clamped { T::zero() } else { d * inv_n });
            }
        }
        self.kink(clamps);
        let loss = loss * inv_n;
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss(format!("focal loss {:?}", loss)));
        }
        let needs = self.ng(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::Focal { pred, coef }, needs))
    }

    /// `sum(mask * |pred - target|) / norm`; `mask` broadcasts over channels.
    pub fn masked_l1(&mut self, pred: Var, target: &Tensor<T>, mask: &Tensor<T>, norm: f64) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps != target.shape() {
            return Err(shape_err("masked_l1", format!("{ps:?} vs {:?}", target.shape())));
        }
        let map = BroadcastMap::new(&ps, mask.shape())
            .ok_or_else(|| shape_err("masked_l1", format!("mask {:?} vs {ps:?}", mask.shape())))?;
        let inv = T::from_f64(1.0 / norm);
        let pv = self.value(pred).data();
        let tv = target.data();
        let mv = mask.data();
        let mut coef = vec![T::zero(); pv.len()];
        let mut loss = T::zero();
        let mut signs = 0u64;
        map.for_each(|ia, ib| {
            let m = mv[ib];
            if m != T::zero() {
                let d = pv[ia] - tv[ia];
                loss = loss + m * d.abs();
                let s = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                signs = mix(signs, (ia as u64) << 2 | if d > T::zero() { 1 } else if d < T::zero() { 2 } else { 3 });
                coef[ia] = m * s * inv;
            }
        });
        self.kink(signs);
        let needs = self.ng(&[pred]);
        Ok(self.push(Tensor::scalar(loss * inv), Op::MaskedL1 { pred, coef }, needs))
    }

    /// Reverse pass from a one-element `loss`. Parameter gradients are added to the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(self.shape(loss)));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if let Some(g) = &self.nodes[idx].grad {
                        let acc = &mut self.store.get_mut(id).grad;
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + v;
                        }
                    }
                }
                _ => {
                    if let Some(gy) = self.nodes[idx].grad.take() {
                        self.backward_node(idx, gy)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&mut self, idx: usize, gy: Tensor<T>) -> Result<()> {
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let res = self.backward_op(&op, idx, gy);
        self.nodes[idx].op = op;
        res
    }

    fn backward_op(&mut self, op: &Op<T>, idx: usize, gy: Tensor<T>) -> Result<()> {
        let g = gy.data();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (n, cin, h, wd) = self.value(*x).dims4()?;
                let wshape = self.shape(*w).to_vec();
                let (cout, k) = (wshape[0], wshape[2]);
                let geo = ConvGeometry::new(cin, h, wd, k, *stride, *pad).expect("validated in forward");
                let p = geo.ho * geo.wo;
                let kk = cin * k * k;
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![T::zero(); cout];
                        for i in 0..n {
                            for (c, acc) in gb.iter_mut().enumerate() {
                                let base = (i * cout + c) * p;
                                *acc = g[base..base + p].iter().fold(*acc, |s, &v| s + v);
                            }
                        }
                        self.accumulate(*b, Tensor::new(&[cout], gb)?);
                    }
                }
                let want_w = self.wants(*w);
                let want_x = self.wants(*x);
                let mut gw = vec![T::zero(); cout * kk];
                let mut gx = if want_x { vec![T::zero(); n * cin * h * wd] } else { Vec::new() };
                let mut cols = Vec::new();
                let mut dcols = Vec::new();
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                for i in 0..n {
                    let gi = &g[i * cout * p..(i + 1) * cout * p];
                    let xi = &xv[i * cin * h * wd..(i + 1) * cin * h * wd];
                    if want_w {
                        let src: &[T] = if geo.is_pointwise() {
                            xi
                        } else {
                            cols.resize(kk * p, T::zero());
                            geo.im2col(xi, &mut cols);
                            &cols
                        };
                        // gw += gy_i (cout x p) * cols^T (p x kk)
                        T::gemm(cout, p, kk, T::one(), gi, p, 1, src, 1, p, T::one(), &mut gw);
                    }
                    if want_x {
                        let gxi = &mut gx[i * cin * h * wd..(i + 1) * cin * h * wd];
                        if geo.is_pointwise() {
                            T::gemm(kk, cout, p, T::one(), wv, 1, kk, gi, p, 1, T::zero(), gxi);
                        } else {
                            dcols.resize(kk * p, T::zero());
                            T::gemm(kk, cout, p, T::one(), wv, 1, kk, gi, p, 1, T::zero(), &mut dcols);
                            geo.col2im(&dcols, gxi);
                        }
                    }
                }
                if want_w {
                    self.accumulate(*w, Tensor::new(&wshape, gw)?);
                }
                if want_x {
                    self.accumulate(*x, Tensor::new(&[n, cin, h, wd], gx)?);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let m = T::from_f64((n * hw) as f64);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        for j in base..base + hw {
                            sum_g[ch] = sum_g[ch] + g[j];
                            sum_gx[ch] = sum_gx[ch] + g[j] * xhat[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let gv = self.value(*gamma).data();
                    let mut gx = vec![T::zero(); g.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * hw;
                            let s = gv[ch] * inv_std[ch];
                            if *batch_stats {
                                let (a, b) = (sum_g[ch] / m, sum_gx[ch] / m);
                                for j in base..base + hw {
                                    gx[j] = s * (g[j] - a - xhat[j] * b);
                                }
                            } else {
                                for j in base..base + hw {
                                    gx[j] = s * g[j];
                                }
                            }
                        }
                    }
                    self.accumulate(*x, Tensor::new(&[n, c, h, w], gx)?);
                }
                self.accumulate(*gamma, Tensor::new(&[c], sum_gx)?);
                self.accumulate(*beta, Tensor::new(&[c], sum_g)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx: Vec<T> = xv.iter().zip(g).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, Tensor::new(&shape, gx)?);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data();
                let gx: Vec<T> = y.iter().zip(g).map(|(&s, &d)| d * s * (T::one() - s)).collect();
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, Tensor::new(&shape, gx)?);
            }
            Op::MaxPool { x, argmax } | Op::GlobalMax { x, argmax } | Op::ChannelMax { x, argmax } => {
                let shape = self.shape(*x).to_vec();
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&a, &d) in argmax.iter().zip(g) {
                    gx[a as usize] = gx[a as usize] + d;
                }
                self.accumulate(*x, Tensor::new(&shape, gx)?);
            }
            Op::Upsample { x, factor } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (ho, wo) = (h * factor, w * factor);
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for oy in 0..ho {
                        let src = plane * ho * wo + oy * wo;
                        let dst = plane * h * w + (oy / factor) * w;
                        for ox in 0..wo {
                            gx[dst + ox / factor] = gx[dst + ox / factor] + g[src + ox];
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&[n, c, h, w], gx)?);
            }
            Op::Concat(xs) => {
                let n = gy.shape()[0];
                let per_out = g.len() / n;
                let mut offset = 0;
                for &v in xs {
                    let shape = self.shape(v).to_vec();
                    let per = self.value(v).len() / n;
                    if self.wants(v) {
                        let mut gx = Vec::with_capacity(per * n);
                        for i in 0..n {
                            let base = i * per_out + offset;
                            gx.extend_from_slice(&g[base..base + per]);
                        }
                        self.accumulate(v, Tensor::new(&shape, gx)?);
                    }
                    offset += per;
                }
            }
            Op::Add { a, b } => {
                let sb = self.shape(*b).to_vec();
                let map = BroadcastMap::new(gy.shape(), &sb).expect("validated in forward");
                if self.wants(*b) {
                    let gb = if map.same {
                        g.to_vec()
                    } else {
                        let mut gb = vec![T::zero(); self.value(*b).len()];
                        map.for_each(|ia, ib| gb[ib] = gb[ib] + g[ia]);
                        gb
                    };
                    self.accumulate(*b, Tensor::new(&sb, gb)?);
                }
                self.accumulate(*a, gy);
            }
            Op::Mul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let map = BroadcastMap::new(&sa, &sb).expect("validated in forward");
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (ga, gb) = if map.same {
                    let ga: Vec<T> = g.iter().zip(bv).map(|(&d, &y)| d * y).collect();
                    let gb: Vec<T> = g.iter().zip(av).map(|(&d, &x)| d * x).collect();
                    (ga, gb)
                } else {
                    let mut ga = vec![T::zero(); av.len()];
                    let mut gb = vec![T::zero(); bv.len()];
                    map.for_each(|ia, ib| {
                        ga[ia] = g[ia] * bv[ib];
                        gb[ib] = gb[ib] + g[ia] * av[ia];
                    });
                    (ga, gb)
                };
                self.accumulate(*a, Tensor::new(&sa, ga)?);
                self.accumulate(*b, Tensor::new(&sb, gb)?);
            }
            Op::Maximum { a, b } => {
                let shape = self.shape(*a).to_vec();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut ga = vec![T::zero(); g.len()];
                let mut gb = vec![T::zero(); g.len()];
                for i in 0..g.len() {
                    if av[i] >= bv[i] {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                self.accumulate(*a, Tensor::new(&shape, ga)?);
                self.accumulate(*b, Tensor::new(&shape, gb)?);
            }
            Op::GlobalAvg(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let inv = T::one() / T::from_f64(hw as f64);
                let mut gx = vec![T::zero(); n * c * hw];
                for p in 0..n * c {
                    let d = g[p] * inv;
                    gx[p * hw..(p + 1) * hw].iter_mut().for_each(|v| *v = d);
                }
                self.accumulate(*x, Tensor::new(&[n, c, h, w], gx)?);
            }
            Op::ChannelMean(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let inv = T::one() / T::from_f64(c as f64);
                let mut gx = vec![T::zero(); n * c * hw];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        for j in 0..hw {
                            gx[base + j] = g[i * hw + j] * inv;
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&[n, c, h, w], gx)?);
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let n = xs[0];
                let (fout, fin) = (ws[0], ws[1]);
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![T::zero(); fout];
                        for row in g.chunks(fout) {
                            for (acc, &d) in gb.iter_mut().zip(row) {
                                *acc = *acc + d;
                            }
                        }
                        self.accumulate(*b, Tensor::new(&[fout], gb)?);
                    }
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); fout * fin];
                    // gw = g^T (fout x n) * x (n x fin)
                    T::gemm(fout, n, fin, T::one(), g, 1, fout, self.value(*x).data(), fin, 1, T::zero(), &mut gw);
                    self.accumulate(*w, Tensor::new(&ws, gw)?);
                }
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, T::one(), g, fout, 1, self.value(*w).data(), fin, 1, T::zero(), &mut gx);
                    self.accumulate(*x, Tensor::new(&xs, gx)?);
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, gy.reshape(&shape)?);
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, Tensor::full(&shape, g[0]));
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(*x, gy.map(|v| v * c));
            }
            Op::Focal { pred, coef } | Op::MaskedL1 { pred, coef } => {
                let shape = self.shape(*pred).to_vec();
                let d = g[0];
                self.accumulate(*pred, Tensor::new(&shape, coef.iter().map(|&c| c * d).collect())?);
            }
        }
        Ok(())
    }
}

/// Convolution geometry for one image, with im2col/col2im transforms.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self { cin, h, w, k, stride, pad, ho, wo })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source column range `[lo, hi)` of output columns whose input column is in bounds.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_ox(kx);
                    for oy in 0..self.ho {
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        out[..lo].iter_mut().for_each(|v| *v = T::zero());
                        out[hi..].iter_mut().for_each(|v| *v = T::zero());
                        if self.stride == 1 {
                            let ix0 = lo + kx - self.pad;
                            out[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                        } else {
                            for (ox, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                                *o = src[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let p = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let srcrow = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_ox(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src = &srcrow[oy * self.wo..(oy + 1) * self.wo];
                        for ox in lo..hi {
                            let ix = ox * self.stride + kx - self.pad;
                            dst[ix] = dst[ix] + src[ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Index mapping from a full shape `a` to a broadcast operand `b` of equal rank.
struct BroadcastMap {
    dims: [usize; 4],
    bstrides: [usize; 4],
    same: bool,
}

impl BroadcastMap {
    fn new(sa: &[usize], sb: &[usize]) -> Option<Self> {
        if sa.len() != sb.len() || sa.len() > 4 {
            return None;
        }
        let same = sa == sb;
        let off = 4 - sa.len();
        let mut dims = [1usize; 4];
        let mut bdims = [1usize; 4];
        for i in 0..sa.len() {
            if sb[i] != sa[i] && sb[i] != 1 {
                return None;
            }
            dims[off + i] = sa[i];
            bdims[off + i] = sb[i];
        }
        let mut bstrides = [0usize; 4];
        let mut acc = 1;
        for i in (0..4).rev() {
            bstrides[i] = if bdims[i] == 1 { 0 } else { acc };
            acc *= bdims[i];
        }
        Some(Self { dims, bstrides, same })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let [d0, d1, d2, d3] = self.dims;
        let [s0, s1, s2, s3] = self.bstrides;
        let mut ia = 0;
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                for i2 in 0..d2 {
                    let base = i0 * s0 + i1 * s1 + i2 * s2;
                    for i3 in 0..d3 {
                        f(ia, base + i3 * s3);
                        ia += 1;
                    }
                }
            }
        }
    }
}
