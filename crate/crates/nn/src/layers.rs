use rand::Rng;

use crate::error::Result;
use crate::graph::{BnParams, Graph, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Kaiming-uniform initialisation for relu networks: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Registers `{name}.weight` (and `{name}.bias` when requested, initialised to zero).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng);
        let weight = store.register(format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable));
        Self { weight, bias, stride, pad }
    }

    /// "Same" convolution: `k x k`, stride 1, padding `k / 2`.
    pub fn same<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, k, 1, k / 2, bias, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn out_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.weight).shape()[0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm2d {
    pub params: BnParams,
}

impl BatchNorm2d {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), Tensor::ones(&[channels]), ParamKind::Trainable);
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable);
        let running_mean =
            store.register(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer);
        let running_var = store.register(format!("{name}.running_var"), Tensor::ones(&[channels]), ParamKind::Buffer);
        Self { params: BnParams { gamma, beta, running_mean, running_var } }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.batch_norm(x, self.params)
    }
}

/// Convolution, batchnorm and relu in sequence.
#[derive(Debug, Clone, Copy)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), cin, cout, k, stride, k / 2, false, rng);
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout);
        Self { conv, bn }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y)?;
        Ok(g.relu(y))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fin: usize,
        fout: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(&[fout, fin], fin, rng);
        let weight = store.register(format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[fout]), ParamKind::Trainable));
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}
