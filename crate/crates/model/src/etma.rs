//! Temporal multi-scale aggregation of the three event ranges.
//!
//! One shared conv-BN-relu block projects every range; range `i` is max-pooled with kernel
//! `k_i`, the coarser two are upsampled back to the finest pooled grid, and a bare 3x3 conv
//! fuses the channel concatenation.

use rand::Rng;
use renet_nn::layers::{Conv2d, ConvBnRelu};
use renet_nn::{Graph, NnError, ParamStore, Real, Result, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtmaConfig {
    /// Channels of one event range (positive and negative counts).
    pub in_channels: usize,
    pub stem_channels: usize,
    pub kernels: [usize; 3],
}

impl Default for EtmaConfig {
    fn default() -> Self {
        Self { in_channels: 2, stem_channels: 8, kernels: [2, 4, 8] }
    }
}

impl EtmaConfig {
    pub fn validate(&self) -> Result<()> {
        let [k1, k2, k3] = self.kernels;
        if !(k1 >= 1 && k1 < k2 && k2 < k3 && k2 % k1 == 0 && k3 % k1 == 0) {
            return Err(NnError::ShapeMismatch(format!("pooling kernels {:?} must increase and divide", self.kernels)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Etma {
    pub config: EtmaConfig,
    /// The single projection shared by all ranges.
    pub eta: ConvBnRelu,
    pub fuse: Conv2d,
}

/// Every intermediate of one aggregation, in pipeline order.
#[derive(Debug, Clone, Copy)]
pub struct EtmaTrace {
    pub projected: [Var; 3],
    pub pooled: [Var; 3],
    /// `pooled[0]` itself, then the two upsampled coarse ranges.
    pub aligned: [Var; 3],
    pub concat: Var,
    pub out: Var,
}

impl Etma {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, config: EtmaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.stem_channels;
        let eta = ConvBnRelu::new(store, &format!("{name}.eta"), config.in_channels, c, 3, 1, rng);
        let fuse = Conv2d::same(store, &format!("{name}.fuse"), 3 * c, c, 3, true, rng);
        Ok(Self { config, eta, fuse })
    }

    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, frame: Var) -> Result<Var> {
        let c = g.shape(frame)[1];
        if c != self.config.in_channels {
            return Err(NnError::ShapeMismatch(format!("event range has {c} channels, expected {}", self.config.in_channels)));
        }
        self.eta.forward(g, frame)
    }

    /// Max pooling with the kernel of range `i` (0-based).
    pub fn pool_scale<T: Real>(&self, g: &mut Graph<'_, T>, projected: Var, i: usize) -> Result<Var> {
        g.max_pool(projected, self.config.kernels[i])
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ranges: [Var; 3]) -> Result<Var> {
        Ok(self.trace(g, ranges)?.out)
    }

    pub fn trace<T: Real>(&self, g: &mut Graph<'_, T>, ranges: [Var; 3]) -> Result<EtmaTrace> {
        let mut projected = [ranges[0]; 3];
        let mut pooled = [ranges[0]; 3];
        for i in 0..3 {
            projected[i] = self.project(g, ranges[i])?;
            pooled[i] = self.pool_scale(g, projected[i], i)?;
        }
        let k1 = self.config.kernels[0];
        let mut aligned = pooled;
        for i in 1..3 {
            aligned[i] = g.upsample_nearest(pooled[i], self.config.kernels[i] / k1)?;
        }
        let concat = g.concat(&aligned)?;
        let out = self.fuse.forward(g, concat)?;
        Ok(EtmaTrace { projected, pooled, aligned, concat, out })
    }
}
