//! Bi-directional calibration of RGB and event features at one encoder stage.
//!
//! Order per stage: 1x1 activation of both inputs, mutual enhancement
//! `f'_r = f_r * f_e + f_r` (and symmetrically), channel gating of each side by the other side's
//! channel attention, spatial gating the same way, then a 3x3 merge of
//! `concat(product, maximum)`. Stages after the first add a stride-2 3x3 conv of the previous
//! stage's output.

use rand::Rng;
use renet_nn::layers::{Conv2d, Linear};
use renet_nn::{Graph, NnError, ParamStore, Real, Result, Var};

pub const CA_REDUCTION: usize = 4;
pub const SA_KERNEL: usize = 7;

/// `sigmoid(mlp(avgpool f) + mlp(maxpool f))` with one MLP shared by both descriptors.
#[derive(Debug, Clone, Copy)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        let hidden = (channels / CA_REDUCTION).max(1);
        let fc1 = Linear::new(store, &format!("{name}.fc1"), channels, hidden, false, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), hidden, channels, false, rng);
        Self { fc1, fc2, channels }
    }

    fn mlp<T: Real>(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Var> {
        let h = self.fc1.forward(g, v)?;
        let h = g.relu(h);
        self.fc2.forward(g, h)
    }

    /// Gate of shape `(N, C, 1, 1)`.
    pub fn weights<T: Real>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let n = g.shape(f)[0];
        let avg = g.global_avg_pool(f)?;
        let max = g.global_max_pool(f)?;
        let a = self.mlp(g, avg)?;
        let m = self.mlp(g, max)?;
        let s = g.add(a, m)?;
        let s = g.sigmoid(s);
        g.reshape(s, &[n, self.channels, 1, 1])
    }
}

/// `sigmoid(conv7x7(concat(channel mean, channel max)))`.
#[derive(Debug, Clone, Copy)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        Self { conv: Conv2d::same(store, &format!("{name}.conv"), 2, 1, SA_KERNEL, false, rng) }
    }

    /// Gate of shape `(N, 1, H, W)`.
    pub fn map<T: Real>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let mean = g.channel_mean_map(f)?;
        let max = g.channel_max_map(f)?;
        let both = g.concat(&[mean, max])?;
        let y = self.conv.forward(g, both)?;
        Ok(g.sigmoid(y))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BdcStage {
    pub channels: usize,
    pub act_r: Conv2d,
    pub act_e: Conv2d,
    /// Channel attention computed from each modality; `ca_e` gates the RGB side.
    pub ca: Option<(ChannelAttention, ChannelAttention)>,
    pub sa: Option<(SpatialAttention, SpatialAttention)>,
    pub merge: Conv2d,
    pub hier: Option<Conv2d>,
}

/// Every named intermediate of one stage.
#[derive(Debug, Clone, Copy)]
pub struct BdcTrace {
    pub f_r: Var,
    pub f_e: Var,
    pub enhanced_r: Var,
    pub enhanced_e: Var,
    pub ca_r: Var,
    pub ca_e: Var,
    pub enh_r: Var,
    pub enh_e: Var,
    /// Concatenation fed to the merge conv.
    pub merge_in: Var,
    pub merged: Var,
    /// Stage output after hierarchical integration.
    pub out: Var,
}

impl BdcStage {
    /// `prev_channels` is the channel count of the previous stage output, if there is one.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        prev_channels: Option<usize>,
        ca_enabled: bool,
        sa_enabled: bool,
        rng: &mut R,
    ) -> Self {
        let act_r = Conv2d::same(store, &format!("{name}.act_r"), channels, channels, 1, true, rng);
        let act_e = Conv2d::same(store, &format!("{name}.act_e"), channels, channels, 1, true, rng);
        let ca = ca_enabled.then(|| {
            (
                ChannelAttention::new(store, &format!("{name}.ca_r"), channels, rng),
                ChannelAttention::new(store, &format!("{name}.ca_e"), channels, rng),
            )
        });
        let sa = sa_enabled.then(|| {
            (SpatialAttention::new(store, &format!("{name}.sa_r"), rng), SpatialAttention::new(store, &format!("{name}.sa_e"), rng))
        });
        let merge = Conv2d::same(store, &format!("{name}.merge"), 2 * channels, channels, 3, true, rng);
        let hier = prev_channels.map(|p| Conv2d::new(store, &format!("{name}.hier"), p, channels, 3, 2, 1, true, rng));
        Self { channels, act_r, act_e, ca, sa, merge, hier }
    }

    pub fn activate<T: Real>(&self, g: &mut Graph<'_, T>, rgb: Var, event: Var) -> Result<(Var, Var)> {
        if g.shape(rgb) != g.shape(event) {
            return Err(NnError::ShapeMismatch(format!("bdc inputs {:?} vs {:?}", g.shape(rgb), g.shape(event))));
        }
        Ok((self.act_r.forward(g, rgb)?, self.act_e.forward(g, event)?))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, rgb: Var, event: Var, prev: Option<Var>) -> Result<Var> {
        Ok(self.trace(g, rgb, event, prev)?.out)
    }

    pub fn trace<T: Real>(&self, g: &mut Graph<'_, T>, rgb: Var, event: Var, prev: Option<Var>) -> Result<BdcTrace> {
        let (f_r, f_e) = self.activate(g, rgb, event)?;
        let (enhanced_r, enhanced_e) = mutual_enhance(g, f_r, f_e)?;
        let (ca_r, ca_e) = self.calibrate_channel(g, enhanced_r, enhanced_e)?;
        let (enh_r, enh_e) = self.calibrate_spatial(g, ca_r, ca_e)?;
        let (merge_in, merged, out) = self.fuse(g, enh_r, enh_e, prev)?;
        Ok(BdcTrace { f_r, f_e, enhanced_r, enhanced_e, ca_r, ca_e, enh_r, enh_e, merge_in, merged, out })
    }

    /// Each side gated by the other side's channel weights, plus the residual. Identity when
    /// channel attention is disabled.
    pub fn calibrate_channel<T: Real>(&self, g: &mut Graph<'_, T>, f_r: Var, f_e: Var) -> Result<(Var, Var)> {
        match &self.ca {
            Some((att_r, att_e)) => {
                let w_e = att_e.weights(g, f_e)?;
                let w_r = att_r.weights(g, f_r)?;
                Ok((gate_residual(g, f_r, w_e)?, gate_residual(g, f_e, w_r)?))
            }
            None => Ok((f_r, f_e)),
        }
    }

    /// Spatial counterpart of [`Self::calibrate_channel`].
    pub fn calibrate_spatial<T: Real>(&self, g: &mut Graph<'_, T>, f_r: Var, f_e: Var) -> Result<(Var, Var)> {
        match &self.sa {
            Some((att_r, att_e)) => {
                let m_e = att_e.map(g, f_e)?;
                let m_r = att_r.map(g, f_r)?;
                Ok((gate_residual(g, f_r, m_e)?, gate_residual(g, f_e, m_r)?))
            }
            None => Ok((f_r, f_e)),
        }
    }

    /// Returns `(merge input, merged, output)`.
    pub fn fuse<T: Real>(&self, g: &mut Graph<'_, T>, enh_r: Var, enh_e: Var, prev: Option<Var>) -> Result<(Var, Var, Var)> {
        let prod = g.mul(enh_r, enh_e)?;
        let max = g.maximum(enh_r, enh_e)?;
        let merge_in = g.concat(&[prod, max])?;
        let merged = self.merge.forward(g, merge_in)?;
        let out = hierarchical(g, self.hier, merged, prev)?;
        Ok((merge_in, merged, out))
    }
}

fn hierarchical<T: Real>(g: &mut Graph<'_, T>, hier: Option<Conv2d>, merged: Var, prev: Option<Var>) -> Result<Var> {
    match (hier, prev) {
        (Some(conv), Some(p)) => {
            let h = conv.forward(g, p)?;
            g.add(merged, h)
        }
        (None, None) => Ok(merged),
        _ => Err(NnError::ShapeMismatch("hierarchical input does not match stage position".into())),
    }
}

/// `(f_r * f_e + f_r, f_r * f_e + f_e)`.
pub fn mutual_enhance<T: Real>(g: &mut Graph<'_, T>, f_r: Var, f_e: Var) -> Result<(Var, Var)> {
    let prod = g.mul(f_r, f_e)?;
    Ok((g.add(prod, f_r)?, g.add(prod, f_e)?))
}

/// `x * gate + x`, with the gate broadcast over its size-1 axes.
pub fn gate_residual<T: Real>(g: &mut Graph<'_, T>, x: Var, gate: Var) -> Result<Var> {
    let y = g.mul(x, gate)?;
    g.add(y, x)
}

/// The attention-free baseline: `conv3x3(concat(f_R, f_E))` plus the same hierarchical branch.
#[derive(Debug, Clone, Copy)]
pub struct ConcatConvStage {
    pub merge: Conv2d,
    pub hier: Option<Conv2d>,
}

impl ConcatConvStage {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        prev_channels: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let merge = Conv2d::same(store, &format!("{name}.merge"), 2 * channels, channels, 3, true, rng);
        let hier = prev_channels.map(|p| Conv2d::new(store, &format!("{name}.hier"), p, channels, 3, 2, 1, true, rng));
        Self { merge, hier }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, rgb: Var, event: Var, prev: Option<Var>) -> Result<Var> {
        let both = g.concat(&[rgb, event])?;
        let merged = self.merge.forward(g, both)?;
        hierarchical(g, self.hier, merged, prev)
    }
}
