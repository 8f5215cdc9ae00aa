use rand::Rng;
use renet_nn::{Graph, NnError, ParamStore, Real, Result, Tensor};

use crate::detector::{compute_loss, Head, HeadVars, LossVars, Targets, STRIDE};
use crate::encoder::{ArchConfig, Encoder, EncoderInputs, StageFeatures};

/// A batch of network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real = f32> {
    /// `(N, 3K, H, W)`.
    pub rgb: Tensor<T>,
    /// `(N, 6, H, W)`: the three event ranges, two polarity channels each, shortest first.
    pub events: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.rgb.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Range `r` as `(N, 2, H, W)`.
    pub fn range(&self, r: usize) -> Tensor<T> {
        let (n, _, h, w) = self.events.dims4().expect("events are 4-D");
        let per = 2 * h * w;
        let d = self.events.data();
        let mut out = Vec::with_capacity(n * per);
        for i in 0..n {
            let base = i * 6 * h * w + r * per;
            out.extend_from_slice(&d[base..base + per]);
        }
        Tensor::new(&[n, 2, h, w], out).expect("range shape")
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch { rgb: self.rgb.cast(), events: self.events.cast() }
    }
}

#[derive(Debug)]
pub struct RenetModel {
    pub arch: ArchConfig,
    pub encoder: Encoder,
    pub head: Head,
}

/// Everything one forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub inputs: EncoderInputs,
    pub features: StageFeatures,
    pub head: HeadVars,
}

impl RenetModel {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(store, arch, rng)?;
        let head = Head::new(store, "head", arch.head_in_channels(), arch.head_channels, arch.n_classes, rng);
        Ok(Self { arch: arch.clone(), encoder, head })
    }

    pub fn grid(&self) -> usize {
        self.arch.input_size / STRIDE
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, batch: &Batch<T>) -> Result<ForwardPass> {
        let (_, c, h, w) = batch.rgb.dims4()?;
        let s = self.arch.input_size;
        if (h, w) != (s, s) || c != 3 * self.arch.k_frames {
            return Err(NnError::ShapeMismatch(format!(
                "rgb batch {:?} does not match input size {s} with {} frames",
                batch.rgb.shape(),
                self.arch.k_frames
            )));
        }
        let (_, ce, he, we) = batch.events.dims4()?;
        if (ce, he, we) != (6, s, s) {
            return Err(NnError::ShapeMismatch(format!("event batch {:?}", batch.events.shape())));
        }
        let rgb = g.input(batch.rgb.clone());
        let ranges = [0, 1, 2].map(|r| g.input(batch.range(r)));
        let inputs = EncoderInputs { rgb, ranges };
        let features = self.encoder.encode(g, inputs)?;
        let head = self.head.forward(g, &features.head)?;
        Ok(ForwardPass { inputs, features, head })
    }

    pub fn loss<T: Real>(&self, g: &mut Graph<'_, T>, batch: &Batch<T>, targets: &Targets<T>) -> Result<(ForwardPass, LossVars)> {
        let pass = self.forward(g, batch)?;
        let loss = compute_loss(g, &pass.head, targets)?;
        Ok((pass, loss))
    }
}
