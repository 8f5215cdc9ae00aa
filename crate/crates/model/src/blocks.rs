use rand::Rng;
use renet_nn::layers::{BatchNorm2d, Conv2d, ConvBnRelu};
use renet_nn::{Graph, ParamStore, Real, Result, Var};

/// Basic two-conv residual block with a strided 1x1 conv + BN shortcut when the shape changes.
#[derive(Debug, Clone, Copy)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng);
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng);
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let conv = Conv2d::new(store, &format!("{name}.down.conv"), cin, cout, 1, stride, 0, false, rng);
            (conv, BatchNorm2d::new(store, &format!("{name}.down.bn"), cout))
        });
        Self { conv1, bn1, conv2, bn2, shortcut }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, x)?;
        let y = self.bn1.forward(g, y)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, y)?;
        let y = self.bn2.forward(g, y)?;
        let s = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, x)?;
                bn.forward(g, s)?
            }
            None => x,
        };
        let sum = g.add(y, s)?;
        Ok(g.relu(sum))
    }
}

/// A run of residual blocks; only the first one may stride.
#[derive(Debug, Clone)]
pub struct ResidualStage {
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        blocks: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|b| {
                let (ci, s) = if b == 0 { (cin, stride) } else { (cout, 1) };
                ResidualBlock::new(store, &format!("{name}.{b}"), ci, cout, s, rng)
            })
            .collect();
        Self { blocks }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, x)?;
        }
        Ok(x)
    }
}

/// Stride-2 conv-BN-relu stem that brings an input to half resolution.
pub fn stem<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut R) -> ConvBnRelu {
    ConvBnRelu::new(store, name, cin, cout, 3, 2, rng)
}
