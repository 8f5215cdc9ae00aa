//! Center-point detection head, its training targets and loss, and box decoding.

use rand::Rng;
use renet_events::BBox;
use renet_nn::layers::{BatchNorm2d, Conv2d, ConvBnRelu};
use renet_nn::{Graph, ParamStore, Real, Result, Tensor, Var};

/// Output stride of the head grid.
pub const STRIDE: usize = 4;
pub const SIZE_WEIGHT: f64 = 0.1;
pub const OFFSET_WEIGHT: f64 = 1.0;
pub const DECODE_THRESHOLD: f32 = 0.3;
pub const DECODE_TOP_K: usize = 50;
/// Prior probability of the heatmap bias, so early training is not swamped by negatives.
pub const HEAT_PRIOR: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct Branch {
    pub conv: Conv2d,
    pub out: Conv2d,
}

impl Branch {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, c: usize, out: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::same(store, &format!("{name}.conv"), c, c, 3, true, rng),
            out: Conv2d::same(store, &format!("{name}.out"), c, out, 1, true, rng),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = g.relu(y);
        self.out.forward(g, y)
    }
}

/// 1x1 conv and batchnorm. The fused features are products of features and can be large, so
/// the head normalises everything it receives.
#[derive(Debug, Clone, Copy)]
pub struct Lateral {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Lateral {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 1, 1, 0, false, rng),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        self.bn.forward(g, y)
    }
}

/// Two `upsample x2 + conv` blocks from stride 16 to stride 4, each joined by a 1x1 lateral
/// from the matching encoder level, then heat, size and offset branches.
#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub up1: ConvBnRelu,
    pub up2: ConvBnRelu,
    pub lat1: Lateral,
    pub lat2: Lateral,
    pub heat: Branch,
    pub size: Branch,
    pub offset: Branch,
}

/// Graph handles of one head evaluation, each `(N, ., H/4, W/4)`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// Post-sigmoid class heatmaps.
    pub heat: Var,
    /// Box `(w, h)` in input pixels.
    pub size: Var,
    /// Sub-cell center offsets `(dx, dy)` in `(0, 1)`.
    pub offset: Var,
}

impl Head {
    /// `in_channels` are the channel counts at strides 4, 8 and 16.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: [usize; 3],
        channels: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        let up1 = ConvBnRelu::new(store, &format!("{name}.up1"), in_channels[2], channels, 3, 1, rng);
        let up2 = ConvBnRelu::new(store, &format!("{name}.up2"), channels, channels, 3, 1, rng);
        let lat1 = Lateral::new(store, &format!("{name}.lat1"), in_channels[1], channels, rng);
        let lat2 = Lateral::new(store, &format!("{name}.lat2"), in_channels[0], channels, rng);
        let heat = Branch::new(store, &format!("{name}.heat"), channels, n_classes, rng);
        let bias = heat.out.bias.expect("heat output has a bias");
        let prior = T::from_f64((HEAT_PRIOR / (1.0 - HEAT_PRIOR)).ln());
        store.get_mut(bias).value.data_mut().iter_mut().for_each(|b| *b = prior);
        let size = Branch::new(store, &format!("{name}.size"), channels, 2, rng);
        let offset = Branch::new(store, &format!("{name}.offset"), channels, 2, rng);
        Self { up1, up2, lat1, lat2, heat, size, offset }
    }

    /// `levels` are the encoder features at strides 4, 8 and 16.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, levels: &[Var]) -> Result<HeadVars> {
        let x = g.upsample_nearest(levels[2], 2)?;
        let x = self.up1.forward(g, x)?;
        let l = self.lat1.forward(g, levels[1])?;
        let x = g.add(x, l)?;
        let x = g.upsample_nearest(x, 2)?;
        let x = self.up2.forward(g, x)?;
        let l = self.lat2.forward(g, levels[0])?;
        let x = g.add(x, l)?;
        let heat = self.heat.forward(g, x)?;
        let heat = g.sigmoid(heat);
        let size = self.size.forward(g, x)?;
        let offset = self.offset.forward(g, x)?;
        let offset = g.sigmoid(offset);
        Ok(HeadVars { heat, size, offset })
    }
}

/// Dense training targets for a batch, on the stride-4 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T: Real = f32> {
    /// `(N, classes, gh, gw)` Gaussian splats, exactly 1 at each center cell.
    pub heat: Tensor<T>,
    /// `(N, 2, gh, gw)`, `(w, h)` at center cells.
    pub size: Tensor<T>,
    /// `(N, 2, gh, gw)`, `(dx, dy)` at center cells.
    pub offset: Tensor<T>,
    /// `(N, 1, gh, gw)`, 1 at center cells.
    pub mask: Tensor<T>,
    pub n_centers: usize,
}

/// Splat radius in grid cells for a box of `w x h` input pixels.
pub fn gaussian_sigma(w: f32, h: f32) -> f32 {
    (w.min(h) / (STRIDE as f32 * 6.0)).max(1.0)
}

/// Targets of one image; `boxes` are `(class_id, box)` in input pixels.
pub fn encode_targets<T: Real>(boxes: &[(u8, BBox)], grid_h: usize, grid_w: usize, n_classes: usize) -> Targets<T> {
    encode_batch_targets(&[boxes.to_vec()], grid_h, grid_w, n_classes)
}

pub fn encode_batch_targets<T: Real>(batch: &[Vec<(u8, BBox)>], grid_h: usize, grid_w: usize, n_classes: usize) -> Targets<T> {
    let n = batch.len();
    let plane = grid_h * grid_w;
    let mut heat = vec![0.0f64; n * n_classes * plane];
    let mut size = vec![T::zero(); n * 2 * plane];
    let mut offset = vec![T::zero(); n * 2 * plane];
    let mut mask = vec![T::zero(); n * plane];
    let mut n_centers = 0;
    for (i, boxes) in batch.iter().enumerate() {
        for &(class, b) in boxes {
            let class = class as usize;
            if class >= n_classes || !b.is_valid() {
                continue;
            }
            let (cx, cy) = b.center();
            let (gx, gy) = (cx / STRIDE as f32, cy / STRIDE as f32);
            let ix = (gx.floor().max(0.0) as usize).min(grid_w - 1);
            let iy = (gy.floor().max(0.0) as usize).min(grid_h - 1);
            let sigma = gaussian_sigma(b.width(), b.height()) as f64;
            let radius = (3.0 * sigma).ceil() as isize;
            let hp = &mut heat[(i * n_classes + class) * plane..(i * n_classes + class + 1) * plane];
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (x, y) = (ix as isize + dx, iy as isize + dy);
                    if x < 0 || y < 0 || x >= grid_w as isize || y >= grid_h as isize {
                        continue;
                    }
                    let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                    let cell = &mut hp[y as usize * grid_w + x as usize];
                    *cell = cell.max(v);
                }
            }
            let c = iy * grid_w + ix;
            if mask[i * plane + c] == T::zero() {
                n_centers += 1;
            }
            mask[i * plane + c] = T::one();
            size[(i * 2) * plane + c] = T::from_f64(b.width() as f64);
            size[(i * 2 + 1) * plane + c] = T::from_f64(b.height() as f64);
            offset[(i * 2) * plane + c] = T::from_f64((gx - ix as f32) as f64);
            offset[(i * 2 + 1) * plane + c] = T::from_f64((gy - iy as f32) as f64);
        }
    }
    Targets {
        heat: Tensor::new(&[n, n_classes, grid_h, grid_w], heat.into_iter().map(T::from_f64).collect())
            .expect("heat shape"),
        size: Tensor::new(&[n, 2, grid_h, grid_w], size).expect("size shape"),
        offset: Tensor::new(&[n, 2, grid_h, grid_w], offset).expect("offset shape"),
        mask: Tensor::new(&[n, 1, grid_h, grid_w], mask).expect("mask shape"),
        n_centers,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub heat: Var,
    pub size: Var,
    pub offset: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub heat: f64,
    pub size: f64,
    pub offset: f64,
}

impl LossVars {
    pub fn values<T: Real>(&self, g: &Graph<'_, T>) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0].as_f64();
        LossBreakdown { total: v(self.total), heat: v(self.heat), size: v(self.size), offset: v(self.offset) }
    }
}

/// `heat + 0.1 * size + 1.0 * offset`; the L1 terms are normalised by the center count.
pub fn compute_loss<T: Real>(g: &mut Graph<'_, T>, out: &HeadVars, targets: &Targets<T>) -> Result<LossVars> {
    let norm = targets.n_centers.max(1) as f64;
    let heat = g.focal_loss(out.heat, &targets.heat)?;
    let size = g.masked_l1(out.size, &targets.size, &targets.mask, norm)?;
    let offset = g.masked_l1(out.offset, &targets.offset, &targets.mask, norm)?;
    let ws = g.scale(size, SIZE_WEIGHT);
    let wo = g.scale(offset, OFFSET_WEIGHT);
    let t = g.add(heat, ws)?;
    let total = g.add(t, wo)?;
    Ok(LossVars { total, heat, size, offset })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u8,
    pub bbox: BBox,
    pub score: f32,
}

/// Head output of one image as plain arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `(classes, gh, gw)`.
    pub heat: Tensor,
    /// `(2, gh, gw)`.
    pub size: Tensor,
    /// `(2, gh, gw)`.
    pub offset: Tensor,
}

impl HeadOutput {
    /// Item `i` of a batched head evaluation.
    pub fn from_batch<T: Real>(g: &Graph<'_, T>, vars: &HeadVars, i: usize) -> Self {
        let take = |v: Var| {
            let t = g.value(v);
            let s = t.shape();
            let data = t.item(i).iter().map(|x| x.as_f64() as f32).collect();
            Tensor::new(&[s[1], s[2], s[3]], data).expect("item shape")
        };
        Self { heat: take(vars.heat), size: take(vars.size), offset: take(vars.offset) }
    }
}

/// Peaks that equal the maximum of their 3x3 neighbourhood (so equal neighbours are all kept)
/// and reach `thresh`; the best `top_k` by score become boxes clamped to the image.
pub fn decode(out: &HeadOutput, top_k: usize, thresh: f32, image_w: f32, image_h: f32) -> Vec<Detection> {
    let s = out.heat.shape();
    let (classes, gh, gw) = (s[0], s[1], s[2]);
    let plane = gh * gw;
    let heat = out.heat.data();
    let mut peaks: Vec<(f32, usize, usize)> = Vec::new();
    for c in 0..classes {
        let hp = &heat[c * plane..(c + 1) * plane];
        for y in 0..gh {
            for x in 0..gw {
                let v = hp[y * gw + x];
                if v < thresh {
                    continue;
                }
                let mut is_peak = true;
                for ny in y.saturating_sub(1)..(y + 2).min(gh) {
                    for nx in x.saturating_sub(1)..(x + 2).min(gw) {
                        if hp[ny * gw + nx] > v {
                            is_peak = false;
                        }
                    }
                }
                if is_peak {
                    peaks.push((v, c, y * gw + x));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    peaks.truncate(top_k);
    let (sz, off) = (out.size.data(), out.offset.data());
    peaks
        .into_iter()
        .filter_map(|(score, c, cell)| {
            let (x, y) = ((cell % gw) as f32, (cell / gw) as f32);
            let cx = (x + off[cell]) * STRIDE as f32;
            let cy = (y + off[plane + cell]) * STRIDE as f32;
            let (w, h) = (sz[cell].max(0.0), sz[plane + cell].max(0.0));
            let bbox = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).clamp(image_w, image_h);
            bbox.is_valid().then_some(Detection { class_id: c as u8, bbox, score })
        })
        .collect()
}

pub const DETECTION_HEADER: &str = "frame_id,class_id,score,x1,y1,x2,y2";

/// Detections as CSV rows `frame_id,class_id,score,x1,y1,x2,y2`.
pub fn format_detections<'a>(frames: impl IntoIterator<Item = (u64, &'a [Detection])>) -> String {
    let mut s = format!("{DETECTION_HEADER}\n");
    for (frame, dets) in frames {
        for d in dets {
            let b = d.bbox;
            s.push_str(&format!("{frame},{},{},{},{},{},{}\n", d.class_id, d.score, b.x1, b.y1, b.x2, b.y2));
        }
    }
    s
}
