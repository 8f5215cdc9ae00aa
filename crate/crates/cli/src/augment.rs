//! Training-time augmentation: photometric jitter on RGB, one shared geometric warp for
//! RGB, events and boxes.

use rand::Rng;
use renet_events::BBox;

use crate::config::AugmentConfig;
use crate::dataset::Sample;

/// Boxes narrower or shorter than this after clipping are dropped.
pub const MIN_BOX_SIDE: f32 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    pub scale: f32,
    /// Shift in pixels, applied after scaling about the image centre.
    pub tx: f32,
    pub ty: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { brightness: 1.0, contrast: 1.0, scale: 1.0, tx: 0.0, ty: 0.0 };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, size: usize, rng: &mut R) -> Self {
        if !cfg.enabled {
            return Self::IDENTITY;
        }
        let jitter = |rng: &mut R, r: f32| if r > 0.0 { rng.gen_range(1.0 - r..=1.0 + r) } else { 1.0 };
        let brightness = jitter(rng, cfg.brightness);
        let contrast = jitter(rng, cfg.contrast);
        let scale = if cfg.scale_max > cfg.scale_min { rng.gen_range(cfg.scale_min..=cfg.scale_max) } else { cfg.scale_min };
        let t = cfg.translate * size as f32;
        let shift = |rng: &mut R| if t > 0.0 { rng.gen_range(-t..=t) } else { 0.0 };
        let tx = shift(rng);
        let ty = shift(rng);
        Self { brightness, contrast, scale, tx, ty }
    }

    /// Output-space offsets of the map `x -> scale * x + offset`.
    fn offsets(&self, size: usize) -> (f32, f32) {
        let c = size as f32 / 2.0 * (1.0 - self.scale);
        (c + self.tx, c + self.ty)
    }

    /// The geometric transform of a box, before clipping.
    pub fn transform_box(&self, b: &BBox, size: usize) -> BBox {
        let (ox, oy) = self.offsets(size);
        let s = self.scale;
        BBox::new(s * b.x1 + ox, s * b.y1 + oy, s * b.x2 + ox, s * b.y2 + oy)
    }

    /// Transformed, clipped, non-degenerate box.
    pub fn apply_box(&self, b: &BBox, size: usize) -> Option<BBox> {
        let c = self.transform_box(b, size).clamp(size as f32, size as f32);
        (c.width() >= MIN_BOX_SIDE && c.height() >= MIN_BOX_SIDE).then_some(c)
    }
}

/// `((v * c + mean * (1 - c)) * b)` per frame, clamped to `[0, 1]`. `rgb` holds whole
/// 3-channel frames.
pub fn photometric(rgb: &mut [f32], plane: usize, brightness: f32, contrast: f32) {
    for frame in rgb.chunks_mut(3 * plane) {
        let mean = frame.iter().map(|&v| v as f64).sum::<f64>() as f32 / frame.len() as f32;
        let shift = mean * (1.0 - contrast);
        for v in frame.iter_mut() {
            *v = ((*v * contrast + shift) * brightness).clamp(0.0, 1.0);
        }
    }
}

/// Resamples `(C, S, S)` planes through the inverse transform, bilinear with zero padding.
pub fn warp(data: &[f32], size: usize, p: &AugmentParams) -> Vec<f32> {
    let plane = size * size;
    let (ox, oy) = p.offsets(size);
    // Source pixel coordinate of output pixel u: (u + 0.5 - offset) / scale - 0.5.
    let src = |u: usize, o: f32| (u as f32 + 0.5 - o) / p.scale - 0.5;
    let taps = |c: f32| -> (isize, f32) {
        let f = c.floor();
        (f as isize, c - f)
    };
    let xs: Vec<(isize, f32)> = (0..size).map(|u| taps(src(u, ox))).collect();
    let mut out = vec![0.0; data.len()];
    for (ch, dst) in out.chunks_mut(plane).enumerate() {
        let sp = &data[ch * plane..(ch + 1) * plane];
        let at = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
                0.0
            } else {
                sp[y as usize * size + x as usize]
            }
        };
        for v in 0..size {
            let (y0, fy) = taps(src(v, oy));
            for (u, &(x0, fx)) in xs.iter().enumerate() {
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                dst[v * size + u] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn augment(sample: &Sample, p: &AugmentParams) -> Sample {
    if *p == AugmentParams::IDENTITY {
        return sample.clone();
    }
    let size = sample.size;
    let mut rgb = warp(&sample.rgb, size, p);
    photometric(&mut rgb, size * size, p.brightness, p.contrast);
    let events = warp(&sample.events, size, p);
    let boxes = sample.boxes.iter().filter_map(|(c, b)| p.apply_box(b, size).map(|b| (*c, b))).collect();
    let distractors = sample.distractors.iter().filter_map(|b| p.apply_box(b, size)).collect();
    Sample { size, rgb, events, boxes, distractors }
}
