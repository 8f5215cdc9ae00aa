//! Polarity count frames and the three nested windows attached to each RGB frame.

use renet_nn::Tensor;
use thiserror::Error;

use crate::event_io::{Event, EventStream, FrameRecord, Polarity};
use crate::pnm::Image;

pub const DEFAULT_CLIP: u32 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReprError {
    #[error("frame {frame_id}: window of {length} us reaches before t = 0 (anchor {anchor})")]
    WindowUnderflow { frame_id: u64, anchor: u64, length: u64 },
    #[error("frame period {period} is shorter than twice the exposure {exposure}")]
    PeriodTooShort { period: u64, exposure: u64 },
}

/// Per-polarity counts, `[positive, negative]`, each `H x W` row-major.
pub fn polarity_counts(events: &[Event], height: usize, width: usize) -> [Vec<u32>; 2] {
    let mut pos = vec![0u32; height * width];
    let mut neg = vec![0u32; height * width];
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            continue;
        }
        match e.polarity {
            Polarity::Positive => pos[y * width + x] += 1,
            Polarity::Negative => neg[y * width + x] += 1,
        }
    }
    [pos, neg]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    /// `(2, H, W)`: channel 0 positive, channel 1 negative, each `min(n, clip) / clip`.
    pub data: Tensor,
    pub window: (u64, u64),
}

impl EventFrame {
    /// Number of pixels with any event of either polarity.
    pub fn support(&self) -> usize {
        let plane = self.data.len() / 2;
        let d = self.data.data();
        (0..plane).filter(|&i| d[i] > 0.0 || d[plane + i] > 0.0).count()
    }
}

/// Count frame over `events`; its window is the span of the given events.
pub fn build_event_frame(events: &[Event], height: usize, width: usize, clip: u32) -> EventFrame {
    assert!(clip >= 1, "clip must be at least 1");
    let window = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t, b.t + 1),
        _ => (0, 0),
    };
    let [pos, neg] = polarity_counts(events, height, width);
    let scale = 1.0 / clip as f32;
    let data: Vec<f32> = pos.iter().chain(&neg).map(|&n| n.min(clip) as f32 * scale).collect();
    EventFrame { data: Tensor::new(&[2, height, width], data).expect("2 x H x W"), window }
}

/// Window lengths `(Δ, 2Δ, P)` ending at the exposure end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeSpec {
    pub anchor: u64,
    pub lengths: [u64; 3],
}

impl RangeSpec {
    pub fn new(frame: &FrameRecord, frame_period: u64) -> Result<Self, ReprError> {
        let exposure = frame.exposure();
        if frame_period < 2 * exposure {
            return Err(ReprError::PeriodTooShort { period: frame_period, exposure });
        }
        Ok(Self { anchor: frame.t_exp_end, lengths: [exposure, 2 * exposure, frame_period] })
    }

    /// Half-open windows, with starts clamped at zero.
    pub fn windows(&self) -> [(u64, u64); 3] {
        self.lengths.map(|l| (self.anchor.saturating_sub(l), self.anchor))
    }

    pub fn underflows(&self) -> bool {
        self.lengths.iter().any(|&l| l > self.anchor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRangeStack {
    pub frames: [EventFrame; 3],
    /// Set when the longest window had to be clamped at `t = 0`.
    pub clamped: bool,
}

impl MultiRangeStack {
    /// Channel concatenation `(6, H, W)` of the three ranges.
    pub fn concat(&self) -> Tensor {
        let [a, b, c] = &self.frames;
        let (h, w) = (a.data.shape()[1], a.data.shape()[2]);
        let mut data = Vec::with_capacity(6 * h * w);
        for f in [a, b, c] {
            data.extend_from_slice(f.data.data());
        }
        Tensor::new(&[6, h, w], data).expect("6 x H x W")
    }
}

/// The three ranges of one frame; fails when the longest window would start before `t = 0`.
pub fn build_multirange(stream: &EventStream, frame: &FrameRecord, frame_period: u64) -> Result<MultiRangeStack, ReprError> {
    let spec = RangeSpec::new(frame, frame_period)?;
    if spec.underflows() {
        let length = *spec.lengths.iter().find(|&&l| l > spec.anchor).expect("underflow");
        return Err(ReprError::WindowUnderflow { frame_id: frame.frame_id, anchor: spec.anchor, length });
    }
    Ok(stack_from_spec(stream, &spec))
}

/// Like [`build_multirange`], but clamps underflowing windows at zero and flags the stack.
pub fn build_multirange_clamped(
    stream: &EventStream,
    frame: &FrameRecord,
    frame_period: u64,
) -> Result<MultiRangeStack, ReprError> {
    Ok(stack_from_spec(stream, &RangeSpec::new(frame, frame_period)?))
}

fn stack_from_spec(stream: &EventStream, spec: &RangeSpec) -> MultiRangeStack {
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let frames = spec.windows().map(|(t0, t1)| {
        let mut f = build_event_frame(stream.slice_window(t0, t1), h, w, DEFAULT_CLIP);
        f.window = (t0, t1);
        f
    });
    MultiRangeStack { frames, clamped: spec.underflows() }
}

/// The accumulation alternative to E-TMA: all three ranges stacked as `(6, H, W)`.
pub fn accumulate_mode(stream: &EventStream, frame: &FrameRecord, frame_period: u64) -> Result<Tensor, ReprError> {
    Ok(build_multirange(stream, frame, frame_period)?.concat())
}

/// Bilinear resize of a `(C, H, W)` tensor using pixel-centre alignment.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = t.shape();
    assert_eq!(s.len(), 3, "resize expects (C, H, W)");
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return t.clone();
    }
    let src = t.data();
    let sample = |len: usize, out: usize, i: usize| -> (usize, usize, f32) {
        let p = ((i as f32 + 0.5) * len as f32 / out as f32 - 0.5).clamp(0.0, (len - 1) as f32);
        let lo = p.floor() as usize;
        (lo, (lo + 1).min(len - 1), p - lo as f32)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = sample(h, out_h, oy);
            for ox in 0..out_w {
                let (x0, x1, fx) = sample(w, out_w, ox);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("resized shape")
}

/// Gray heat image of one frame: positive mass minus negative mass, mid-gray at zero.
pub fn frame_to_pgm(frame: &EventFrame) -> Image {
    let (h, w) = (frame.data.shape()[1], frame.data.shape()[2]);
    let d = frame.data.data();
    let plane = h * w;
    let signed: Vec<f32> = (0..plane).map(|i| 0.5 + 0.5 * (d[i] - d[plane + i])).collect();
    Image::from_planar(w, h, 1, &signed)
}
