//! Synthetic RGB + event sequences of rectangles over a fixed background gradient.
//!
//! Moving rectangles bounce off the image borders; static ones never move and are written
//! to a separate distractor file instead of the annotations. Events come from a per-pixel
//! log-intensity threshold model evaluated at `micro_steps` instants per frame period.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::event_io::{
    self, AnnotationBox, Annotations, BBox, Event, EventIoError, EventStream, FrameRecord, Polarity,
};
use crate::kv::{self, KvError};
use crate::pnm::{self, Image, PnmError};

/// Offset inside the logarithm so black pixels stay finite.
pub const LOG_EPS: f32 = 1e-3;
pub const NIGHT_GAIN: f32 = 0.25;
pub const NIGHT_NOISE_FACTOR: f32 = 2.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    EventIo(#[from] EventIoError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Illumination {
    Day,
    Night,
}

impl FromStr for Illumination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "day" => Ok(Self::Day),
            "night" => Ok(Self::Night),
            _ => Err(format!("unknown illumination `{s}`")),
        }
    }
}

impl Illumination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Day => "day",
            Self::Night => "night",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    pub n_frames: usize,
    pub frame_period_us: u64,
    pub exposure_us: u64,
    pub n_moving: usize,
    pub n_static: usize,
    /// Speed range of moving objects, pixels per frame period.
    pub velocity_min: f32,
    pub velocity_max: f32,
    /// Side length range of every rectangle, pixels.
    pub size_min: f32,
    pub size_max: f32,
    pub contrast_threshold: f32,
    pub micro_steps: u32,
    pub noise_std: f32,
    pub illumination: Illumination,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            n_frames: 40,
            frame_period_us: 50_000,
            exposure_us: 10_000,
            n_moving: 1,
            n_static: 1,
            velocity_min: 1.0,
            velocity_max: 3.0,
            size_min: 12.0,
            size_max: 24.0,
            contrast_threshold: 0.15,
            micro_steps: 8,
            noise_std: 0.01,
            illumination: Illumination::Day,
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, SceneError> {
    v.parse().map_err(|_| SceneError::Config(format!("bad value `{v}` for `{key}`")))
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Config(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be positive");
        }
        if self.exposure_us == 0 || self.exposure_us > self.frame_period_us {
            return bad("exposure_us must be in (0, frame_period_us]");
        }
        if self.micro_steps == 0 || self.frame_period_us % self.micro_steps as u64 != 0 {
            return bad("micro_steps must divide frame_period_us");
        }
        if !(1..=3).contains(&self.n_moving) {
            return bad("n_moving must be in [1, 3]");
        }
        if self.n_static > 2 {
            return bad("n_static must be in [0, 2]");
        }
        if !(self.velocity_min > 0.0 && self.velocity_min <= self.velocity_max) {
            return bad("velocity range must be positive and ordered");
        }
        let side = self.width.min(self.height) as f32;
        if !(self.size_min >= 1.0 && self.size_min <= self.size_max && self.size_max < side) {
            return bad("size range must be ordered, at least 1 and smaller than the image");
        }
        if !(self.contrast_threshold > 0.0) {
            return bad("contrast_threshold must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self, SceneError> {
        let mut c = Self::default();
        for (k, v) in kv::parse_kv(text)? {
            match k.as_str() {
                "width" => c.width = parse_value(&k, &v)?,
                "height" => c.height = parse_value(&k, &v)?,
                "n_frames" => c.n_frames = parse_value(&k, &v)?,
                "frame_period_us" => c.frame_period_us = parse_value(&k, &v)?,
                "exposure_us" => c.exposure_us = parse_value(&k, &v)?,
                "n_moving" => c.n_moving = parse_value(&k, &v)?,
                "n_static" => c.n_static = parse_value(&k, &v)?,
                "velocity_min" => c.velocity_min = parse_value(&k, &v)?,
                "velocity_max" => c.velocity_max = parse_value(&k, &v)?,
                "size_min" => c.size_min = parse_value(&k, &v)?,
                "size_max" => c.size_max = parse_value(&k, &v)?,
                "contrast_threshold" => c.contrast_threshold = parse_value(&k, &v)?,
                "micro_steps" => c.micro_steps = parse_value(&k, &v)?,
                "noise_std" => c.noise_std = parse_value(&k, &v)?,
                "illumination" => c.illumination = v.parse().map_err(SceneError::Config)?,
                "seed" => c.seed = parse_value(&k, &v)?,
                _ => return Err(SceneError::Config(format!("unknown key `{k}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_text(&self) -> String {
        kv::format_kv([
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("n_frames", self.n_frames.to_string()),
            ("frame_period_us", self.frame_period_us.to_string()),
            ("exposure_us", self.exposure_us.to_string()),
            ("n_moving", self.n_moving.to_string()),
            ("n_static", self.n_static.to_string()),
            ("velocity_min", self.velocity_min.to_string()),
            ("velocity_max", self.velocity_max.to_string()),
            ("size_min", self.size_min.to_string()),
            ("size_max", self.size_max.to_string()),
            ("contrast_threshold", self.contrast_threshold.to_string()),
            ("micro_steps", self.micro_steps.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("illumination", self.illumination.as_str().to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn duration_us(&self) -> u64 {
        self.n_frames as u64 * self.frame_period_us
    }

    pub fn gain(&self) -> f32 {
        match self.illumination {
            Illumination::Day => 1.0,
            Illumination::Night => NIGHT_GAIN,
        }
    }

    pub fn effective_noise_std(&self) -> f32 {
        match self.illumination {
            Illumination::Day => self.noise_std,
            Illumination::Night => self.noise_std * NIGHT_NOISE_FACTOR,
        }
    }

    /// Exposure interval of frame `k`: it ends at the end of the frame period.
    pub fn frame_record(&self, k: usize) -> FrameRecord {
        let t_exp_end = (k as u64 + 1) * self.frame_period_us;
        FrameRecord {
            frame_id: k as u64,
            t_exp_start: t_exp_end - self.exposure_us,
            t_exp_end,
            image_path: format!("frames/{k:05}.ppm"),
        }
    }

    pub fn mid_exposure(&self, k: usize) -> f64 {
        let f = self.frame_record(k);
        (f.t_exp_start + f.t_exp_end) as f64 * 0.5
    }
}

/// An axis-aligned rectangle with a fixed colour, moving linearly and reflecting off borders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub x0: f32,
    pub y0: f32,
    pub w: f32,
    pub h: f32,
    /// Pixels per frame period; zero for static objects.
    pub vx: f32,
    pub vy: f32,
    pub color: [f32; 3],
}

impl SceneObject {
    pub fn is_moving(&self) -> bool {
        self.vx != 0.0 || self.vy != 0.0
    }

    pub fn luminance(&self) -> f32 {
        (self.color[0] + self.color[1] + self.color[2]) / 3.0
    }

    /// Extent at time `t_us`, always inside a `width x height` image.
    pub fn bbox_at(&self, t_us: f64, frame_period_us: u64, width: u16, height: u16) -> BBox {
        let frames = t_us / frame_period_us as f64;
        let x = reflect(self.x0 as f64 + self.vx as f64 * frames, width as f64 - self.w as f64);
        let y = reflect(self.y0 as f64 + self.vy as f64 * frames, height as f64 - self.h as f64);
        BBox::new(x as f32, y as f32, x as f32 + self.w, y as f32 + self.h)
    }
}

/// Position on a segment `[0, span]` for a point moving freely and bouncing off both ends.
fn reflect(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let u = p.rem_euclid(period);
    if u > span {
        period - u
    } else {
        u
    }
}

/// Background gray level before illumination gain.
pub fn background(x: usize, y: usize, width: u16, height: u16) -> f32 {
    0.2 + 0.15 * (x as f32 + 0.5) / width as f32 + 0.1 * (y as f32 + 0.5) / height as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    /// Static objects first, then moving ones, in compositing order.
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn with_objects(config: SceneConfig, objects: Vec<SceneObject>) -> Self {
        Self { config, objects }
    }

    /// Random layout drawn from `config.seed`.
    pub fn from_config(config: &SceneConfig) -> Result<Self, SceneError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut objects = Vec::with_capacity(config.n_static + config.n_moving);
        for i in 0..config.n_static + config.n_moving {
            let moving = i >= config.n_static;
            let w = rng.gen_range(config.size_min..=config.size_max);
            let h = rng.gen_range(config.size_min..=config.size_max);
            let x0 = rng.gen_range(0.0..=config.width as f32 - w);
            let y0 = rng.gen_range(0.0..=config.height as f32 - h);
            let (vx, vy) = if moving {
                let speed = rng.gen_range(config.velocity_min..=config.velocity_max);
                let angle = rng.gen_range(0.0..std::f32::consts::TAU);
                (speed * angle.cos(), speed * angle.sin())
            } else {
                (0.0, 0.0)
            };
            let level = if rng.gen_bool(0.5) { rng.gen_range(0.65..0.95) } else { rng.gen_range(0.03..0.1) };
            let mut color = [0.0f32; 3];
            for c in &mut color {
                *c = (level * rng.gen_range(0.75f32..1.25)).clamp(0.0, 1.0);
            }
            objects.push(SceneObject { x0, y0, w, h, vx, vy, color });
        }
        Ok(Self { config: config.clone(), objects })
    }

    pub fn moving_boxes_at(&self, t_us: f64) -> Vec<BBox> {
        self.boxes_where(t_us, true)
    }

    pub fn static_boxes_at(&self, t_us: f64) -> Vec<BBox> {
        self.boxes_where(t_us, false)
    }

    fn boxes_where(&self, t_us: f64, moving: bool) -> Vec<BBox> {
        let c = &self.config;
        self.objects
            .iter()
            .filter(|o| o.is_moving() == moving)
            .map(|o| o.bbox_at(t_us, c.frame_period_us, c.width, c.height))
            .collect()
    }

    /// Noise-free planar RGB `(3, H, W)` in `[0, 1]`, objects composited by pixel coverage.
    pub fn render_rgb(&self, t_us: f64) -> Vec<f32> {
        let c = &self.config;
        let (w, h) = (c.width as usize, c.height as usize);
        let plane = w * h;
        let mut img = vec![0.0f32; 3 * plane];
        for y in 0..h {
            for x in 0..w {
                let b = background(x, y, c.width, c.height);
                for ch in 0..3 {
                    img[ch * plane + y * w + x] = b;
                }
            }
        }
        for o in &self.objects {
            let bb = o.bbox_at(t_us, c.frame_period_us, c.width, c.height);
            let (xa, xb) = (bb.x1.floor() as usize, (bb.x2.ceil() as usize).min(w));
            let (ya, yb) = (bb.y1.floor() as usize, (bb.y2.ceil() as usize).min(h));
            for y in ya..yb {
                let cy = overlap(y as f32, bb.y1, bb.y2);
                for x in xa..xb {
                    let a = cy * overlap(x as f32, bb.x1, bb.x2);
                    if a <= 0.0 {
                        continue;
                    }
                    for ch in 0..3 {
                        let p = &mut img[ch * plane + y * w + x];
                        *p = *p * (1.0 - a) + o.color[ch] * a;
                    }
                }
            }
        }
        let gain = c.gain();
        if gain != 1.0 {
            img.iter_mut().for_each(|v| *v *= gain);
        }
        img
    }

    /// Noise-free intensity `(H, W)`: the channel mean of [`render_rgb`](Self::render_rgb).
    pub fn render_intensity(&self, t_us: f64) -> Vec<f32> {
        let rgb = self.render_rgb(t_us);
        let plane = rgb.len() / 3;
        (0..plane).map(|i| (rgb[i] + rgb[plane + i] + rgb[2 * plane + i]) / 3.0).collect()
    }

    /// Threshold-crossing events over the whole sequence.
    ///
    /// Sensor noise is added in the log domain, so it does not grow when the scene darkens.
    pub fn simulate_events(&self) -> EventStream {
        let c = &self.config;
        let (w, h) = (c.width as usize, c.height as usize);
        let sigma = c.effective_noise_std();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(1);
        let log_frame = |intensity: Vec<f32>, rng: &mut ChaCha8Rng| -> Vec<f32> {
            intensity
                .into_iter()
                .map(|v| {
                    let l = (v + LOG_EPS).ln();
                    if sigma > 0.0 {
                        let n: f32 = StandardNormal.sample(rng);
                        l + sigma * n
                    } else {
                        l
                    }
                })
                .collect()
        };
        let mut reference = log_frame(self.render_intensity(0.0), &mut rng);
        let dt = c.frame_period_us / c.micro_steps as u64;
        let steps = c.n_frames as u64 * c.micro_steps as u64;
        let mut events = Vec::new();
        for j in 1..=steps {
            let t = j * dt;
            let now = log_frame(self.render_intensity(t as f64), &mut rng);
            for (i, (r, &l)) in reference.iter_mut().zip(&now).enumerate() {
                let d = l - *r;
                if d.abs() > c.contrast_threshold {
                    let polarity = if d > 0.0 { Polarity::Positive } else { Polarity::Negative };
                    events.push(Event { t, x: (i % w) as u16, y: (i / w) as u16, polarity });
                    *r = l;
                }
            }
        }
        debug_assert!(events.iter().all(|e| (e.y as usize) < h));
        EventStream::new(c.width, c.height, events).expect("simulator emits ordered in-bounds events")
    }

    /// Frame `k` as the camera records it: mid-exposure RGB plus linear read noise.
    pub fn capture_frame(&self, k: usize, rng: &mut ChaCha8Rng) -> Image {
        let c = &self.config;
        let mut rgb = self.render_rgb(c.mid_exposure(k));
        let sigma = c.effective_noise_std();
        if sigma > 0.0 {
            for v in &mut rgb {
                let n: f32 = StandardNormal.sample(rng);
                *v += sigma * n;
            }
        }
        Image::from_planar(c.width as usize, c.height as usize, 3, &rgb)
    }
}

/// Length of `[p, p + 1] ∩ [lo, hi]`.
fn overlap(p: f32, lo: f32, hi: f32) -> f32 {
    ((p + 1.0).min(hi) - p.max(lo)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct GroundTruthSequence {
    pub frames: Vec<FrameRecord>,
    /// Moving objects only.
    pub boxes: Annotations,
    pub distractors: Annotations,
    /// Noise-free mid-exposure intensity of every frame, `(H, W)` row-major.
    pub intensities: Vec<Vec<f32>>,
}

fn annotate(frame_id: u64, boxes: Vec<BBox>) -> Vec<AnnotationBox> {
    boxes.into_iter().map(|bbox| AnnotationBox { frame_id, class_id: 0, bbox }).collect()
}

/// Writes `events.evt`, `timeline.csv`, `annotations.csv`, `distractors.csv`, `scene.cfg`
/// and `frames/NNNNN.ppm` into `out_dir`.
pub fn generate_sequence(config: &SceneConfig, out_dir: &Path) -> Result<GroundTruthSequence, SceneError> {
    let scene = Scene::from_config(config)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SceneError::Io { path, source }
    };
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io(&frames_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut gt = GroundTruthSequence {
        frames: Vec::with_capacity(config.n_frames),
        boxes: Annotations::new(),
        distractors: Annotations::new(),
        intensities: Vec::with_capacity(config.n_frames),
    };
    for k in 0..config.n_frames {
        let record = config.frame_record(k);
        let t = config.mid_exposure(k);
        pnm::write_pnm(&scene.capture_frame(k, &mut rng), &out_dir.join(&record.image_path))?;
        gt.boxes.insert(record.frame_id, annotate(record.frame_id, scene.moving_boxes_at(t)));
        let statics = scene.static_boxes_at(t);
        if !statics.is_empty() {
            gt.distractors.insert(record.frame_id, annotate(record.frame_id, statics));
        }
        gt.intensities.push(scene.render_intensity(t));
        gt.frames.push(record);
    }
    event_io::write_events(&scene.simulate_events(), &out_dir.join("events.evt"))?;
    event_io::write_timeline(&gt.frames, &out_dir.join("timeline.csv"))?;
    event_io::write_annotations(&gt.boxes, &out_dir.join("annotations.csv"))?;
    event_io::write_annotations(&gt.distractors, &out_dir.join("distractors.csv"))?;
    let cfg_path = out_dir.join("scene.cfg");
    fs::write(&cfg_path, config.to_kv_text()).map_err(io(&cfg_path))?;
    Ok(gt)
}
