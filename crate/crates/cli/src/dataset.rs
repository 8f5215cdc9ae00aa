//! Synthetic dataset generation and loading of sequences into network-ready samples.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renet_events::event_io::{read_annotations, read_events, read_timeline};
use renet_events::event_repr::{build_multirange_clamped, resize_bilinear};
use renet_events::kv::{format_kv, parse_kv};
use renet_events::pnm::read_pnm;
use renet_events::scenegen::generate_sequence;
use renet_events::{BBox, EventStream, FrameRecord, Illumination, Image, SceneConfig};
use renet_nn::Tensor;

use crate::error::{AtPath, CliError, Result};

pub const TRAIN_SPLIT: &str = "train";
pub const VAL_SPLIT: &str = "val";
pub const NIGHT_SPLIT: &str = "night";

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub night_sequences: usize,
    pub frames_per_sequence: usize,
    pub size: u16,
    pub seed: u64,
}

impl Default for GenOptions {
    fn default() -> Self {
        // 50 x 40 = 2000 training frames
        Self { train_sequences: 50, val_sequences: 10, night_sequences: 10, frames_per_sequence: 40, size: 96, seed: 0 }
    }
}

impl GenOptions {
    pub fn to_kv_text(&self) -> String {
        format_kv([
            ("train_sequences", self.train_sequences.to_string()),
            ("val_sequences", self.val_sequences.to_string()),
            ("night_sequences", self.night_sequences.to_string()),
            ("frames_per_sequence", self.frames_per_sequence.to_string()),
            ("size", self.size.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut o = Self::default();
        let bad = |k: &str, v: &str| CliError::Config(format!("bad value `{v}` for `{k}`"));
        for (k, v) in parse_kv(text).map_err(|e| CliError::Config(e.to_string()))? {
            let n = || v.parse::<usize>().map_err(|_| bad(&k, &v));
            match k.as_str() {
                "train_sequences" => o.train_sequences = n()?,
                "val_sequences" => o.val_sequences = n()?,
                "night_sequences" => o.night_sequences = n()?,
                "frames_per_sequence" => o.frames_per_sequence = n()?,
                "size" => o.size = v.parse().map_err(|_| bad(&k, &v))?,
                "seed" => o.seed = v.parse().map_err(|_| bad(&k, &v))?,
                _ => return Err(CliError::Config(format!("unknown key `{k}`"))),
            }
        }
        Ok(o)
    }

    /// Scene configs of one split. Each sequence draws its own object counts (1-3 moving,
    /// 0-2 static) and scene seed from a stream keyed by the split.
    pub fn split_scenes(&self, split: &str) -> Vec<SceneConfig> {
        let (stream, count, illumination) = match split {
            TRAIN_SPLIT => (1, self.train_sequences, Illumination::Day),
            VAL_SPLIT => (2, self.val_sequences, Illumination::Day),
            _ => (3, self.night_sequences, Illumination::Night),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        (0..count)
            .map(|_| SceneConfig {
                width: self.size,
                height: self.size,
                n_frames: self.frames_per_sequence,
                n_moving: rng.gen_range(1..=3),
                n_static: rng.gen_range(0..=2),
                illumination,
                seed: rng.gen(),
                ..SceneConfig::default()
            })
            .collect()
    }
}

/// Writes `train/`, `val/` and `night/` splits of `seq_NNNN` sequences plus `dataset.cfg`.
pub fn generate_dataset(opts: &GenOptions, out: &Path) -> Result<usize> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let cfg = out.join("dataset.cfg");
    fs::write(&cfg, opts.to_kv_text()).map_err(CliError::io(&cfg))?;
    let mut frames = 0;
    for split in [TRAIN_SPLIT, VAL_SPLIT, NIGHT_SPLIT] {
        for (i, scene) in opts.split_scenes(split).iter().enumerate() {
            let dir = out.join(split).join(format!("seq_{i:04}"));
            generate_sequence(scene, &dir).at(&dir)?;
            frames += scene.n_frames;
        }
    }
    Ok(frames)
}

/// One sequence held in memory; event frames are built on demand from the stream.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub period: u64,
    pub images: Vec<Image>,
    pub stream: EventStream,
    pub boxes: Vec<Vec<(u8, BBox)>>,
    pub distractors: Vec<Vec<BBox>>,
}

impl Sequence {
    pub fn load(dir: &Path) -> Result<Self> {
        let timeline_path = dir.join("timeline.csv");
        let frames = read_timeline(&timeline_path).at(&timeline_path)?;
        if frames.is_empty() {
            return Err(CliError::data(&timeline_path, "timeline has no frames"));
        }
        let events_path = dir.join("events.evt");
        let stream = read_events(&events_path).at(&events_path)?;
        let (w, h) = (stream.width() as usize, stream.height() as usize);
        let mut images = Vec::with_capacity(frames.len());
        for f in &frames {
            let p = dir.join(&f.image_path);
            let img = read_pnm(&p).at(&p)?;
            if (img.width, img.height, img.channels) != (w, h, 3) {
                return Err(CliError::data(
                    &p,
                    format!("expected a {w}x{h} RGB image, found {}x{}x{}", img.width, img.height, img.channels),
                ));
            }
            images.push(img);
        }
        let ann_path = dir.join("annotations.csv");
        let ann = read_annotations(&ann_path).at(&ann_path)?;
        let boxes = frames
            .iter()
            .map(|f| ann.get(&f.frame_id).map(|v| v.iter().map(|a| (a.class_id, a.bbox)).collect()).unwrap_or_default())
            .collect();
        let dis_path = dir.join("distractors.csv");
        let distractors = if dis_path.exists() {
            let d = read_annotations(&dis_path).at(&dis_path)?;
            frames.iter().map(|f| d.get(&f.frame_id).map(|v| v.iter().map(|a| a.bbox).collect()).unwrap_or_default()).collect()
        } else {
            vec![Vec::new(); frames.len()]
        };
        let period = frame_period(dir, &frames)?;
        Ok(Self { dir: dir.to_path_buf(), frames, period, images, stream, boxes, distractors })
    }
}

/// Frame period from `scene.cfg` when present, else the spacing of the first two exposures.
fn frame_period(dir: &Path, frames: &[FrameRecord]) -> Result<u64> {
    let cfg = dir.join("scene.cfg");
    if cfg.exists() {
        let text = fs::read_to_string(&cfg).map_err(CliError::io(&cfg))?;
        return Ok(SceneConfig::from_kv_text(&text).map_err(|e| CliError::data(&cfg, e))?.frame_period_us);
    }
    match frames {
        [a, b, ..] => Ok(b.t_exp_end - a.t_exp_end),
        _ => Err(CliError::data(dir, "cannot infer the frame period from a single frame without scene.cfg")),
    }
}

/// A network-ready sample at the model input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub size: usize,
    /// `(3K, S, S)`, oldest frame first.
    pub rgb: Vec<f32>,
    /// `(6, S, S)`, shortest range first.
    pub events: Vec<f32>,
    pub boxes: Vec<(u8, BBox)>,
    pub distractors: Vec<BBox>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub sequences: Vec<Sequence>,
    /// `(sequence, frame)` of every sample.
    pub index: Vec<(usize, usize)>,
}

fn is_sequence(dir: &Path) -> bool {
    dir.join("timeline.csv").is_file()
}

impl Dataset {
    /// Loads `dir` itself when it is a sequence, otherwise every sequence directly below it.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(CliError::data(dir, "not a directory"));
        }
        let dirs = if is_sequence(dir) {
            vec![dir.to_path_buf()]
        } else {
            let mut v: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(CliError::io(dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_sequence(p))
                .collect();
            v.sort();
            v
        };
        if dirs.is_empty() {
            return Err(CliError::data(dir, "no sequences found"));
        }
        let sequences = dirs.iter().map(|d| Sequence::load(d)).collect::<Result<Vec<_>>>()?;
        let index = sequences.iter().enumerate().flat_map(|(s, seq)| (0..seq.frames.len()).map(move |f| (s, f))).collect();
        Ok(Self { root: dir.to_path_buf(), sequences, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.index.truncate(n);
    }

    /// Sample `i` with `k` stacked frames, resized to `size x size` when the source differs.
    pub fn sample(&self, i: usize, size: usize, k: usize) -> Result<Sample> {
        let (s, f) = self.index[i];
        let seq = &self.sequences[s];
        let (w, h) = (seq.stream.width() as usize, seq.stream.height() as usize);
        let mut rgb = Vec::with_capacity(3 * k * size * size);
        for j in 0..k {
            let idx = (f + j + 1).saturating_sub(k);
            let t = Tensor::new(&[3, h, w], seq.images[idx].to_planar()).expect("image shape");
            rgb.extend_from_slice(resize_bilinear(&t, size, size).data());
        }
        let stack = build_multirange_clamped(&seq.stream, &seq.frames[f], seq.period).at(&seq.dir)?;
        let events = resize_bilinear(&stack.concat(), size, size).into_data();
        let (sx, sy) = (size as f32 / w as f32, size as f32 / h as f32);
        let scale = |b: &BBox| BBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy);
        let boxes = seq.boxes[f].iter().map(|(c, b)| (*c, scale(b))).collect();
        let distractors = seq.distractors[f].iter().map(scale).collect();
        Ok(Sample { size, rgb, events, boxes, distractors })
    }

    pub fn frame_id(&self, i: usize) -> u64 {
        let (s, f) = self.index[i];
        self.sequences[s].frames[f].frame_id
    }
}

/// The directory of split `name` below `data_dir`, if it exists.
pub fn split_dir(data_dir: &Path, name: &str) -> Option<PathBuf> {
    let p = data_dir.join(name);
    p.is_dir().then_some(p)
}
