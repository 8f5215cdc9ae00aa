//! Inference overlays, representation dumps and the gradient-check runner.

use std::path::Path;

use renet_events::event_repr::{build_multirange_clamped, frame_to_pgm};
use renet_events::pnm::write_pnm;
use renet_events::{BBox, Image};
use renet_model::detector::{format_detections, DECODE_THRESHOLD};
use renet_model::gradsuite::composite_cases;
use renet_model::Detection;
use renet_nn::gradcheck::GradCheckReport;
use renet_nn::opsuite::{operator_cases, GradCase};

use crate::config::ModelConfig;
use crate::dataset::{Dataset, Sequence};
use crate::error::{AtPath, CliError, Result};
use crate::evaluate::{load_model, predict, write_text};

pub const DETECTION_COLOUR: [u8; 3] = [255, 40, 40];
pub const TRUTH_COLOUR: [u8; 3] = [40, 255, 40];

/// One-pixel outline of `b`, clipped to the image.
pub fn draw_box(img: &mut Image, b: &BBox, colour: [u8; 3]) {
    if img.width == 0 || img.height == 0 {
        return;
    }
    let (w, h) = (img.width as isize, img.height as isize);
    let clampi = |v: f32, hi: isize| (v.round() as isize).clamp(0, hi - 1) as usize;
    let (x1, x2) = (clampi(b.x1, w), clampi(b.x2 - 1.0, w));
    let (y1, y2) = (clampi(b.y1, h), clampi(b.y2 - 1.0, h));
    let mut put = |x: usize, y: usize| {
        for (c, &v) in colour.iter().enumerate().take(img.channels) {
            img.set(x, y, c, v);
        }
    };
    for x in x1..=x2.max(x1) {
        put(x, y1);
        put(x, y2.max(y1));
    }
    for y in y1..=y2.max(y1) {
        put(x1, y);
        put(x2.max(x1), y);
    }
}

fn seq_name(seq: &Sequence) -> String {
    seq.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into())
}

/// Writes `<seq>/detections.csv` and `<seq>/overlay_NNNNN.ppm` (ground truth green, detections
/// above the decode threshold red) for every sequence in `data_dir`. Returns the overlay count.
pub fn infer(cfg: &ModelConfig, checkpoint: &Path, data_dir: &Path, out_dir: &Path) -> Result<usize> {
    let data = Dataset::load(data_dir)?;
    let (model, mut store) = load_model(cfg, checkpoint)?;
    let detections = predict(&model, &mut store, cfg, &data)?;
    let mut written = 0;
    for (s, seq) in data.sequences.iter().enumerate() {
        let dir = out_dir.join(seq_name(seq));
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let (sx, sy) = (seq.stream.width() as f32 / cfg.input_size as f32, seq.stream.height() as f32 / cfg.input_size as f32);
        let mut rows: Vec<(u64, Vec<Detection>)> = Vec::new();
        for (i, &(si, f)) in data.index.iter().enumerate() {
            if si != s {
                continue;
            }
            let reported: Vec<Detection> = detections[i]
                .iter()
                .filter(|d| d.score >= DECODE_THRESHOLD)
                .map(|d| Detection { bbox: BBox::new(d.bbox.x1 * sx, d.bbox.y1 * sy, d.bbox.x2 * sx, d.bbox.y2 * sy), ..*d })
                .collect();
            let mut img = seq.images[f].clone();
            for (_, b) in &seq.boxes[f] {
                draw_box(&mut img, b, TRUTH_COLOUR);
            }
            for d in &reported {
                draw_box(&mut img, &d.bbox, DETECTION_COLOUR);
            }
            let frame_id = seq.frames[f].frame_id;
            let path = dir.join(format!("overlay_{frame_id:05}.ppm"));
            write_pnm(&img, &path).at(&path)?;
            written += 1;
            rows.push((frame_id, reported));
        }
        let csv = format_detections(rows.iter().map(|(id, d)| (*id, d.as_slice())));
        write_text(&dir.join("detections.csv"), &csv)?;
    }
    Ok(written)
}

/// Writes `frame_NNNNN_rangeR.pgm` for each of the three event ranges of the chosen frames
/// (all when `frame` is `None`). Returns the number of images.
pub fn repr_dump(seq_dir: &Path, frame: Option<u64>, out_dir: &Path) -> Result<usize> {
    let seq = Sequence::load(seq_dir)?;
    let chosen: Vec<_> = seq.frames.iter().filter(|f| frame.is_none_or(|id| f.frame_id == id)).collect();
    if chosen.is_empty() {
        return Err(CliError::data(seq_dir, format!("frame {} not in timeline", frame.unwrap_or_default())));
    }
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let mut n = 0;
    for f in chosen {
        let stack = build_multirange_clamped(&seq.stream, f, seq.period).at(seq_dir)?;
        for (r, ef) in stack.frames.iter().enumerate() {
            let path = out_dir.join(format!("frame_{:05}_range{}.pgm", f.frame_id, r + 1));
            write_pnm(&frame_to_pgm(ef), &path).at(&path)?;
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct CaseSummary {
    pub name: &'static str,
    pub seeds: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub below_resolution: usize,
}

impl CaseSummary {
    pub fn pass(&self) -> bool {
        self.passed == self.seeds
    }
}

/// Every operator case followed by every composite case.
pub fn all_cases() -> Vec<GradCase> {
    let mut cases = operator_cases();
    cases.extend(composite_cases());
    cases
}

/// Runs `case` for seeds `0..seeds` at tolerance `tol`.
pub fn run_case(case: &GradCase, seeds: u64, tol: f64) -> Result<CaseSummary> {
    let mut s = CaseSummary {
        name: case.name,
        seeds: seeds as usize,
        passed: 0,
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        below_resolution: 0,
    };
    for seed in 0..seeds {
        let r: GradCheckReport = (case.run)(seed, tol)?;
        s.passed += r.pass as usize;
        s.max_rel_error = s.max_rel_error.max(r.max_rel_error());
        s.checked += r.checked();
        s.excluded += r.excluded();
        s.below_resolution += r.below_resolution();
    }
    Ok(s)
}
