//! Inference over a dataset, frame mAP and the metrics report.

use std::fs;
use std::path::{Path, PathBuf};

use renet_events::BBox;
use renet_model::detector::{DECODE_THRESHOLD, DECODE_TOP_K};
use renet_model::{decode, frame_map, iou, Detection, FrameEval, HeadOutput, MapReport, RenetModel};
use renet_nn::checkpoint::load_checkpoint;
use renet_nn::{Graph, Mode, NnError, ParamStore};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::train::{build_model, collate, CONFIG_FILE};

/// Score floor for detections entering the mAP ranking; the ranking itself does the rest.
pub const MAP_SCORE_FLOOR: f32 = 0.05;

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MapReport,
    /// Per sample, every detection above [`MAP_SCORE_FLOOR`].
    pub detections: Vec<Vec<Detection>>,
    /// Share of reported detections (score at least the decode threshold) that sit on a static
    /// distractor rather than a moving object.
    pub distractor_fraction: f64,
    pub n_reported: usize,
}

/// Runs the model in eval mode over every sample of `data`.
pub fn predict(model: &RenetModel, store: &mut ParamStore, cfg: &ModelConfig, data: &Dataset) -> Result<Vec<Vec<Detection>>> {
    let (size, k) = (cfg.input_size, cfg.k_frames);
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(cfg.batch_size) {
        let samples = chunk.iter().map(|&i| data.sample(i, size, k)).collect::<Result<Vec<_>>>()?;
        let batch = collate(&samples, k)?;
        let mut g = Graph::new(store, Mode::Eval);
        let pass = model.forward(&mut g, &batch)?;
        for i in 0..samples.len() {
            let head = HeadOutput::from_batch(&g, &pass.head, i);
            out.push(decode(&head, DECODE_TOP_K, MAP_SCORE_FLOOR, size as f32, size as f32));
        }
    }
    Ok(out)
}

/// Whether a detection overlaps a static distractor (IoU at least 0.5) more than any moving box.
pub fn hits_distractor(d: &Detection, moving: &[(u8, BBox)], distractors: &[BBox]) -> bool {
    let best = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    let on_static = best(&mut distractors.iter().map(|b| iou(&d.bbox, b)));
    let on_moving = best(&mut moving.iter().map(|(_, b)| iou(&d.bbox, b)));
    on_static >= 0.5 && on_static > on_moving
}

pub fn evaluate_model(model: &RenetModel, store: &mut ParamStore, cfg: &ModelConfig, data: &Dataset, tau: f64) -> Result<EvalOutcome> {
    let detections = predict(model, store, cfg, data)?;
    score(cfg, data, detections, tau)
}

/// Metrics of precomputed detections against the dataset's ground truth.
pub fn score(cfg: &ModelConfig, data: &Dataset, detections: Vec<Vec<Detection>>, tau: f64) -> Result<EvalOutcome> {
    let mut frames = Vec::with_capacity(data.len());
    let (mut reported, mut on_static) = (0usize, 0usize);
    for (i, dets) in detections.iter().enumerate() {
        let (s, f) = data.index[i];
        let seq = &data.sequences[s];
        // Ground truth at the model input size, exactly as the samples are built.
        let (sx, sy) = (cfg.input_size as f32 / seq.stream.width() as f32, cfg.input_size as f32 / seq.stream.height() as f32);
        let scale = |b: &BBox| BBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy);
        let gt: Vec<(u8, BBox)> = seq.boxes[f].iter().map(|(c, b)| (*c, scale(b))).collect();
        let statics: Vec<_> = seq.distractors[f].iter().map(scale).collect();
        for d in dets.iter().filter(|d| d.score >= DECODE_THRESHOLD) {
            reported += 1;
            if hits_distractor(d, &gt, &statics) {
                on_static += 1;
            }
        }
        frames.push(FrameEval { detections: dets.clone(), ground_truth: gt });
    }
    let report = frame_map(&frames, tau);
    let distractor_fraction = if reported == 0 { 0.0 } else { on_static as f64 / reported as f64 };
    Ok(EvalOutcome { report, detections, distractor_fraction, n_reported: reported })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class_id: u8,
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub data: String,
    pub checkpoint: String,
    pub config_hash: String,
    pub tau: f64,
    pub map: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n_frames: usize,
    pub n_reported_detections: usize,
    pub distractor_fraction: f64,
}

impl Metrics {
    pub fn new(outcome: &EvalOutcome, data: &Path, checkpoint: &Path, cfg: &ModelConfig, n_frames: usize) -> Self {
        let r = &outcome.report;
        Self {
            data: data.display().to_string(),
            checkpoint: checkpoint.display().to_string(),
            config_hash: cfg.hash(),
            tau: r.threshold,
            map: r.map,
            per_class: r
                .per_class
                .iter()
                .map(|(&class_id, c)| ClassMetrics {
                    class_id,
                    ap: c.ap,
                    n_gt: c.n_gt,
                    n_det: c.n_det,
                    true_positives: c.true_positives,
                })
                .collect(),
            n_frames,
            n_reported_detections: outcome.n_reported,
            distractor_fraction: outcome.distractor_fraction,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}

/// The `config.cfg` next to a checkpoint or in the run directory above its `checkpoints/`.
pub fn find_run_config(checkpoint: &Path) -> Option<PathBuf> {
    let dir = checkpoint.parent()?;
    [dir.join(CONFIG_FILE), dir.parent()?.join(CONFIG_FILE)].into_iter().find(|p| p.is_file())
}

/// Builds the configured model and loads `checkpoint` into it.
pub fn load_model(cfg: &ModelConfig, checkpoint: &Path) -> Result<(RenetModel, ParamStore)> {
    let (model, mut store) = build_model(cfg)?;
    if !checkpoint.is_file() {
        return Err(CliError::data(checkpoint, "checkpoint not found"));
    }
    load_checkpoint(&mut store, checkpoint).map_err(|e| match e {
        NnError::CheckpointMismatch(msg) => CliError::CheckpointMismatch { path: checkpoint.to_path_buf(), msg },
        NnError::Io(source) => CliError::Io { path: checkpoint.to_path_buf(), source },
        other => CliError::data(checkpoint, other),
    })?;
    Ok((model, store))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}
