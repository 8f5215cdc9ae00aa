//! The six-variant ablation matrix.

use std::path::{Path, PathBuf};

use renet_model::{EventMode, FusionMode};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::dataset::{split_dir, VAL_SPLIT};
use crate::error::{CliError, Result};
use crate::evaluate::write_text;
use crate::train::{train, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub row: usize,
    pub name: &'static str,
    pub fusion_mode: FusionMode,
    pub event_mode: EventMode,
    pub ca: bool,
    pub sa: bool,
}

const fn variant(row: usize, name: &'static str, fusion_mode: FusionMode, event_mode: EventMode, ca: bool, sa: bool) -> Variant {
    Variant { row, name, fusion_mode, event_mode, ca, sa }
}

pub const VARIANTS: [Variant; 6] = [
    variant(1, "R-E baseline", FusionMode::ConcatConv, EventMode::Single, false, false),
    variant(2, "+E-TMA", FusionMode::ConcatConv, EventMode::Etma, false, false),
    variant(3, "+E-TMA +CA", FusionMode::Renet, EventMode::Etma, true, false),
    variant(4, "+E-TMA +SA", FusionMode::Renet, EventMode::Etma, false, true),
    variant(5, "CA +SA +Acc.", FusionMode::Renet, EventMode::Accumulate, true, true),
    variant(6, "CA +SA +E-TMA (full)", FusionMode::Renet, EventMode::Etma, true, true),
];

impl Variant {
    pub fn config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            fusion_mode: self.fusion_mode,
            event_mode: self.event_mode,
            ca_enabled: self.ca,
            sa_enabled: self.sa,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub row: usize,
    pub name: String,
    pub fusion_mode: String,
    pub event_mode: String,
    pub ca: bool,
    pub sa: bool,
    pub seeds: Vec<u64>,
    /// Final validation mAP@0.5 per seed.
    pub maps: Vec<f64>,
    pub mean_map: f64,
    pub run_dirs: Vec<String>,
}

/// Trains and evaluates every variant once per seed; run directories are `out/rowN/seedS`.
pub fn ablate(
    base: &ModelConfig,
    data_dir: &Path,
    out_dir: &Path,
    seeds: &[u64],
    log: &mut dyn FnMut(&str),
) -> Result<Vec<AblationRow>> {
    if split_dir(data_dir, VAL_SPLIT).is_none() {
        return Err(CliError::data(data_dir, "ablation needs a `val` split"));
    }
    if seeds.is_empty() {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for v in &VARIANTS {
        let mut maps = Vec::new();
        let mut run_dirs = Vec::new();
        for &seed in seeds {
            let cfg = ModelConfig { seed, ..v.config(base) };
            let dir: PathBuf = out_dir.join(format!("row{}", v.row)).join(format!("seed{seed}"));
            log(&format!("variant {} ({}) seed {seed}", v.row, v.name));
            let opts = TrainOptions { data_dir: data_dir.to_path_buf(), out_dir: dir.clone(), ..Default::default() };
            let manifest = train(&cfg, &opts, log)?;
            maps.push(manifest.epochs.last().and_then(|e| e.val_map).unwrap_or(0.0));
            run_dirs.push(dir.display().to_string());
        }
        rows.push(AblationRow {
            row: v.row,
            name: v.name.to_string(),
            fusion_mode: v.fusion_mode.to_string(),
            event_mode: v.event_mode.to_string(),
            ca: v.ca,
            sa: v.sa,
            seeds: seeds.to_vec(),
            mean_map: maps.iter().sum::<f64>() / maps.len() as f64,
            maps,
            run_dirs,
        });
    }
    write_text(&out_dir.join("ablation.md"), &format_table(&rows))?;
    write_text(&out_dir.join("ablation.json"), &serde_json::to_string_pretty(&rows).expect("rows serialise"))?;
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "" };
    let mut s = String::from("| row | variant | fusion | events | CA | SA | mAP@0.5 per seed | mean |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let per: Vec<String> = r.maps.iter().map(|m| format!("{m:.4}")).collect();
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {:.4} |\n",
            r.row,
            r.name,
            r.fusion_mode,
            r.event_mode,
            mark(r.ca),
            mark(r.sa),
            per.join(" "),
            r.mean_map
        ));
    }
    s
}
