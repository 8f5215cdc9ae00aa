//! The training loop, checkpoints and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use renet_model::encode_batch_targets;
use renet_model::{Batch, RenetModel};
use renet_nn::checkpoint::save_checkpoint;
use renet_nn::optim::{adam_step, OptimizerState};
use renet_nn::{Graph, Mode, NnError, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentParams};
use crate::config::{text_hash, ModelConfig};
use crate::dataset::{split_dir, Dataset, Sample, TRAIN_SPLIT, VAL_SPLIT};
use crate::error::{CliError, Result};
use crate::evaluate::evaluate_model;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based; the learning-rate decay epochs refer to this index.
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    pub heat_loss: f64,
    pub size_loss: f64,
    pub offset_loss: f64,
    /// Frame mAP@0.5 on the validation split, when there is one.
    pub val_map: Option<f64>,
    /// Relative to the run directory.
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// The effective configuration, every key spelled out.
    pub config: String,
    /// The config file as read, before command-line overrides.
    pub config_source: Option<String>,
    pub overrides: Vec<String>,
    pub train_dir: String,
    pub val_dir: Option<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs: Vec<EpochLog>,
    /// Relative to the run directory.
    pub checkpoints: Vec<String>,
}

impl RunManifest {
    pub fn hash_matches(&self) -> bool {
        text_hash(&self.config) == self.config_hash
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(path, e))
    }

    pub fn final_checkpoint(&self) -> Option<&str> {
        self.checkpoints.last().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Raw config file text, recorded in the manifest.
    pub config_source: Option<String>,
    pub overrides: Vec<String>,
    /// Use at most this many training samples.
    pub max_train: Option<usize>,
    /// Skip per-epoch validation.
    pub no_val: bool,
}

/// Stacks samples into a batch plus their boxes.
pub fn collate(samples: &[Sample], k: usize) -> Result<Batch> {
    let s = samples[0].size;
    let n = samples.len();
    let rgb: Vec<f32> = samples.iter().flat_map(|x| x.rgb.iter().copied()).collect();
    let events: Vec<f32> = samples.iter().flat_map(|x| x.events.iter().copied()).collect();
    Ok(Batch { rgb: Tensor::new(&[n, 3 * k, s, s], rgb)?, events: Tensor::new(&[n, 6, s, s], events)? })
}

/// Model and parameters freshly initialised from the config seed.
pub fn build_model(cfg: &ModelConfig) -> Result<(RenetModel, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = RenetModel::new(&mut store, &cfg.arch(), &mut rng)?;
    Ok((model, store))
}

/// Training data: `data_dir/train` when present, else `data_dir` itself.
pub fn resolve_train_dir(data_dir: &Path) -> PathBuf {
    split_dir(data_dir, TRAIN_SPLIT).unwrap_or_else(|| data_dir.to_path_buf())
}

pub fn train(cfg: &ModelConfig, opts: &TrainOptions, log: &mut dyn FnMut(&str)) -> Result<RunManifest> {
    cfg.validate()?;
    let train_dir = resolve_train_dir(&opts.data_dir);
    let mut data = Dataset::load(&train_dir)?;
    if let Some(n) = opts.max_train {
        data.truncate(n);
    }
    let val_dir = if opts.no_val { None } else { split_dir(&opts.data_dir, VAL_SPLIT) };
    let val = val_dir.as_deref().map(Dataset::load).transpose()?;

    let out = &opts.out_dir;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(CliError::io(&ckpt_dir))?;
    let config = cfg.to_kv_text();
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, &config).map_err(CliError::io(&cfg_path))?;

    let mut manifest = RunManifest {
        config_hash: text_hash(&config),
        config,
        config_source: opts.config_source.clone(),
        overrides: opts.overrides.clone(),
        train_dir: train_dir.display().to_string(),
        val_dir: val_dir.as_ref().map(|d| d.display().to_string()),
        n_train: data.len(),
        n_val: val.as_ref().map_or(0, Dataset::len),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
    };

    let (model, mut store) = build_model(cfg)?;
    let mut opt = OptimizerState::new(&store);
    let schedule = cfg.schedule();
    let (size, k) = (cfg.input_size, cfg.k_frames);
    let grid = model.grid();
    let n_classes = cfg.arch().n_classes;
    log(&format!(
        "training {} on {} samples ({} trainable parameters), config {}",
        cfg.fusion_mode,
        data.len(),
        store.trainable_count(""),
        &manifest.config_hash[..12]
    ));

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut samples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = data.sample(i, size, k)?;
                let p = AugmentParams::sample(&cfg.augment, size, &mut rng);
                samples.push(augment(&s, &p));
            }
            let batch = collate(&samples, k)?;
            let boxes: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
            let targets = encode_batch_targets(&boxes, grid, grid, n_classes);
            store.zero_grad();
            let l = {
                let mut g = Graph::new(&mut store, Mode::Train);
                let (_, l) = model.loss(&mut g, &batch, &targets)?;
                let values = l.values(&g);
                if !values.total.is_finite() {
                    return Err(NnError::NonFiniteLoss(format!("epoch {epoch}, batch {batches}")).into());
                }
                g.backward(l.total)?;
                values
            };
            adam_step(&mut store, &mut opt, lr);
            for (acc, v) in sums.iter_mut().zip([l.total, l.heat, l.size, l.offset]) {
                *acc += v;
            }
            batches += 1;
        }
        let mean = sums.map(|s| s / batches as f64);
        let ckpt_name = format!("checkpoints/epoch_{epoch:03}.renw");
        let ckpt = out.join(&ckpt_name);
        save_checkpoint(&store, &ckpt).map_err(|e| match e {
            NnError::Io(source) => CliError::Io { path: ckpt.clone(), source },
            other => other.into(),
        })?;
        let val_map = match &val {
            Some(v) => Some(evaluate_model(&model, &mut store, cfg, v, 0.5)?.report.map),
            None => None,
        };
        log(&format!(
            "epoch {epoch:>2} of {} lr {lr:.1e} loss {:.4} (heat {:.4} size {:.4} offset {:.4}){}",
            cfg.epochs,
            mean[0],
            mean[1],
            mean[2],
            mean[3],
            val_map.map(|m| format!(" val mAP@0.5 {m:.4}")).unwrap_or_default()
        ));
        manifest.epochs.push(EpochLog {
            epoch,
            lr,
            loss: mean[0],
            heat_loss: mean[1],
            size_loss: mean[2],
            offset_loss: mean[3],
            val_map,
            checkpoint: ckpt_name.clone(),
        });
        manifest.checkpoints.push(ckpt_name);
        write_manifest(&manifest, out)?;
    }
    Ok(manifest)
}

pub fn write_manifest(m: &RunManifest, out: &Path) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(m).expect("manifest serialises");
    fs::write(&path, text).map_err(CliError::io(&path))
}
