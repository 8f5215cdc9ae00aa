//! Model and training configuration as flat `key = value` text.

use std::str::FromStr;

use renet_events::kv::{format_kv, parse_kv};
use renet_model::{ArchConfig, ArchPreset, EventMode, FusionMode};
use renet_nn::optim::LrSchedule;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Brightness gain drawn from `1 ± brightness`.
    pub brightness: f32,
    /// Contrast gain drawn from `1 ± contrast`.
    pub contrast: f32,
    pub scale_min: f32,
    pub scale_max: f32,
    /// Largest shift as a fraction of the input side.
    pub translate: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, brightness: 0.2, contrast: 0.2, scale_min: 0.8, scale_max: 1.2, translate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch_preset: ArchPreset,
    pub fusion_mode: FusionMode,
    pub event_mode: EventMode,
    pub ca_enabled: bool,
    pub sa_enabled: bool,
    pub input_size: usize,
    pub k_frames: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_preset(ArchPreset::Desk)
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

impl ModelConfig {
    pub fn for_preset(preset: ArchPreset) -> Self {
        let arch = ArchConfig::for_preset(preset);
        Self {
            arch_preset: preset,
            fusion_mode: arch.fusion_mode,
            event_mode: arch.event_mode,
            ca_enabled: arch.ca_enabled,
            sa_enabled: arch.sa_enabled,
            input_size: arch.input_size,
            k_frames: arch.k_frames,
            lr: 5e-4,
            lr_decay_epochs: vec![10, 15],
            lr_decay_factor: 0.1,
            epochs: 30,
            batch_size: 8,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }

    /// Parses a config file; keys left out take the defaults of the chosen preset.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let pairs = parse_kv(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_pairs(&pairs)
    }

    /// `base` text with `overrides` applied on top, key by key.
    pub fn from_text_with_overrides(base: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_kv(base).map_err(|e| CliError::Config(e.to_string()))?;
        for (k, v) in overrides {
            match pairs.iter_mut().find(|(pk, _)| pk == k) {
                Some(slot) => slot.1 = v.clone(),
                None => pairs.push((k.clone(), v.clone())),
            }
        }
        Self::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let preset = match pairs.iter().find(|(k, _)| k == "arch_preset") {
            Some((_, v)) => v.parse().map_err(CliError::Config)?,
            None => ArchPreset::Desk,
        };
        let mut c = Self::for_preset(preset);
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "arch_preset" => {}
                "fusion_mode" => c.fusion_mode = v.parse().map_err(CliError::Config)?,
                "event_mode" => c.event_mode = v.parse().map_err(CliError::Config)?,
                "ca_enabled" => c.ca_enabled = parse(k, v)?,
                "sa_enabled" => c.sa_enabled = parse(k, v)?,
                "input_size" => c.input_size = parse(k, v)?,
                "k_frames" => c.k_frames = parse(k, v)?,
                "lr" => c.lr = parse(k, v)?,
                "lr_decay_epochs" => c.lr_decay_epochs = parse_list(k, v)?,
                "lr_decay_factor" => c.lr_decay_factor = parse(k, v)?,
                "epochs" => c.epochs = parse(k, v)?,
                "batch_size" => c.batch_size = parse(k, v)?,
                "aug_enabled" => c.augment.enabled = parse(k, v)?,
                "aug_brightness" => c.augment.brightness = parse(k, v)?,
                "aug_contrast" => c.augment.contrast = parse(k, v)?,
                "aug_scale_min" => c.augment.scale_min = parse(k, v)?,
                "aug_scale_max" => c.augment.scale_max = parse(k, v)?,
                "aug_translate" => c.augment.translate = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                _ => return Err(CliError::Config(format!("unknown key `{k}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key, in a fixed order; parsing it back yields the same config.
    pub fn to_kv_text(&self) -> String {
        let a = &self.augment;
        let decay: Vec<String> = self.lr_decay_epochs.iter().map(|e| e.to_string()).collect();
        format_kv([
            ("arch_preset", self.arch_preset.to_string()),
            ("fusion_mode", self.fusion_mode.to_string()),
            ("event_mode", self.event_mode.to_string()),
            ("ca_enabled", self.ca_enabled.to_string()),
            ("sa_enabled", self.sa_enabled.to_string()),
            ("input_size", self.input_size.to_string()),
            ("k_frames", self.k_frames.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay_epochs", decay.join(",")),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("aug_enabled", a.enabled.to_string()),
            ("aug_brightness", a.brightness.to_string()),
            ("aug_contrast", a.contrast.to_string()),
            ("aug_scale_min", a.scale_min.to_string()),
            ("aug_scale_max", a.scale_max.to_string()),
            ("aug_translate", a.translate.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr must be positive and lr_decay_factor in (0, 1]");
        }
        let a = &self.augment;
        if !(0.0..1.0).contains(&a.brightness) || !(0.0..1.0).contains(&a.contrast) {
            return bad("aug_brightness and aug_contrast must be in [0, 1)");
        }
        if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max) || !(0.0..=0.5).contains(&a.translate) {
            return bad("need 0 < aug_scale_min <= aug_scale_max and aug_translate in [0, 0.5]");
        }
        self.arch().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            fusion_mode: self.fusion_mode,
            event_mode: self.event_mode,
            ca_enabled: self.ca_enabled,
            sa_enabled: self.sa_enabled,
            input_size: self.input_size,
            k_frames: self.k_frames,
            ..ArchConfig::for_preset(self.arch_preset)
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { initial: self.lr, decay_epochs: self.lr_decay_epochs.clone(), factor: self.lr_decay_factor }
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        text_hash(&self.to_kv_text())
    }
}

pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits `key=value` command-line overrides.
pub fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}
