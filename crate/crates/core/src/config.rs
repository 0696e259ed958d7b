//! Run configuration: one TOML file mirrored by these structs, every key
//! reachable from the CLI through dotted `--set section.key=value`
//! overrides. Defaults follow the training recipe of the underlying
//! method (AdamW, lr 1e-5, batch 2, gradient accumulation 8, cosine
//! schedule); test and toy-run configs override the budgets.

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionKind {
    DirectAdd,
    Caf,
    Sf,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CafMode {
    /// Cross-attention fusion (the full block).
    Caf,
    /// Replace the block with plain addition of the watermark feature.
    Add,
    /// Replace attention with concat + conv fusion.
    Fuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorInput {
    NoiseOnly,
    HighfreqOnly,
    NoiseFmap,
    HighfreqFmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub alpha: usize,
    pub latent_channels: usize,
    pub k: usize,
    /// Base channel width of the codec encoder/decoder.
    pub codec_width: usize,
    /// Channels of the shared extractor feature map.
    pub c_f: usize,
    /// Zig-zag cutoff for the block-DCT high-pass (coefficients with
    /// zig-zag index < cutoff are zeroed).
    pub dct_cutoff: usize,
    /// Injection kind per decoder stage, length log2(alpha)+1.
    pub injection: Vec<InjectionKind>,
    pub caf_mode: CafMode,
    pub extractor_input: ExtractorInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 256,
            alpha: 8,
            latent_channels: 4,
            k: 64,
            codec_width: 32,
            c_f: 16,
            dct_cutoff: 3,
            injection: default_injection(8),
            caf_mode: CafMode::Caf,
            extractor_input: ExtractorInput::HighfreqFmap,
        }
    }
}

/// stage 0 = direct add, intermediate stages = CAF, final stage = SF.
pub fn default_injection(alpha: usize) -> Vec<InjectionKind> {
    let n_stages = alpha.trailing_zeros() as usize;
    (0..=n_stages)
        .map(|s| {
            if s == 0 {
                InjectionKind::DirectAdd
            } else if s == n_stages {
                InjectionKind::Sf
            } else {
                InjectionKind::Caf
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    /// Pool sampled uniformly during training.
    pub pool: Vec<String>,
    pub blur_sigma: [f64; 2],
    pub jpeg_quality: [u32; 2],
    pub brightness_delta: f64,
    pub contrast_range: [f64; 2],
    pub rd_area_frac: [f64; 2],
    /// Optimizer steps at the start of training with distortion forced to
    /// identity, letting the message pathway form before degradations.
    pub warmup_identity_steps: u64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        DistortionConfig {
            pool: vec![
                "identity".into(),
                "rd-crop-replace".into(),
                "splice".into(),
                "gaussian-blur".into(),
                "jpeg".into(),
                "brightness".into(),
                "contrast".into(),
            ],
            blur_sigma: [0.5, 2.0],
            jpeg_quality: [50, 95],
            brightness_delta: 0.2,
            contrast_range: [0.8, 1.2],
            rd_area_frac: [0.05, 0.40],
            warmup_identity_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_k: f64,
    pub lambda_m: f64,
    pub gamma: f64,
    pub lambda_i: f64,
    pub lambda_lpips: f64,
    pub lambda_ct: f64,
    pub alpha_jnd: f64,
    pub edge_band_px: usize,
    /// Literal reading of the residual-cost term (cost map times the
    /// generated image itself) instead of cost times |gen - ori|.
    pub ct_literal: bool,
    /// Fidelity curriculum for the residual-cost term: weighted 0 for this
    /// many optimizer steps, then ramped linearly to full weight over
    /// `ct_loss_ramp` further steps. The cost term is L1-like, so at full
    /// weight from step 0 its constant-magnitude subgradient pins the
    /// embedder at the identity point before the message pathway can
    /// bootstrap. The smooth terms (MSE, perceptual) stay at full weight
    /// throughout; their gradient vanishes at the identity point, so they
    /// never block the bootstrap but do keep the output in range.
    pub ct_loss_warmup: u64,
    pub ct_loss_ramp: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_k: 1.0,
            lambda_m: 1.0,
            gamma: 20.0,
            lambda_i: 1.0,
            lambda_lpips: 0.5,
            lambda_ct: 0.5,
            alpha_jnd: 0.5,
            edge_band_px: 4,
            ct_literal: false,
            ct_loss_warmup: 0,
            ct_loss_ramp: 0,
        }
    }
}

impl LossConfig {
    /// Multiplier applied to the residual-cost weight at `step`.
    pub fn ct_scale(&self, step: u64) -> f64 {
        if step < self.ct_loss_warmup {
            0.0
        } else if self.ct_loss_ramp == 0 {
            1.0
        } else {
            ((step - self.ct_loss_warmup) as f64 / self.ct_loss_ramp as f64).min(1.0)
        }
    }

    /// A copy with the residual-cost weight scaled by `s`.
    pub fn with_ct_scale(&self, s: f64) -> LossConfig {
        LossConfig { lambda_ct: self.lambda_ct * s, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-5,
            batch_size: 2,
            grad_accum: 8,
            warmup_steps: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    /// Optimizer-step budget for the codec pretraining phase.
    pub pretrain_steps: u64,
    /// Optimizer-step budget for the watermark phase.
    pub steps: u64,
    /// Learning rate for the pretraining phase (codec reconstruction).
    pub pretrain_learning_rate: f64,
    pub log_every: u64,
    /// Number of procedurally generated training images.
    pub dataset_size: usize,
    /// Held-out images for evaluation.
    pub holdout_size: usize,
    /// Optional folder of user PNG images mixed into the dataset.
    pub data_dir: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 17,
            pretrain_steps: 1500,
            steps: 3000,
            pretrain_learning_rate: 1e-3,
            log_every: 50,
            dataset_size: 256,
            holdout_size: 16,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub distortion: DistortionConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainSection,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Config, Error> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Config, Error> {
        let s = std::fs::read_to_string(path)?;
        Config::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_stages(&self) -> usize {
        self.model.alpha.trailing_zeros() as usize
    }

    /// Apply dotted-path overrides like `optim.learning_rate=3e-4`.
    /// The value side is parsed as a TOML literal (string fallback).
    pub fn apply_overrides(&self, sets: &[String]) -> Result<Config, Error> {
        let mut value: toml::Value =
            toml::from_str(&self.to_toml_string()).map_err(|e| Error::Config(e.to_string()))?;
        for set in sets {
            let (path, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set needs key=value, got {set:?}")))?;
            let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
                .map(|t: toml::Value| t["v"].clone())
                .or_else(|_| {
                    toml::from_str(&format!("v = {raw:?}")).map(|t: toml::Value| t["v"].clone())
                })
                .map_err(|e| Error::Config(format!("cannot parse value {raw:?}: {e}")))?;
            let mut node = &mut value;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    let table = node
                        .as_table_mut()
                        .ok_or_else(|| Error::Config(format!("{path}: not a table")))?;
                    if !table.contains_key(*part) {
                        return Err(Error::Config(format!("unknown config key {path}")));
                    }
                    table.insert((*part).into(), parsed.clone());
                } else {
                    node = node
                        .as_table_mut()
                        .and_then(|t| t.get_mut(*part))
                        .ok_or_else(|| Error::Config(format!("unknown config section {part}")))?;
                }
            }
        }
        let cfg: Config = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let m = &self.model;
        if !m.alpha.is_power_of_two() || m.alpha < 2 {
            return Err(Error::Config(format!("alpha must be a power of two >= 2, got {}", m.alpha)));
        }
        if m.image_size % m.alpha != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by alpha {}",
                m.image_size, m.alpha
            )));
        }
        if m.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a multiple of 32 (feature pyramid reaches H/32)",
                m.image_size
            )));
        }
        if m.k == 0 || m.k % 4 != 0 {
            return Err(Error::Config(format!("k must be a positive multiple of 4, got {}", m.k)));
        }
        if !(1..=7).contains(&m.dct_cutoff) {
            return Err(Error::Config(format!("dct_cutoff must be in [1,7], got {}", m.dct_cutoff)));
        }
        let n_stages = self.n_stages();
        if m.injection.len() != n_stages + 1 {
            return Err(Error::Config(format!(
                "injection schedule must list {} stages for alpha={}, got {}",
                n_stages + 1,
                m.alpha,
                m.injection.len()
            )));
        }
        for (stage, kind) in m.injection.iter().enumerate() {
            match kind {
                InjectionKind::DirectAdd if stage != 0 => {
                    return Err(Error::Config(format!(
                        "direct-add is only valid at stage 0 (found at stage {stage})"
                    )));
                }
                InjectionKind::Caf if stage == 0 => {
                    return Err(Error::Config("caf is not valid at stage 0".into()));
                }
                InjectionKind::Sf if stage != n_stages => {
                    return Err(Error::Config(format!(
                        "sf is only valid at the final stage {n_stages} (found at stage {stage})"
                    )));
                }
                _ => {}
            }
        }
        let d = &self.distortion;
        if d.rd_area_frac[0] <= 0.0 || d.rd_area_frac[1] >= 1.0 || d.rd_area_frac[0] > d.rd_area_frac[1] {
            return Err(Error::Config(format!(
                "rd_area_frac must satisfy 0 < min <= max < 1, got {:?}",
                d.rd_area_frac
            )));
        }
        for kind in &d.pool {
            crate::distortion::DistortionSpec::validate_pool_kind(kind)?;
        }
        let l = &self.loss;
        for (name, v) in [
            ("lambda_k", l.lambda_k),
            ("lambda_m", l.lambda_m),
            ("gamma", l.gamma),
            ("lambda_i", l.lambda_i),
            ("lambda_lpips", l.lambda_lpips),
            ("lambda_ct", l.lambda_ct),
            ("alpha_jnd", l.alpha_jnd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.optim.batch_size == 0 || self.optim.grad_accum == 0 {
            return Err(Error::Config("batch_size and grad_accum must be positive".into()));
        }
        Ok(())
    }

    /// The configuration used by tests and toy runs: 64x64 images, k=16,
    /// lean budgets. Defaults elsewhere stay at paper-recipe values.
    pub fn toy() -> Config {
        let mut cfg = Config::default();
        cfg.model.image_size = 64;
        cfg.model.k = 16;
        cfg.optim.learning_rate = 1e-3;
        cfg.optim.grad_accum = 1;
        cfg.train.pretrain_steps = 1200;
        cfg.train.steps = 3000;
        cfg.train.dataset_size = 128;
        cfg.train.holdout_size = 12;
        cfg.distortion.warmup_identity_steps = 300;
        cfg.loss.ct_loss_warmup = 600;
        cfg.loss.ct_loss_ramp = 600;
        cfg
    }
}
