use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::{DecoderTemplate, NetConfig};
use crate::tensor::AdamConfig;

/// Component removed for an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    None,
    /// Pose head without the view-factorized code.
    NoCass,
    /// Single-modality batches plus a latent alignment loss.
    NoBm,
    /// Independent geometric encoder instead of the shared one.
    NoDm,
    /// Plain autoencoder: no sampling, no KL term.
    NoVae,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoCass,
        Ablation::NoBm,
        Ablation::NoDm,
        Ablation::NoVae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoCass => "no_cass",
            Ablation::NoBm => "no_bm",
            Ablation::NoDm => "no_dm",
            Ablation::NoVae => "no_vae",
        }
    }

    /// Architecture changes implied by the ablation.
    pub fn apply(self, net: &mut NetConfig) {
        net.pose_uses_code = self != Ablation::NoCass;
        net.siamese = self != Ablation::NoDm;
    }

    pub fn mixes_batches(self) -> bool {
        self != Ablation::NoBm
    }

    pub fn variational(self) -> bool {
        self != Ablation::NoVae
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown ablation `{s}` (expected none, no_cass, no_bm, no_dm or no_vae)"
                ))
            })
    }
}

/// Training hyperparameters. Serialized as flat `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub points: usize,
    pub obs_points: usize,
    pub template: DecoderTemplate,
    pub input_scale: f64,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub kl_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub iters_stage3: usize,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    /// Fraction of each mixed batch drawn from canonical clouds.
    pub mix_ratio: f64,
    /// Weight of the latent alignment loss when batches are not mixed.
    pub align_weight: f64,
    pub log_every: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Categories trained with the Chamfer-relaxed pose loss.
    pub symmetric_categories: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 64,
            points: 128,
            obs_points: 96,
            template: DecoderTemplate::Grid,
            input_scale: 10.0,
            encoder_widths: NetConfig::default().encoder_widths,
            decoder_widths: NetConfig::default().decoder_widths,
            head_widths: NetConfig::default().head_widths,
            kl_weight: 1e-5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-6,
            iters_stage1: 4000,
            iters_stage2: 4000,
            iters_stage3: 2000,
            lr_decay_every: 2000,
            batch_size: 32,
            mix_ratio: 0.5,
            align_weight: 1.0,
            log_every: 10,
            seed: 0,
            ablation: Ablation::None,
            symmetric_categories: vec!["bottle".into(), "bowl".into(), "can".into()],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.iters_stage1 == 0 || self.iters_stage2 == 0 || self.iters_stage3 == 0 {
            return bad("stage iteration counts must be positive");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be finite and non-negative");
        }
        if self.lr_decay_every == 0 || self.log_every == 0 {
            return bad("lr_decay_every and log_every must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.mix_ratio > 0.0 && self.mix_ratio < 1.0) {
            return bad("mix_ratio must lie in (0, 1)");
        }
        if self.ablation.mixes_batches() {
            let canon = (self.mix_ratio * self.batch_size as f64).ceil() as usize;
            if canon >= self.batch_size {
                return bad("mix_ratio leaves no observation items in a mixed batch");
            }
        }
        if !(self.align_weight >= 0.0 && self.align_weight.is_finite()) {
            return bad("align_weight must be finite and non-negative");
        }
        self.adam().validate()?;
        self.net().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Architecture for this run, ablation applied.
    pub fn net(&self) -> NetConfig {
        let mut net = NetConfig {
            latent_dim: self.latent_dim,
            points: self.points,
            obs_points: self.obs_points,
            template: self.template,
            input_scale: self.input_scale,
            encoder_widths: self.encoder_widths.clone(),
            decoder_widths: self.decoder_widths.clone(),
            head_widths: self.head_widths.clone(),
            ..NetConfig::default()
        };
        self.ablation.apply(&mut net);
        net
    }

    pub fn iters(&self, stage: u8) -> usize {
        match stage {
            1 => self.iters_stage1,
            2 => self.iters_stage2,
            _ => self.iters_stage3,
        }
    }

    /// Learning rate at `iteration` within a stage: divided by ten every
    /// `lr_decay_every` iterations.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.lr / 10f64.powi((iteration / self.lr_decay_every) as i32)
    }

    pub fn is_symmetric(&self, category: &str) -> bool {
        self.symmetric_categories.iter().any(|c| c == category)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        put("latent_dim", self.latent_dim.to_string());
        put("points", self.points.to_string());
        put("obs_points", self.obs_points.to_string());
        put("template", self.template.to_string());
        put("input_scale", format!("{:?}", self.input_scale));
        let widths = |w: &[usize]| w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        put("encoder_widths", widths(&self.encoder_widths));
        put("decoder_widths", widths(&self.decoder_widths));
        put("head_widths", widths(&self.head_widths));
        put("kl_weight", format!("{:?}", self.kl_weight));
        put("lr", format!("{:?}", self.lr));
        put("beta1", format!("{:?}", self.beta1));
        put("beta2", format!("{:?}", self.beta2));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("iters_stage1", self.iters_stage1.to_string());
        put("iters_stage2", self.iters_stage2.to_string());
        put("iters_stage3", self.iters_stage3.to_string());
        put("lr_decay_every", self.lr_decay_every.to_string());
        put("batch_size", self.batch_size.to_string());
        put("mix_ratio", format!("{:?}", self.mix_ratio));
        put("align_weight", format!("{:?}", self.align_weight));
        put("log_every", self.log_every.to_string());
        put("seed", self.seed.to_string());
        put("ablation", self.ablation.to_string());
        put("symmetric_categories", self.symmetric_categories.join(","));
        s
    }

    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e| Error::invalid(format!("`{key}`: {e}")))
        }
        let list = |key: &str, v: &str| -> Result<Vec<usize>> {
            v.split(',').map(|x| p(key, x.trim())).collect()
        };
        match key {
            "latent_dim" => self.latent_dim = p(key, value)?,
            "points" => self.points = p(key, value)?,
            "obs_points" => self.obs_points = p(key, value)?,
            "template" => self.template = value.parse()?,
            "input_scale" => self.input_scale = p(key, value)?,
            "encoder_widths" => self.encoder_widths = list(key, value)?,
            "decoder_widths" => self.decoder_widths = list(key, value)?,
            "head_widths" => self.head_widths = list(key, value)?,
            "kl_weight" => self.kl_weight = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "iters_stage1" => self.iters_stage1 = p(key, value)?,
            "iters_stage2" => self.iters_stage2 = p(key, value)?,
            "iters_stage3" => self.iters_stage3 = p(key, value)?,
            "lr_decay_every" => self.lr_decay_every = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "mix_ratio" => self.mix_ratio = p(key, value)?,
            "align_weight" => self.align_weight = p(key, value)?,
            "log_every" => self.log_every = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "symmetric_categories" => {
                self.symmetric_categories = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}
