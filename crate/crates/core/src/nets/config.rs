use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Primitive the decoder folds into a shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderTemplate {
    /// Near-square lattice in `[-1, 1]²`.
    Grid,
    /// Unit sphere, Fibonacci spiral.
    Ellipsoid,
}

impl DecoderTemplate {
    pub fn dim(self) -> usize {
        match self {
            DecoderTemplate::Grid => 2,
            DecoderTemplate::Ellipsoid => 3,
        }
    }
}

impl fmt::Display for DecoderTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderTemplate::Grid => "grid",
            DecoderTemplate::Ellipsoid => "ellipsoid",
        })
    }
}

impl FromStr for DecoderTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(DecoderTemplate::Grid),
            "ellipsoid" => Ok(DecoderTemplate::Ellipsoid),
            other => Err(Error::invalid(format!("unknown decoder template `{other}`"))),
        }
    }
}

/// Architecture hyperparameters. Stored in every checkpoint header.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Width of every global feature and of the latent code.
    pub latent_dim: usize,
    /// Points emitted by the decoder.
    pub points: usize,
    /// Points every observation is resampled to.
    pub obs_points: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub template: DecoderTemplate,
    /// Network-side coordinates are meters times this factor.
    pub input_scale: f64,
    /// Feed the view-factorized code to the pose head.
    pub pose_uses_code: bool,
    /// Share one point encoder between the shape and pose branches.
    pub siamese: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            points: 128,
            obs_points: 96,
            encoder_widths: vec![64, 128],
            decoder_widths: vec![256, 128],
            head_widths: vec![256, 128, 64],
            template: DecoderTemplate::Grid,
            input_scale: 10.0,
            pose_uses_code: true,
            siamese: true,
        }
    }
}

fn widths(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_widths(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("{key}: {e}")))
        })
        .collect()
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.points == 0 || self.obs_points < 8 {
            return Err(Error::invalid(
                "latent_dim and points must be positive, obs_points at least 8",
            ));
        }
        for (name, w) in [
            ("encoder_widths", &self.encoder_widths),
            ("decoder_widths", &self.decoder_widths),
            ("head_widths", &self.head_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::invalid(format!("{name} must be non-empty and positive")));
            }
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::invalid("input_scale must be positive"));
        }
        Ok(())
    }

    /// Width of the pose head input.
    pub fn head_input(&self) -> usize {
        self.latent_dim * if self.pose_uses_code { 3 } else { 2 }
    }

    pub fn to_header(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert("net.latent_dim".into(), self.latent_dim.to_string());
        h.insert("net.points".into(), self.points.to_string());
        h.insert("net.obs_points".into(), self.obs_points.to_string());
        h.insert("net.encoder_widths".into(), widths(&self.encoder_widths));
        h.insert("net.decoder_widths".into(), widths(&self.decoder_widths));
        h.insert("net.head_widths".into(), widths(&self.head_widths));
        h.insert("net.template".into(), self.template.to_string());
        h.insert("net.input_scale".into(), format!("{:?}", self.input_scale));
        h.insert("net.pose_uses_code".into(), self.pose_uses_code.to_string());
        h.insert("net.siamese".into(), self.siamese.to_string());
        h
    }

    pub fn from_header(h: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            h.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::Format(format!("{k}: {e}")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|e| Error::Format(format!("{k}: {e}")))
        };
        let cfg = NetConfig {
            latent_dim: num("net.latent_dim")?,
            points: num("net.points")?,
            obs_points: num("net.obs_points")?,
            encoder_widths: parse_widths("encoder_widths", get("net.encoder_widths")?)?,
            decoder_widths: parse_widths("decoder_widths", get("net.decoder_widths")?)?,
            head_widths: parse_widths("head_widths", get("net.head_widths")?)?,
            template: get("net.template")?.parse()?,
            input_scale: get("net.input_scale")?
                .parse()
                .map_err(|e| Error::Format(format!("input_scale: {e}")))?,
            pose_uses_code: flag("net.pose_uses_code")?,
            siamese: flag("net.siamese")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
