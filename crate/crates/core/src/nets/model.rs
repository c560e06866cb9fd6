use std::collections::BTreeMap;

use super::config::{DecoderTemplate, NetConfig};
use crate::error::{Error, Result};
use crate::tensor::{init_uniform, Checkpoint, Gradients, Graph, ParamStore, Tensor, Var};

/// Parameter groups that make up the shape autoencoder.
pub const VAE_PREFIXES: [&str; 4] = ["point_encoder.", "shape_head.", "obs_encoder.", "decoder."];

/// Per-point map shared by the shape embedding and the pose branch.
pub const POINT_ENCODER: &str = "point_encoder";
/// Independent copy of the point encoder used when sharing is disabled.
pub const GEO_ENCODER: &str = "geo_encoder";
pub const SHAPE_HEAD: &str = "shape_head";
pub const OBS_ENCODER: &str = "obs_encoder";
pub const PHO_ENCODER: &str = "pho_encoder";
pub const DECODER: &str = "decoder";
pub const POSE_HEAD: &str = "pose_head";

pub fn is_vae_param(name: &str) -> bool {
    VAE_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Fixed decoder input: `points` rows of the lattice or sphere primitive.
pub fn template_points(template: DecoderTemplate, points: usize) -> Vec<f64> {
    match template {
        DecoderTemplate::Grid => {
            let rows = (points as f64).sqrt().floor().max(1.0) as usize;
            let cols = points.div_ceil(rows);
            let coord = |i: usize, n: usize| {
                if n == 1 {
                    0.0
                } else {
                    -1.0 + 2.0 * i as f64 / (n - 1) as f64
                }
            };
            (0..points)
                .flat_map(|k| [coord(k / cols, rows), coord(k % cols, cols)])
                .collect()
        }
        DecoderTemplate::Ellipsoid => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..points)
                .flat_map(|k| {
                    let y = 1.0 - 2.0 * (k as f64 + 0.5) / points as f64;
                    let r = (1.0 - y * y).max(0.0).sqrt();
                    let th = golden * k as f64;
                    [r * th.cos(), y, r * th.sin()]
                })
                .collect()
        }
    }
}

/// Network weights together with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParamStore,
}

fn layer(params: &mut ParamStore, name: &str, fan_in: usize, out: usize, seed: u64) {
    let w = format!("{name}.w");
    let b = format!("{name}.b");
    params.insert(w.clone(), init_uniform(&w, vec![fan_in, out], fan_in, seed));
    params.insert(b.clone(), init_uniform(&b, vec![1, out], fan_in, seed));
}

fn zero_layer(params: &mut ParamStore, name: &str, fan_in: usize, out: usize) {
    params.insert(format!("{name}.w"), Tensor::zeros(vec![fan_in, out]).with_grad());
    params.insert(format!("{name}.b"), Tensor::zeros(vec![1, out]).with_grad());
}

fn mlp(params: &mut ParamStore, prefix: &str, input: usize, widths: &[usize], seed: u64) {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        layer(params, &format!("{prefix}.l{i}"), fan_in, w, seed);
        fan_in = w;
    }
}

impl Model {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.latent_dim;
        let mut enc = config.encoder_widths.clone();
        enc.push(n);
        let mut p = ParamStore::new();

        mlp(&mut p, POINT_ENCODER, 3, &enc, seed);
        if !config.siamese {
            mlp(&mut p, GEO_ENCODER, 3, &enc, seed);
        }
        layer(&mut p, &format!("{SHAPE_HEAD}.mu"), n, n, seed);
        zero_layer(&mut p, &format!("{SHAPE_HEAD}.logvar"), n, n);

        mlp(&mut p, OBS_ENCODER, 6, &enc, seed);
        layer(&mut p, &format!("{OBS_ENCODER}.mu"), n, n, seed);
        zero_layer(&mut p, &format!("{OBS_ENCODER}.logvar"), n, n);

        mlp(&mut p, PHO_ENCODER, 6, &enc, seed);

        // First decoder layer is split into code and template parts so the
        // code product is computed once per shape, not once per point.
        let dw = &config.decoder_widths;
        let fan0 = n + config.template.dim();
        let (wz, wg, b0) = ("decoder.l0.wz", "decoder.l0.wg", "decoder.l0.b");
        p.insert(wz, init_uniform(wz, vec![n, dw[0]], fan0, seed));
        p.insert(wg, init_uniform(wg, vec![config.template.dim(), dw[0]], fan0, seed));
        p.insert(b0, init_uniform(b0, vec![1, dw[0]], fan0, seed));
        let mut rest = dw[1..].to_vec();
        rest.push(3);
        let mut fan_in = dw[0];
        for (i, &w) in rest.iter().enumerate() {
            layer(&mut p, &format!("{DECODER}.l{}", i + 1), fan_in, w, seed);
            fan_in = w;
        }

        let mut head = config.head_widths.clone();
        head.push(7);
        mlp(&mut p, POSE_HEAD, config.head_input(), &head, seed);

        Ok(Model { config, params: p })
    }

    /// Scalars in one point encoder.
    pub fn point_encoder_size(&self) -> usize {
        self.params.scalar_count_with_prefix("point_encoder.")
    }

    pub fn template(&self) -> Vec<f64> {
        template_points(self.config.template, self.config.points)
    }

    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut header = self.config.to_header();
        header.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        Checkpoint {
            header,
            params: self.params.clone(),
        }
    }

    /// Rebuilds a model, checking every parameter against the architecture
    /// recorded in the header.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = NetConfig::from_header(&ckpt.header)?;
        let fresh = Model::new(config.clone(), 0)?;
        let names_a: Vec<&String> = fresh.params.names().collect();
        let names_b: Vec<&String> = ckpt.params.names().collect();
        if names_a != names_b {
            return Err(Error::Format(
                "checkpoint parameters do not match the recorded architecture".into(),
            ));
        }
        for (name, t) in fresh.params.iter() {
            let stored = ckpt.params.get(name)?;
            if stored.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, architecture expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
        }
        let mut params = ckpt.params.clone();
        for (_, t) in params.iter_mut() {
            t.requires_grad = true;
        }
        Ok(Model { config, params })
    }

    /// Records every parameter as a leaf of `g`. Only names accepted by
    /// `trainable` are marked for gradients.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let v = g.leaf(t.rows(), t.cols(), t.data().to_vec(), trainable(name))?;
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }
}

/// Parameters recorded on one graph.
#[derive(Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Adds the gradients of every bound parameter into `params`.
    pub fn accumulate(&self, grads: &Gradients, params: &mut ParamStore) -> Result<()> {
        for (name, &v) in &self.vars {
            if let Some(g) = grads.get(v) {
                params.get_mut(name)?.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
