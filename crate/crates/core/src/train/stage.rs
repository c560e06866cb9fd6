use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::batch::{draw, mix_batch, MixedBatch};
use super::config::{Ablation, TrainConfig};
use super::losses::{alignment_loss, chamfer_loss, kl_loss, pose_loss, PoseTarget};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nets::forward::{self, reparameterize};
use crate::nets::{
    colored_batch, geometry_batch, is_vae_param, Bound, Model, GEO_ENCODER, MIN_POINTS, PHO_ENCODER,
    POINT_ENCODER, POSE_HEAD,
};
use crate::seed::derive_seed;
use crate::shapegen::{Dataset, Split};
use crate::tensor::{Adam, Graph, Var};

/// Loss terms logged every few iterations as `(iteration, term, value)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<(usize, String, f64)>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,term,value\n");
        for (i, t, v) in &self.rows {
            let _ = writeln!(s, "{i},{t},{v:?}");
        }
        s
    }
}

/// Outcome of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: u8,
    pub iterations: usize,
    /// Mean total loss over the first window of iterations.
    pub initial_loss: f64,
    /// Mean total loss over the last window of iterations.
    pub final_loss: f64,
    pub log: LossLog,
}

/// Parameters updated in `stage` under `ablation`.
pub fn trainable_in(stage: u8, ablation: Ablation) -> impl Fn(&str) -> bool {
    move |name: &str| match stage {
        1 => is_vae_param(name),
        2 => {
            name.starts_with(PHO_ENCODER)
                || name.starts_with(POSE_HEAD)
                || (ablation == Ablation::NoDm && name.starts_with(GEO_ENCODER))
        }
        _ => true,
    }
}

struct Terms {
    total: Var,
    named: Vec<(&'static str, Var)>,
}

struct Ctx<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    model: &'a Model,
    template: Vec<f64>,
}

struct Branch {
    recon: Var,
    mu: Var,
    logvar: Var,
}

impl Ctx<'_> {
    fn noise(&self, g: &mut Graph, rows: usize, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n = self.cfg.latent_dim;
        let data = (0..rows * n).map(|_| StandardNormal.sample(rng)).collect();
        g.constant(rows, n, data)
    }

    fn decode_against(
        &self,
        g: &mut Graph,
        b: &Bound,
        mu: Var,
        logvar: Var,
        targets: &[&PointCloud],
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let items = targets.len();
        let z = if self.cfg.ablation.variational() {
            let eps = self.noise(g, items, rng)?;
            reparameterize(g, mu, logvar, eps)?
        } else {
            mu
        };
        let tpl = g.constant(self.cfg.points, self.model.config.template.dim(), self.template.clone())?;
        let recon = forward::decode(g, b, &self.model.config, tpl, z)?;
        let flat: Vec<f64> = targets.iter().flat_map(|c| c.flat()).collect();
        let per = targets[0].len();
        let target = g.constant(items * per, 3, flat)?;
        chamfer_loss(g, recon, target, items)
    }

    fn canonical_branch(&self, g: &mut Graph, b: &Bound, ids: &[usize], rng: &mut ChaCha8Rng) -> Result<Branch> {
        let clouds: Vec<&PointCloud> = ids.iter().map(|&i| &self.data.instances[i].canonical).collect();
        let per = clouds[0].len().max(MIN_POINTS);
        let batch = geometry_batch(&clouds, per, self.cfg.input_scale)?;
        let x = batch.var(g)?;
        let f = forward::encode_points(g, b, POINT_ENCODER, x, per)?;
        let (mu, logvar) = forward::shape_latent(g, b, f)?;
        let recon = self.decode_against(g, b, mu, logvar, &clouds, rng)?;
        Ok(Branch { recon, mu, logvar })
    }

    fn observed(&self, ids: &[usize]) -> Vec<&PointCloud> {
        ids.iter().map(|&r| &self.data.records[r].observed).collect()
    }

    fn paired_canonicals(&self, ids: &[usize]) -> Vec<&PointCloud> {
        ids.iter()
            .map(|&r| &self.data.instance_of(&self.data.records[r]).canonical)
            .collect()
    }

    /// Observation encoder plus, when `recon` is set, reconstruction of the
    /// paired canonical cloud. Returns the branch and the pose terms input.
    fn observation_branch(
        &self,
        g: &mut Graph,
        b: &Bound,
        ids: &[usize],
        recon: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Option<Branch>, Var, crate::nets::CloudBatch)> {
        let obs = self.observed(ids);
        let batch = colored_batch(&obs, self.cfg.obs_points, self.cfg.input_scale)?;
        let x = batch.var(g)?;
        let (mu, logvar) = forward::encode_observation(g, b, x, self.cfg.obs_points)?;
        let branch = if recon {
            let targets = self.paired_canonicals(ids);
            let recon = self.decode_against(g, b, mu, logvar, &targets, rng)?;
            Some(Branch { recon, mu, logvar })
        } else {
            None
        };
        Ok((branch, mu, batch))
    }

    fn pose_terms(&self, g: &mut Graph, b: &Bound, ids: &[usize], code: Var, batch: &crate::nets::CloudBatch) -> Result<Var> {
        let cfg = &self.model.config;
        let xc = batch.var(g)?;
        let xg = batch.xyz().var(g)?;
        let pho = forward::encode_photometric(g, b, xc, cfg.obs_points)?;
        let prefix = if cfg.siamese { POINT_ENCODER } else { GEO_ENCODER };
        let geo = forward::encode_points(g, b, prefix, xg, cfg.obs_points)?;
        let bundle = if cfg.pose_uses_code {
            g.concat_cols(&[code, pho, geo])?
        } else {
            g.concat_cols(&[pho, geo])?
        };
        let (q, t_raw) = forward::pose_head(g, b, bundle)?;
        let t_m = g.scale(t_raw, 1.0 / cfg.input_scale)?;
        let cents: Vec<f64> = batch.centroids.iter().flatten().copied().collect();
        let cents = g.constant(ids.len(), 3, cents)?;
        let t = g.add(t_m, cents)?;
        let targets: Vec<PoseTarget<'_>> = ids
            .iter()
            .map(|&r| {
                let rec = &self.data.records[r];
                let inst = self.data.instance_of(rec);
                PoseTarget {
                    canonical: &inst.canonical,
                    pose: rec.pose,
                    symmetric: self.cfg.is_symmetric(&inst.category),
                }
            })
            .collect();
        pose_loss(g, q, t, &targets)
    }

    /// Detached shape codes of the canonical clouds paired with `ids`.
    fn detached_codes(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let clouds = self.paired_canonicals(ids);
        let mut aux = Graph::new();
        let b = self.model.bind(&mut aux, |_| false)?;
        let per = clouds[0].len().max(MIN_POINTS);
        let batch = geometry_batch(&clouds, per, self.cfg.input_scale)?;
        let x = batch.var(&mut aux)?;
        let f = forward::encode_points(&mut aux, &b, POINT_ENCODER, x, per)?;
        let (mu, _) = forward::shape_latent(&mut aux, &b, f)?;
        g.constant(ids.len(), self.cfg.latent_dim, aux.value(mu)?.to_vec())
    }

    fn kl_term(&self, g: &mut Graph, branches: &[&Branch], items: usize) -> Result<Option<Var>> {
        if !self.cfg.ablation.variational() {
            return Ok(None);
        }
        let mut acc: Option<Var> = None;
        for br in branches {
            let (rows, _) = g.shape(br.mu)?;
            let k = kl_loss(g, br.mu, br.logvar)?;
            let k = g.scale(k, rows as f64 / items as f64)?;
            acc = Some(match acc {
                Some(a) => g.add(a, k)?,
                None => k,
            });
        }
        Ok(acc)
    }

    /// Loss graph for one iteration.
    fn build(&self, g: &mut Graph, b: &Bound, stage: u8, batch: &MixedBatch, rng: &mut ChaCha8Rng) -> Result<Terms> {
        let cfg = self.cfg;
        let mut named = Vec::new();
        let mut parts: Vec<Var> = Vec::new();
        let obs_ids = &batch.observations;

        if stage == 2 {
            let (_, code, ob) = self.observation_branch(g, b, obs_ids, false, rng)?;
            let pose = self.pose_terms(g, b, obs_ids, code, &ob)?;
            named.push(("pose", pose));
            return Ok(Terms { total: pose, named });
        }

        let canon = if batch.canonical.is_empty() {
            None
        } else {
            Some(self.canonical_branch(g, b, &batch.canonical, rng)?)
        };
        let mut obs = None;
        let mut code = None;
        let mut ob_batch = None;
        if !obs_ids.is_empty() {
            let (br, c, bt) = self.observation_branch(g, b, obs_ids, true, rng)?;
            obs = br;
            code = Some(c);
            ob_batch = Some(bt);
        }
        if let Some(c) = &canon {
            named.push(("recon_canonical", c.recon));
            parts.push(c.recon);
        }
        if let Some(o) = &obs {
            named.push(("recon_observation", o.recon));
            parts.push(o.recon);
        }
        let branches: Vec<&Branch> = canon.iter().chain(obs.iter()).collect();
        if let Some(kl) = self.kl_term(g, &branches, batch.len())? {
            named.push(("kl", kl));
            let w = g.scale(kl, cfg.kl_weight)?;
            parts.push(w);
        }
        if !cfg.ablation.mixes_batches() && !obs_ids.is_empty() && cfg.align_weight > 0.0 {
            let target = self.detached_codes(g, obs_ids)?;
            let mu = obs.as_ref().expect("observation branch").mu;
            let al = alignment_loss(g, mu, target)?;
            named.push(("align", al));
            let w = g.scale(al, cfg.align_weight)?;
            parts.push(w);
        }
        if stage == 3 && !obs_ids.is_empty() {
            let pose = self.pose_terms(g, b, obs_ids, code.expect("code"), ob_batch.as_ref().expect("batch"))?;
            named.push(("pose", pose));
            parts.push(pose);
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = g.add(total, p)?;
        }
        Ok(Terms { total, named })
    }
}

/// Batch for `iteration` of `stage`, a pure function of the seed.
pub fn stage_batch(
    cfg: &TrainConfig,
    stage: u8,
    iteration: usize,
    canonical_pool: &[usize],
    observation_pool: &[usize],
) -> Result<MixedBatch> {
    let seed = derive_seed(cfg.seed, &[stage as u64, iteration as u64, 0]);
    let n = cfg.batch_size;
    if stage == 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok(MixedBatch {
            canonical: Vec::new(),
            observations: draw(observation_pool, n, &mut rng)?,
        });
    }
    if cfg.ablation.mixes_batches() {
        mix_batch(canonical_pool, observation_pool, n, cfg.mix_ratio, seed)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(if iteration % 2 == 0 {
            MixedBatch {
                canonical: draw(canonical_pool, n, &mut rng)?,
                observations: Vec::new(),
            }
        } else {
            MixedBatch {
                canonical: Vec::new(),
                observations: draw(observation_pool, n, &mut rng)?,
            }
        })
    }
}

fn diverged(stage: u8, iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            stage,
            iteration,
            detail: format!("non-finite value in `{op}`"),
        },
        other => other,
    }
}

/// Loss of one batch with its named terms.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
}

fn check_stage(stage: u8) -> Result<()> {
    if (1..=3).contains(&stage) {
        Ok(())
    } else {
        Err(Error::invalid(format!("unknown stage {stage}")))
    }
}

fn forward_batch(
    stage: u8,
    cfg: &TrainConfig,
    model: &Model,
    data: &Dataset,
    batch: &MixedBatch,
    noise_seed: u64,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(Graph, Bound, Var, BatchLoss)> {
    check_stage(stage)?;
    if batch.is_empty() || (stage == 2 && batch.observations.is_empty()) {
        return Err(Error::Empty("batch"));
    }
    let ctx = Ctx {
        cfg,
        data,
        model,
        template: model.template(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut g = Graph::new();
    let b = model.bind(&mut g, trainable)?;
    let terms = ctx.build(&mut g, &b, stage, batch, &mut rng)?;
    let loss = BatchLoss {
        total: g.scalar(terms.total)?,
        terms: terms
            .named
            .iter()
            .map(|&(n, v)| Ok((n, g.scalar(v)?)))
            .collect::<Result<_>>()?,
    };
    Ok((g, b, terms.total, loss))
}

/// Loss of `batch` under the objective of `stage`; `noise_seed` drives the
/// latent sampling.
pub fn batch_loss(
    stage: u8,
    cfg: &TrainConfig,
    model: &Model,
    data: &Dataset,
    batch: &MixedBatch,
    noise_seed: u64,
) -> Result<BatchLoss> {
    Ok(forward_batch(stage, cfg, model, data, batch, noise_seed, &|_| false)?.3)
}

/// Like [`batch_loss`], and also leaves the gradient of every parameter
/// trainable in `stage` in `model.params` (other gradients are zeroed).
pub fn batch_gradients(
    stage: u8,
    cfg: &TrainConfig,
    model: &mut Model,
    data: &Dataset,
    batch: &MixedBatch,
    noise_seed: u64,
) -> Result<BatchLoss> {
    let trainable = trainable_in(stage, cfg.ablation);
    let (g, b, total, loss) = forward_batch(stage, cfg, model, data, batch, noise_seed, &trainable)?;
    let grads = g.backward(total)?;
    model.params.zero_grads();
    b.accumulate(&grads, &mut model.params)?;
    Ok(loss)
}

/// Runs one training stage in place on `model`, over the training split.
///
/// On a non-finite loss or gradient the stage stops with
/// [`Error::Diverged`]; `model` then holds the last finite parameters.
pub fn run_stage(stage: u8, cfg: &TrainConfig, model: &mut Model, data: &Dataset) -> Result<StageReport> {
    check_stage(stage)?;
    cfg.validate()?;
    if model.config != cfg.net() {
        return Err(Error::invalid("model architecture does not match the training config"));
    }
    let canonical_pool = data.instance_indices(Split::Train);
    let observation_pool = data.record_indices(Split::Train);
    if canonical_pool.is_empty() || observation_pool.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let iters = cfg.iters(stage);
    let trainable = trainable_in(stage, cfg.ablation);
    let mut adam = Adam::new(cfg.adam())?;
    let mut log = LossLog::default();
    let mut totals = Vec::with_capacity(iters);

    for it in 0..iters {
        let batch = stage_batch(cfg, stage, it, &canonical_pool, &observation_pool)?;
        let noise_seed = derive_seed(cfg.seed, &[stage as u64, it as u64, 1]);
        let loss = batch_gradients(stage, cfg, model, data, &batch, noise_seed)
            .map_err(|e| diverged(stage, it, e))?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                stage,
                iteration: it,
                detail: format!("loss {}", loss.total),
            });
        }
        adam.step(&mut model.params, cfg.lr_at(it), &trainable)
            .map_err(|e| diverged(stage, it, e))?;
        totals.push(loss.total);
        if it % cfg.log_every == 0 || it + 1 == iters {
            log.rows.push((it, "total".into(), loss.total));
            for (n, v) in loss.terms {
                log.rows.push((it, n.into(), v));
            }
        }
    }
    model.params.zero_grads();
    let window = (iters / 20).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(StageReport {
        stage,
        iterations: iters,
        initial_loss: mean(&totals[..window]),
        final_loss: mean(&totals[iters - window..]),
        log,
    })
}
