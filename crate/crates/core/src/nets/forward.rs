//! Graph-building forward passes. Clouds are stacked row-wise: a batch of
//! `B` clouds with `K` points each is a `(B·K) × d` matrix.

use super::config::NetConfig;
use super::model::{Bound, DECODER, OBS_ENCODER, PHO_ENCODER, POSE_HEAD, SHAPE_HEAD};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};
use crate::tensor::{Graph, Var};

/// Fewest points an encoder accepts per cloud.
pub const MIN_POINTS: usize = 8;

/// Stacked, centered and scaled network input.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudBatch {
    /// Row-major `(items·per_item) × cols`.
    pub data: Vec<f64>,
    pub cols: usize,
    pub per_item: usize,
    pub items: usize,
    /// Centroid of each source cloud in meters.
    pub centroids: Vec<Vec3>,
}

impl CloudBatch {
    pub fn rows(&self) -> usize {
        self.items * self.per_item
    }

    pub fn var(&self, g: &mut Graph) -> Result<Var> {
        g.constant(self.rows(), self.cols, self.data.clone())
    }

    /// First three columns only.
    pub fn xyz(&self) -> CloudBatch {
        if self.cols == 3 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(self.cols)
            .flat_map(|r| r[..3].iter().copied())
            .collect();
        CloudBatch {
            data,
            cols: 3,
            ..self.clone()
        }
    }
}

/// Indices that spread `n` source points over `k` slots, duplicating or
/// skipping evenly.
pub fn resample_indices(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * n / k).collect()
}

fn stack(
    clouds: &[&PointCloud],
    per_item: usize,
    scale: f64,
    with_color: bool,
) -> Result<CloudBatch> {
    if clouds.is_empty() {
        return Err(Error::Empty("cloud batch"));
    }
    if per_item < MIN_POINTS {
        return Err(Error::invalid(format!(
            "encoders need at least {MIN_POINTS} rows per cloud, got {per_item}"
        )));
    }
    let cols = if with_color { 6 } else { 3 };
    let mut data = Vec::with_capacity(clouds.len() * per_item * cols);
    let mut centroids = Vec::with_capacity(clouds.len());
    for c in clouds {
        if c.is_empty() {
            return Err(Error::Empty("cloud"));
        }
        let centroid = c.centroid();
        let pts = c.points();
        let colors = c.colors();
        for i in resample_indices(c.len(), per_item) {
            let p = pts[i];
            data.extend((0..3).map(|k| (p[k] - centroid[k]) * scale));
            if with_color {
                match colors {
                    Some(col) => data.extend_from_slice(&col[i]),
                    None => data.extend_from_slice(&[0.0; 3]),
                }
            }
        }
        centroids.push(centroid);
    }
    Ok(CloudBatch {
        data,
        cols,
        per_item,
        items: clouds.len(),
        centroids,
    })
}

/// Geometry-only batch of clouds resampled to `per_item` points.
///
/// Clouds smaller than `per_item` have points repeated evenly.
pub fn geometry_batch(clouds: &[&PointCloud], per_item: usize, scale: f64) -> Result<CloudBatch> {
    stack(clouds, per_item, scale, false)
}

/// Position-plus-color batch; missing colors read as black.
pub fn colored_batch(clouds: &[&PointCloud], per_item: usize, scale: f64) -> Result<CloudBatch> {
    stack(clouds, per_item, scale, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Max,
    Mean,
}

/// Shared per-point layers `{prefix}.l0, l1, ...`: hidden layers are
/// linear, normalized, rectified; the last is linear. Then pooled over each
/// cloud of `seg` rows.
pub fn point_net(g: &mut Graph, b: &Bound, prefix: &str, x: Var, seg: usize, pool: Pool) -> Result<Var> {
    let mut h = x;
    let mut i = 0;
    while b.has(&format!("{prefix}.l{i}.w")) {
        let w = b.get(&format!("{prefix}.l{i}.w"))?;
        let bias = b.get(&format!("{prefix}.l{i}.b"))?;
        h = g.linear(h, w, bias)?;
        i += 1;
        if b.has(&format!("{prefix}.l{i}.w")) {
            h = g.layer_norm(h)?;
            h = g.relu(h)?;
        }
    }
    if i == 0 {
        return Err(Error::invalid(format!("no layers under `{prefix}`")));
    }
    match pool {
        Pool::Max => g.segment_max(h, seg),
        Pool::Mean => g.segment_mean(h, seg),
    }
}

fn dense(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = b.get(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"))?;
    g.linear(x, w, bias)
}

/// Max-pooled global feature of geometry-only clouds.
pub fn encode_points(g: &mut Graph, b: &Bound, prefix: &str, xyz: Var, seg: usize) -> Result<Var> {
    point_net(g, b, prefix, xyz, seg, Pool::Max)
}

/// Mean and log-variance heads over a canonical-cloud feature.
pub fn shape_latent(g: &mut Graph, b: &Bound, feature: Var) -> Result<(Var, Var)> {
    let mu = dense(g, b, &format!("{SHAPE_HEAD}.mu"), feature)?;
    let logvar = dense(g, b, &format!("{SHAPE_HEAD}.logvar"), feature)?;
    Ok((mu, logvar))
}

/// View-factorized code of colored observations: mean and log-variance.
pub fn encode_observation(g: &mut Graph, b: &Bound, obs: Var, seg: usize) -> Result<(Var, Var)> {
    let f = point_net(g, b, OBS_ENCODER, obs, seg, Pool::Mean)?;
    let mu = dense(g, b, &format!("{OBS_ENCODER}.mu"), f)?;
    let logvar = dense(g, b, &format!("{OBS_ENCODER}.logvar"), f)?;
    Ok((mu, logvar))
}

/// Mean-pooled photometric feature of colored observations.
pub fn encode_photometric(g: &mut Graph, b: &Bound, obs: Var, seg: usize) -> Result<Var> {
    point_net(g, b, PHO_ENCODER, obs, seg, Pool::Mean)
}

/// `mu + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    let half = g.scale(logvar, 0.5)?;
    let sigma = g.exp(half)?;
    let spread = g.mul(sigma, noise)?;
    g.add(mu, spread)
}

/// Folds the template around each code row. Returns `(B·M) × 3` points in
/// meters, where `M` is the template's row count.
pub fn decode(g: &mut Graph, b: &Bound, cfg: &NetConfig, template: Var, z: Var) -> Result<Var> {
    let (items, _) = g.shape(z)?;
    let (m, _) = g.shape(template)?;
    let zw = g.matmul(z, b.get("decoder.l0.wz")?)?;
    let gw = g.matmul(template, b.get("decoder.l0.wg")?)?;
    let gw = g.add_row(gw, b.get("decoder.l0.b")?)?;
    let per_shape = g.repeat_rows(zw, m)?;
    let per_point = g.tile_rows(gw, items)?;
    let mut h = g.add(per_shape, per_point)?;
    let mut i = 1;
    loop {
        h = g.layer_norm(h)?;
        h = g.relu(h)?;
        h = dense(g, b, &format!("{DECODER}.l{i}"), h)?;
        i += 1;
        if !b.has(&format!("{DECODER}.l{i}.w")) {
            break;
        }
    }
    g.scale(h, 1.0 / cfg.input_scale)
}

/// Pose head over concatenated features: unit quaternions (`B × 4`, `w ≥ 0`)
/// and raw translation offsets (`B × 3`, scaled units).
pub fn pose_head(g: &mut Graph, b: &Bound, bundle: Var) -> Result<(Var, Var)> {
    let mut h = bundle;
    let mut i = 0;
    loop {
        h = dense(g, b, &format!("{POSE_HEAD}.l{i}"), h)?;
        i += 1;
        if !b.has(&format!("{POSE_HEAD}.l{i}.w")) {
            break;
        }
        h = g.layer_norm(h)?;
        h = g.relu(h)?;
    }
    let raw_q = g.slice_cols(h, 0, 4)?;
    let q = g.quat_normalize(raw_q)?;
    let t = g.slice_cols(h, 4, 3)?;
    Ok((q, t))
}
