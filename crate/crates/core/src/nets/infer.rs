//! Gradient-free inference wrappers over the graph forward passes.

use super::forward::{self, colored_batch, geometry_batch, MIN_POINTS};
use super::model::{Model, GEO_ENCODER, POINT_ENCODER};
use crate::error::{Error, Result};
use crate::geom::{aabb_center, aabb_size, PointCloud, Pose, Quat, Vec3};
use crate::tensor::{Graph, Var};

/// Variational code; `z` equals `mu` at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// The three pose-head inputs for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// View-factorized shape code.
    pub code: Vec<f64>,
    pub photometric: Vec<f64>,
    /// Pose-dependent geometric feature.
    pub geometric: Vec<f64>,
}

/// Full prediction for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub pose: Pose,
    /// AABB extents of the reconstruction.
    pub size: Vec3,
    /// Canonical-frame reconstruction in meters.
    pub cloud: PointCloud,
    pub features: FeatureBundle,
}

impl Prediction {
    /// Center of the reconstruction's AABB in the canonical frame.
    pub fn box_center(&self) -> Result<Vec3> {
        aabb_center(&self.cloud)
    }
}

const CHUNK: usize = 64;

fn check_points(cloud: &PointCloud) -> Result<()> {
    if cloud.len() < MIN_POINTS {
        return Err(Error::invalid(format!(
            "cloud has {} points, encoders need at least {MIN_POINTS}",
            cloud.len()
        )));
    }
    Ok(())
}

fn rows(g: &Graph, v: Var) -> Result<Vec<Vec<f64>>> {
    let (_, c) = g.shape(v)?;
    Ok(g.value(v)?.chunks(c).map(<[f64]>::to_vec).collect())
}

impl Model {
    fn geo_prefix(&self) -> &'static str {
        if self.config.siamese {
            POINT_ENCODER
        } else {
            GEO_ENCODER
        }
    }

    /// Global feature of the shared point encoder.
    pub fn encode_points(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        check_points(cloud)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let batch = geometry_batch(&[cloud], cloud.len(), self.config.input_scale)?;
        let x = batch.var(&mut g)?;
        let f = forward::encode_points(&mut g, &b, POINT_ENCODER, x, cloud.len())?;
        Ok(g.value(f)?.to_vec())
    }

    /// Canonical-cloud code through the shared encoder and shape heads.
    pub fn encode_shape(&self, cloud: &PointCloud) -> Result<LatentCode> {
        check_points(cloud)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let batch = geometry_batch(&[cloud], cloud.len(), self.config.input_scale)?;
        let x = batch.var(&mut g)?;
        let f = forward::encode_points(&mut g, &b, POINT_ENCODER, x, cloud.len())?;
        let (mu, logvar) = forward::shape_latent(&mut g, &b, f)?;
        let mu = g.value(mu)?.to_vec();
        Ok(LatentCode {
            z: mu.clone(),
            mu,
            logvar: g.value(logvar)?.to_vec(),
        })
    }

    pub fn encode_observation(&self, obs: &PointCloud) -> Result<LatentCode> {
        check_points(obs)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let batch = colored_batch(&[obs], self.config.obs_points, self.config.input_scale)?;
        let x = batch.var(&mut g)?;
        let (mu, logvar) = forward::encode_observation(&mut g, &b, x, self.config.obs_points)?;
        let mu = g.value(mu)?.to_vec();
        Ok(LatentCode {
            z: mu.clone(),
            mu,
            logvar: g.value(logvar)?.to_vec(),
        })
    }

    pub fn encode_photometric(&self, obs: &PointCloud) -> Result<Vec<f64>> {
        check_points(obs)?;
        if obs.colors().is_none() {
            return Err(Error::invalid("photometric encoding needs colors"));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let batch = colored_batch(&[obs], self.config.obs_points, self.config.input_scale)?;
        let x = batch.var(&mut g)?;
        let f = forward::encode_photometric(&mut g, &b, x, self.config.obs_points)?;
        Ok(g.value(f)?.to_vec())
    }

    pub fn decode_latent(&self, z: &[f64]) -> Result<PointCloud> {
        if z.len() != self.config.latent_dim {
            return Err(Error::shape(
                "decode_latent",
                format!("code of {} for latent size {}", z.len(), self.config.latent_dim),
            ));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let tpl = self.template();
        let t = g.constant(self.config.points, self.config.template.dim(), tpl)?;
        let zv = g.constant(1, z.len(), z.to_vec())?;
        let out = forward::decode(&mut g, &b, &self.config, t, zv)?;
        PointCloud::from_flat(g.value(out)?)
    }

    /// Pose from a feature bundle; `centroid` is the observation centroid
    /// the translation is predicted relative to.
    pub fn pose_from_features(&self, bundle: &FeatureBundle, centroid: Vec3) -> Result<Pose> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false)?;
        let mut parts = Vec::new();
        if self.config.pose_uses_code {
            parts.extend_from_slice(&bundle.code);
        }
        parts.extend_from_slice(&bundle.photometric);
        parts.extend_from_slice(&bundle.geometric);
        if parts.len() != self.config.head_input() {
            return Err(Error::shape(
                "pose_head",
                format!("{} inputs, expected {}", parts.len(), self.config.head_input()),
            ));
        }
        let x = g.constant(1, parts.len(), parts)?;
        let (q, t) = forward::pose_head(&mut g, &b, x)?;
        self.assemble_pose(g.value(q)?, g.value(t)?, centroid)
    }

    fn assemble_pose(&self, q: &[f64], t: &[f64], centroid: Vec3) -> Result<Pose> {
        let quat = Quat::new(q[0], q[1], q[2], q[3])?;
        let s = self.config.input_scale;
        Pose::new(quat, [0, 1, 2].map(|k| centroid[k] + t[k] / s))
    }

    /// Reconstructions of canonical clouds through the shape branch.
    pub fn reconstruct(&self, clouds: &[&PointCloud]) -> Result<Vec<PointCloud>> {
        let mut out = Vec::with_capacity(clouds.len());
        for chunk in clouds.chunks(CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, |_| false)?;
            let per = chunk[0].len();
            let batch = geometry_batch(chunk, per, self.config.input_scale)?;
            let x = batch.var(&mut g)?;
            let f = forward::encode_points(&mut g, &b, POINT_ENCODER, x, per)?;
            let (mu, _) = forward::shape_latent(&mut g, &b, f)?;
            let t = g.constant(self.config.points, self.config.template.dim(), self.template())?;
            let pts = forward::decode(&mut g, &b, &self.config, t, mu)?;
            for c in g.value(pts)?.chunks(self.config.points * 3) {
                out.push(PointCloud::from_flat(c)?);
            }
        }
        Ok(out)
    }

    /// Pose, size and reconstruction for each observation (no sampling).
    pub fn predict(&self, observations: &[&PointCloud]) -> Result<Vec<Prediction>> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity(observations.len());
        for o in observations {
            check_points(o)?;
        }
        for chunk in observations.chunks(CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, |_| false)?;
            let colored = colored_batch(chunk, cfg.obs_points, cfg.input_scale)?;
            let xc = colored.var(&mut g)?;
            let xg = colored.xyz().var(&mut g)?;
            let (mu, _) = forward::encode_observation(&mut g, &b, xc, cfg.obs_points)?;
            let pho = forward::encode_photometric(&mut g, &b, xc, cfg.obs_points)?;
            let geo = forward::encode_points(&mut g, &b, self.geo_prefix(), xg, cfg.obs_points)?;
            let bundle = if cfg.pose_uses_code {
                g.concat_cols(&[mu, pho, geo])?
            } else {
                g.concat_cols(&[pho, geo])?
            };
            let (q, t) = forward::pose_head(&mut g, &b, bundle)?;
            let tpl = g.constant(cfg.points, cfg.template.dim(), self.template())?;
            let pts = forward::decode(&mut g, &b, cfg, tpl, mu)?;

            let (qs, ts) = (rows(&g, q)?, rows(&g, t)?);
            let (mus, phos, geos) = (rows(&g, mu)?, rows(&g, pho)?, rows(&g, geo)?);
            let clouds: Vec<&[f64]> = g.value(pts)?.chunks(cfg.points * 3).collect();
            for i in 0..chunk.len() {
                let cloud = PointCloud::from_flat(clouds[i])?;
                out.push(Prediction {
                    pose: self.assemble_pose(&qs[i], &ts[i], colored.centroids[i])?,
                    size: aabb_size(&cloud)?,
                    cloud,
                    features: FeatureBundle {
                        code: mus[i].clone(),
                        photometric: phos[i].clone(),
                        geometric: geos[i].clone(),
                    },
                });
            }
        }
        Ok(out)
    }
}
