use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::instance::Instance;
use crate::error::{Error, Result};
use crate::geom::{apply_pose, norm, PointCloud, Pose};

/// Fewest points an observation may keep.
pub const MIN_OBSERVED_POINTS: usize = 8;

/// Segmented partial view of one instance in the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    /// Index into the dataset's instance list.
    pub instance: usize,
    pub observed: PointCloud,
    pub pose: Pose,
}

/// Render settings for [`render_observation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSettings {
    /// Points drawn from the posed instance before culling.
    pub points: usize,
    /// Fraction of those kept, in `[0.3, 1]`.
    pub visibility: f64,
    /// Standard deviation of isotropic noise, meters.
    pub noise_sigma: f64,
}

impl ViewSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.3..=1.0).contains(&self.visibility) {
            return Err(Error::invalid(format!(
                "visibility must lie in [0.3, 1], got {}",
                self.visibility
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and non-negative"));
        }
        if self.points == 0 {
            return Err(Error::invalid("observation point budget must be positive"));
        }
        Ok(())
    }
}

/// Poses the canonical cloud, subsamples `points` of it, keeps the fraction
/// facing the camera at the origin and jitters it with Gaussian noise.
///
/// Facing is ranked by `(p − t)·(−t̂)`: the offset of each point from the
/// object center projected on the direction back to the camera.
pub fn render_observation(
    instance: &Instance,
    instance_id: usize,
    pose: Pose,
    view: ViewSettings,
    seed: u64,
) -> Result<ObservationRecord> {
    view.validate()?;
    let m = instance.canonical.len();
    if view.points > m {
        return Err(Error::invalid(format!(
            "observation budget {} exceeds instance size {m}",
            view.points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let posed = apply_pose(&pose, &instance.canonical);
    let mut chosen: Vec<usize> = if view.points == m {
        (0..m).collect()
    } else {
        let mut idx = sample(&mut rng, m, view.points).into_vec();
        idx.sort_unstable();
        idx
    };

    let keep = (view.visibility * view.points as f64).round() as usize;
    if keep < MIN_OBSERVED_POINTS {
        return Err(Error::invalid(format!(
            "visibility leaves {keep} points, need at least {MIN_OBSERVED_POINTS}"
        )));
    }
    if keep < chosen.len() {
        let t = pose.t;
        let d = norm(t);
        let toward = if d > 0.0 { t.map(|v| -v / d) } else { [0.0, 0.0, -1.0] };
        let pts = posed.points();
        let facing = |i: usize| {
            let p = pts[i];
            (p[0] - t[0]) * toward[0] + (p[1] - t[1]) * toward[1] + (p[2] - t[2]) * toward[2]
        };
        chosen.sort_by(|&a, &b| facing(b).total_cmp(&facing(a)).then(a.cmp(&b)));
        chosen.truncate(keep);
        chosen.sort_unstable();
    }

    let mut observed = posed.select(&chosen)?;
    if view.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, view.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise: {e}")))?;
        let noisy: Vec<[f64; 3]> = observed
            .points()
            .iter()
            .map(|p| p.map(|v| v + normal.sample(&mut rng)))
            .collect();
        observed = match observed.colors() {
            Some(c) => PointCloud::with_colors(noisy, c.to_vec())?,
            None => PointCloud::new(noisy)?,
        };
    }
    Ok(ObservationRecord {
        instance: instance_id,
        observed,
        pose,
    })
}
