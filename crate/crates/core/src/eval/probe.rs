use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{cross, dot, mat_vec, norm, scale, sub, Mat3, PointCloud, Vec3};
use crate::nets::Model;
use crate::seed::derive_seed;
use crate::shapegen::Dataset;

/// Fewest samples a probe accepts.
pub const MIN_PROBE_SAMPLES: usize = 50;

/// Median rotation error of linear probes on held-out records, degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    /// Probe on the view-factorized shape code.
    pub code_error_deg: f64,
    /// Probe on the pose-dependent geometric feature.
    pub geometric_error_deg: f64,
    /// Probe on i.i.d. Gaussian features of the same width.
    pub chance_error_deg: f64,
    pub train: usize,
    pub test: usize,
}

/// First two columns of `r`, stacked.
fn six_d(r: &Mat3) -> [f64; 6] {
    [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]]
}

/// Gram-Schmidt completion of a 6-D prediction to a rotation.
fn from_six_d(v: &[f64]) -> Mat3 {
    let unit = |a: Vec3| {
        let n = norm(a);
        if n > 1e-12 {
            Some(scale(a, 1.0 / n))
        } else {
            None
        }
    };
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let b1 = unit(a1).unwrap_or([1.0, 0.0, 0.0]);
    let b2 = unit(sub(a2, scale(b1, dot(b1, a2))))
        .unwrap_or_else(|| if b1[0].abs() < 0.9 { unit(cross(b1, [1.0, 0.0, 0.0])).unwrap() } else { unit(cross(b1, [0.0, 1.0, 0.0])).unwrap() });
    let b3 = cross(b1, b2);
    [[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]]
}

fn angle_deg(pred: &Mat3, gt: &Mat3, axis: Option<Vec3>) -> f64 {
    match axis {
        Some(a) => {
            let (p, g) = (mat_vec(pred, a), mat_vec(gt, a));
            norm(cross(p, g)).atan2(dot(p, g)).to_degrees()
        }
        None => {
            let tr: f64 = (0..3)
                .map(|i| (0..3).map(|k| pred[i][k] * gt[i][k]).sum::<f64>())
                .sum();
            ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Fits a ridge-regularized linear map (with bias) from `features` to the
/// 6-D rotation of each training sample and returns the median error on the
/// test samples. Symmetric samples are scored on their axis only.
pub fn probe_error(
    features: &[Vec<f64>],
    rotations: &[Mat3],
    axes: &[Option<Vec3>],
    train: &[usize],
    test: &[usize],
) -> Result<f64> {
    if train.len() + test.len() < MIN_PROBE_SAMPLES || test.is_empty() || train.is_empty() {
        return Err(Error::invalid(format!(
            "probe needs at least {MIN_PROBE_SAMPLES} samples, got {}",
            train.len() + test.len()
        )));
    }
    let d = features[train[0]].len() + 1;
    let design = |ids: &[usize]| {
        DMatrix::from_fn(ids.len(), d, |r, c| if c + 1 == d { 1.0 } else { features[ids[r]][c] })
    };
    let x = design(train);
    let y = DMatrix::from_fn(train.len(), 6, |r, c| six_d(&rotations[train[r]])[c]);
    let mut xtx = x.transpose() * &x;
    let lambda = 1e-6 * (xtx.trace() / d as f64).max(1e-12);
    for i in 0..d {
        xtx[(i, i)] += lambda;
    }
    let xty = x.transpose() * y;
    let w = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| Error::invalid("probe system is singular"))?,
    };
    let pred = design(test) * w;
    let errs = test
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let row: Vec<f64> = (0..6).map(|c| pred[(r, c)]).collect();
            angle_deg(&from_six_d(&row), &rotations[i], axes[i])
        })
        .collect();
    Ok(median(errs))
}

/// Probes the shape code and the geometric feature of every record for the
/// ground-truth rotation, with a seeded 70/30 record split, and compares
/// against Gaussian features of the same width.
pub fn factorization_probe(model: &Model, ds: &Dataset, seed: u64) -> Result<ProbeReport> {
    let n = ds.records.len();
    if n < MIN_PROBE_SAMPLES {
        return Err(Error::invalid(format!(
            "probe needs at least {MIN_PROBE_SAMPLES} samples, got {n}"
        )));
    }
    let obs: Vec<&PointCloud> = ds.records.iter().map(|r| &r.observed).collect();
    let preds = model.predict(&obs)?;
    let rotations: Vec<Mat3> = ds.records.iter().map(|r| r.pose.rotation()).collect();
    let axes = ds
        .records
        .iter()
        .map(|r| Ok(ds.category(&ds.instance_of(r).category)?.symmetry_axis))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0])));
    let cut = (n as f64 * 0.7).round() as usize;
    let (train, test) = order.split_at(cut);

    let code: Vec<Vec<f64>> = preds.iter().map(|p| p.features.code.clone()).collect();
    let geo: Vec<Vec<f64>> = preds.iter().map(|p| p.features.geometric.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let width = code[0].len();
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..width).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    Ok(ProbeReport {
        code_error_deg: probe_error(&code, &rotations, &axes, train, test)?,
        geometric_error_deg: probe_error(&geo, &rotations, &axes, train, test)?,
        chance_error_deg: probe_error(&noise, &rotations, &axes, train, test)?,
        train: train.len(),
        test: test.len(),
    })
}
