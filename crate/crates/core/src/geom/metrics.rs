use super::assignment;
use super::cloud::PointCloud;
use super::pose::{cross, distance, dot, mat_vec, norm, Pose, Vec3};
use crate::error::{Error, Result};

/// Largest cloud accepted by the exact EMD solver.
pub const EMD_EXACT_CAP: usize = 256;

/// For each point of `a`, the index of and distance to its nearest point
/// in `b` (brute force; ties resolve to the lowest index).
pub fn nearest_neighbors(a: &[Vec3], b: &[Vec3]) -> Vec<(usize, f64)> {
    a.iter()
        .map(|&p| {
            let mut best = (0usize, f64::INFINITY);
            for (j, &q) in b.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// Mean over `a` of the distance to the nearest point of `b`.
pub fn one_sided_chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer"));
    }
    let nn = nearest_neighbors(a.points(), b.points());
    Ok(nn.iter().map(|(_, d)| d).sum::<f64>() / a.len() as f64)
}

/// Symmetric Chamfer distance: sum of the two mean nearest-neighbor
/// distances (unsquared).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(one_sided_chamfer(a, b)? + one_sided_chamfer(b, a)?)
}

/// Earth mover's distance: minimum mean matched distance over bijections.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let n = a.len();
    if n == 0 || b.is_empty() {
        return Err(Error::Empty("emd"));
    }
    if n != b.len() {
        return Err(Error::invalid(format!("emd cardinality mismatch {n} vs {}", b.len())));
    }
    if n > EMD_EXACT_CAP {
        return Err(Error::invalid(format!("emd supports at most {EMD_EXACT_CAP} points, got {n}")));
    }
    let mut costs = Vec::with_capacity(n * n);
    for &p in a.points() {
        for &q in b.points() {
            costs.push(distance(p, q));
        }
    }
    let assign = assignment::solve(&costs, n)?;
    Ok(assign
        .iter()
        .enumerate()
        .map(|(i, &j)| costs[i * n + j])
        .sum::<f64>()
        / n as f64)
}

/// Mean distance from each point to its nearest neighbor within the cloud.
pub fn mean_nn_spacing(cloud: &PointCloud) -> Result<f64> {
    let pts = cloud.points();
    if pts.len() < 2 {
        return Err(Error::invalid("spacing needs at least two points"));
    }
    let mut total = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, &q) in pts.iter().enumerate() {
            if i != j {
                best = best.min(distance(p, q));
            }
        }
        total += best;
    }
    Ok(total / pts.len() as f64)
}

/// Rotation error in degrees.
///
/// Without a symmetry axis this is the geodesic angle of `R_pred · R_gtᵀ`,
/// i.e. `arccos((trace − 1) / 2)`, evaluated through the relative quaternion
/// for accuracy near 0° and 180°. With a canonical-frame axis `a`, it is the
/// angle between `R_pred·a` and `R_gt·a`, so rotation about the axis is
/// ignored.
pub fn rotation_error(pred: &Pose, gt: &Pose, symmetry_axis: Option<Vec3>) -> f64 {
    match symmetry_axis {
        Some(a) => {
            let (pa, ga) = (mat_vec(&pred.rotation(), a), mat_vec(&gt.rotation(), a));
            norm(cross(pa, ga)).atan2(dot(pa, ga)).to_degrees()
        }
        None => {
            let rel = pred.q.mul(gt.q.conjugate());
            let v = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
            (2.0 * v.atan2(rel.w.abs())).to_degrees()
        }
    }
}

/// Translation error in meters.
pub fn translation_error(pred: &Pose, gt: &Pose) -> f64 {
    distance(pred.t, gt.t)
}
