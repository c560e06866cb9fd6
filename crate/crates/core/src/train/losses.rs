use crate::error::{Error, Result};
use crate::geom::{apply_pose, chamfer, nearest_neighbors, PointCloud, Pose, Vec3};
use crate::tensor::{Graph, Var};

fn rows3(v: &[f64]) -> Vec<Vec3> {
    v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Symmetric Chamfer distance between stacked clouds, averaged over the
/// `items` pairs. `a` holds `items` clouds of equal size, as does `b`.
pub fn chamfer_loss(g: &mut Graph, a: Var, b: Var, items: usize) -> Result<Var> {
    let ((ra, ca), (rb, cb)) = (g.shape(a)?, g.shape(b)?);
    if ca != 3 || cb != 3 || items == 0 || ra % items != 0 || rb % items != 0 {
        return Err(Error::shape(
            "chamfer_loss",
            format!("{ra}x{ca} vs {rb}x{cb} over {items} items"),
        ));
    }
    let (ka, kb) = (ra / items, rb / items);
    let pa = rows3(g.value(a)?);
    let pb = rows3(g.value(b)?);
    let mut a_to_b = Vec::with_capacity(ra);
    let mut b_to_a = Vec::with_capacity(rb);
    for i in 0..items {
        let (sa, sb) = (&pa[i * ka..(i + 1) * ka], &pb[i * kb..(i + 1) * kb]);
        a_to_b.extend(nearest_neighbors(sa, sb).into_iter().map(|(j, _)| i * kb + j));
        b_to_a.extend(nearest_neighbors(sb, sa).into_iter().map(|(j, _)| i * ka + j));
    }
    let near_b = g.gather_rows(b, &a_to_b)?;
    let d_ab = g.sub(a, near_b)?;
    let n_ab = g.row_norm(d_ab)?;
    let m_ab = g.mean(n_ab)?;
    let near_a = g.gather_rows(a, &b_to_a)?;
    let d_ba = g.sub(b, near_a)?;
    let n_ba = g.row_norm(d_ba)?;
    let m_ba = g.mean(n_ba)?;
    g.add(m_ab, m_ba)
}

/// `−½ Σ (1 + logvar − mu² − exp(logvar))`, summed over code dimensions and
/// averaged over rows.
pub fn kl_loss(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let (rows, _) = g.shape(mu)?;
    let mu2 = g.square(mu)?;
    let ev = g.exp(logvar)?;
    let a = g.add_scalar(logvar, 1.0)?;
    let b = g.sub(a, mu2)?;
    let c = g.sub(b, ev)?;
    let s = g.sum(c)?;
    g.scale(s, -0.5 / rows as f64)
}

/// Mean squared-L2 distance between matching rows.
pub fn alignment_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (rows, _) = g.shape(a)?;
    let d = g.sub(a, b)?;
    let d2 = g.square(d)?;
    let s = g.sum(d2)?;
    g.scale(s, 1.0 / rows as f64)
}

/// One item of the pose loss.
pub struct PoseTarget<'a> {
    /// Ground-truth canonical cloud.
    pub canonical: &'a PointCloud,
    pub pose: Pose,
    pub symmetric: bool,
}

/// Pose loss averaged over items. `quats` is `B × 4` (unit rows) and
/// `translations` is `B × 3` in meters.
///
/// Each item transforms its canonical cloud by the predicted and true
/// poses; the loss is the mean point-to-point distance, or the symmetric
/// Chamfer distance for rotationally symmetric items.
pub fn pose_loss(g: &mut Graph, quats: Var, translations: Var, targets: &[PoseTarget<'_>]) -> Result<Var> {
    let (b, _) = g.shape(quats)?;
    if b != targets.len() || b == 0 {
        return Err(Error::shape("pose_loss", format!("{b} poses for {} targets", targets.len())));
    }
    let mut total: Option<Var> = None;
    for (i, tg) in targets.iter().enumerate() {
        let q = g.slice_rows(quats, i, 1)?;
        let r = g.quat_to_rot(q)?;
        let rt = g.transpose(r)?;
        let t = g.slice_rows(translations, i, 1)?;
        let x = g.constant(tg.canonical.len(), 3, tg.canonical.flat())?;
        let xr = g.matmul(x, rt)?;
        let pred = g.add_row(xr, t)?;
        let gt = apply_pose(&tg.pose, tg.canonical);
        let gt = g.constant(gt.len(), 3, gt.flat())?;
        let term = if tg.symmetric {
            chamfer_loss(g, pred, gt, 1)?
        } else {
            let d = g.sub(pred, gt)?;
            let n = g.row_norm(d)?;
            g.mean(n)?
        };
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one item");
    g.scale(total, 1.0 / b as f64)
}

/// Pose loss for a single prediction, computed directly on clouds.
pub fn loss_pose(pred: &Pose, gt: &Pose, canonical: &PointCloud, symmetric: bool) -> Result<f64> {
    let a = apply_pose(pred, canonical);
    let b = apply_pose(gt, canonical);
    if symmetric {
        chamfer(&a, &b)
    } else {
        let n = a.len() as f64;
        Ok(a.points()
            .iter()
            .zip(b.points())
            .map(|(p, q)| crate::geom::distance(*p, *q))
            .sum::<f64>()
            / n)
    }
}
