use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{
    aabb_center, add, box_iou_3d, chamfer, dot, emd, mat_mul, mat_vec, rotation_error,
    transpose, translation_error, Mat3, OrientedBox, PointCloud, Pose, Quat, Vec3,
};
use crate::nets::{resample_indices, Model};
use crate::shapegen::{Dataset, Split};

/// Prediction and ground truth for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub record: usize,
    pub category: String,
    pub symmetry_axis: Option<Vec3>,
    pub pred_pose: Pose,
    /// Full extents of the predicted box.
    pub pred_size: Vec3,
    /// Canonical-frame center of the predicted box.
    pub pred_center: Vec3,
    pub pred_cloud: PointCloud,
    pub gt_pose: Pose,
    pub gt_size: Vec3,
    pub gt_center: Vec3,
    pub gt_canonical: PointCloud,
}

impl PredictionRecord {
    /// Ground truth used as its own prediction.
    pub fn oracle(ds: &Dataset, record: usize) -> Result<Self> {
        let rec = &ds.records[record];
        let inst = ds.instance_of(rec);
        let cat = ds.category(&inst.category)?;
        let center = aabb_center(&inst.canonical)?;
        Ok(PredictionRecord {
            record,
            category: inst.category.clone(),
            symmetry_axis: cat.symmetry_axis,
            pred_pose: rec.pose,
            pred_size: inst.size,
            pred_center: center,
            pred_cloud: inst.canonical.clone(),
            gt_pose: rec.pose,
            gt_size: inst.size,
            gt_center: center,
            gt_canonical: inst.canonical.clone(),
        })
    }
}

/// Runs the model on every record of `split` (no sampling noise).
pub fn predict_split(model: &Model, ds: &Dataset, split: Split) -> Result<Vec<PredictionRecord>> {
    let ids = ds.record_indices(split);
    if ids.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let obs: Vec<&PointCloud> = ids.iter().map(|&i| &ds.records[i].observed).collect();
    let preds = model.predict(&obs)?;
    ids.iter()
        .zip(preds)
        .map(|(&i, p)| {
            let mut r = PredictionRecord::oracle(ds, i)?;
            r.pred_center = p.box_center()?;
            r.pred_pose = p.pose;
            r.pred_size = p.size;
            r.pred_cloud = p.cloud;
            Ok(r)
        })
        .collect()
}

/// Rotation about `axis` (unit) by `angle` radians.
fn axis_rotation(axis: Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + t * x * x, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, c + t * y * y, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, c + t * z * z],
    ]
}

/// Predicted rotation turned about the symmetry axis to best match the
/// ground truth: maximizes `trace(R_gtᵀ · R_pred · Rot(a, θ))`.
pub fn align_about_axis(pred: &Mat3, gt: &Mat3, axis: Vec3) -> Mat3 {
    let a = mat_mul(&transpose(gt), pred);
    let tr = a[0][0] + a[1][1] + a[2][2];
    let aa = dot(axis, mat_vec(&a, axis));
    // trace(A·[a]×) written out.
    let [x, y, z] = axis;
    let skew = a[0][1] * z - a[0][2] * y - a[1][0] * z + a[1][2] * x + a[2][0] * y - a[2][1] * x;
    let theta = skew.atan2(tr - aa);
    mat_mul(pred, &axis_rotation(axis, theta))
}

/// Per-record quantities every metric is derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordScore {
    pub iou: f64,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

fn world_box(pose: &Pose, rotation: &Mat3, center: Vec3, size: Vec3) -> Result<OrientedBox> {
    let q = Quat::from_matrix(rotation)?;
    let c = add(mat_vec(rotation, center), pose.t);
    OrientedBox::new(c, size.map(|s| (s / 2.0).max(1e-9)), q)
}

/// IoU, rotation and translation errors of one record. Symmetric
/// categories compare boxes after aligning the prediction about the axis.
pub fn score_record(r: &PredictionRecord, iou_samples: usize, seed: u64) -> Result<RecordScore> {
    let gt_rot = r.gt_pose.rotation();
    let pred_rot = match r.symmetry_axis {
        Some(a) => align_about_axis(&r.pred_pose.rotation(), &gt_rot, a),
        None => r.pred_pose.rotation(),
    };
    let pb = world_box(&r.pred_pose, &pred_rot, r.pred_center, r.pred_size)?;
    let gb = world_box(&r.gt_pose, &gt_rot, r.gt_center, r.gt_size)?;
    Ok(RecordScore {
        iou: box_iou_3d(&pb, &gb, iou_samples, seed)?,
        rotation_deg: rotation_error(&r.pred_pose, &r.gt_pose, r.symmetry_axis),
        translation_m: translation_error(&r.pred_pose, &r.gt_pose),
    })
}

/// Scores every record in parallel; seeds depend only on the record id.
pub fn score_records(preds: &[PredictionRecord], iou_samples: usize, seed: u64) -> Result<Vec<RecordScore>> {
    preds
        .par_iter()
        .map(|r| score_record(r, iou_samples, crate::seed::derive_seed(seed, &[r.record as u64])))
        .collect()
}

/// Chamfer and EMD between prediction and ground-truth clouds. EMD first
/// resamples both clouds evenly to the smaller count.
pub fn recon_errors(r: &PredictionRecord) -> Result<(f64, f64)> {
    let cd = chamfer(&r.pred_cloud, &r.gt_canonical)?;
    let n = r.pred_cloud.len().min(r.gt_canonical.len());
    let pick = |c: &PointCloud| c.select(&resample_indices(c.len(), n));
    let em = emd(&pick(&r.pred_cloud)?, &pick(&r.gt_canonical)?)?;
    Ok((cd, em))
}
