use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pose::{mat_vec, transpose, Quat, Vec3};
use crate::error::{Error, Result};

/// Fewest Monte-Carlo samples accepted by [`box_iou_3d`].
pub const MIN_IOU_SAMPLES: usize = 100_000;

/// Box with half-length `extents` along the axes of `rotation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub extents: Vec3,
    pub rotation: Quat,
}

impl OrientedBox {
    pub fn new(center: Vec3, extents: Vec3, rotation: Quat) -> Result<Self> {
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::invalid(format!("degenerate box extents {extents:?}")));
        }
        Ok(OrientedBox {
            center,
            extents,
            rotation,
        })
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.extents.iter().product::<f64>()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation.matrix();
        std::array::from_fn(|i| {
            let local = [
                if i & 1 == 0 { -1.0 } else { 1.0 } * self.extents[0],
                if i & 2 == 0 { -1.0 } else { 1.0 } * self.extents[1],
                if i & 4 == 0 { -1.0 } else { 1.0 } * self.extents[2],
            ];
            let w = mat_vec(&r, local);
            [w[0] + self.center[0], w[1] + self.center[1], w[2] + self.center[2]]
        })
    }
}

/// World → box-local transform, reused across many containment queries.
struct LocalFrame {
    rt: [[f64; 3]; 3],
    center: Vec3,
    extents: Vec3,
}

impl LocalFrame {
    fn new(b: &OrientedBox) -> Self {
        LocalFrame {
            rt: transpose(&b.rotation.matrix()),
            center: b.center,
            extents: b.extents,
        }
    }

    fn contains(&self, p: Vec3) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        (0..3).all(|i| {
            let l = self.rt[i][0] * d[0] + self.rt[i][1] * d[1] + self.rt[i][2] * d[2];
            l.abs() <= self.extents[i]
        })
    }
}

fn same_rotation(a: Quat, b: Quat) -> bool {
    let d = (a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z).abs();
    d > 1.0 - 1e-12
}

/// 3-D IoU of two oriented boxes.
///
/// Boxes sharing a rotation take the exact path; otherwise a stratified
/// Monte-Carlo estimate with `samples` points over the union's bounding box
/// is returned, deterministic in `seed`.
pub fn box_iou_3d(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> Result<f64> {
    if samples < MIN_IOU_SAMPLES {
        return Err(Error::invalid(format!(
            "box IoU needs at least {MIN_IOU_SAMPLES} samples, got {samples}"
        )));
    }
    OrientedBox::new(a.center, a.extents, a.rotation)?;
    OrientedBox::new(b.center, b.extents, b.rotation)?;
    if same_rotation(a.rotation, b.rotation) {
        Ok(box_iou_aligned(a, b))
    } else {
        box_iou_monte_carlo(a, b, samples, seed)
    }
}

/// Exact IoU for boxes with the same rotation: intersect the intervals in
/// the shared frame.
pub fn box_iou_aligned(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let rt = transpose(&a.rotation.matrix());
    let d = [b.center[0] - a.center[0], b.center[1] - a.center[1], b.center[2] - a.center[2]];
    let off = mat_vec(&rt, d);
    let mut inter = 1.0;
    for i in 0..3 {
        let lo = (-a.extents[i]).max(off[i] - b.extents[i]);
        let hi = a.extents[i].min(off[i] + b.extents[i]);
        inter *= (hi - lo).max(0.0);
    }
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Stratified Monte-Carlo IoU: one jittered sample per cell of a k³ grid
/// spanning the union's axis-aligned bounds, with k³ ≥ `samples`.
pub fn box_iou_monte_carlo(
    a: &OrientedBox,
    b: &OrientedBox,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("zero IoU samples"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners().iter().chain(b.corners().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let k = (samples as f64).cbrt().ceil() as usize;
    let step = [0, 1, 2].map(|i| (hi[i] - lo[i]) / k as f64);
    let (fa, fb) = (LocalFrame::new(a), LocalFrame::new(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut both, mut either) = (0u64, 0u64);
    for ix in 0..k {
        for iy in 0..k {
            for iz in 0..k {
                let p = [
                    lo[0] + (ix as f64 + rng.random::<f64>()) * step[0],
                    lo[1] + (iy as f64 + rng.random::<f64>()) * step[1],
                    lo[2] + (iz as f64 + rng.random::<f64>()) * step[2],
                ];
                let (ina, inb) = (fa.contains(p), fb.contains(p));
                if ina && inb {
                    both += 1;
                }
                if ina || inb {
                    either += 1;
                }
            }
        }
    }
    Ok(if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    })
}
