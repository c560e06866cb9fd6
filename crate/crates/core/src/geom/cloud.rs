use super::pose::{Pose, Vec3};
use crate::error::{Error, Result};

/// Point set in meters with optional per-point RGB in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(PointCloud {
            points,
            colors: None,
        })
    }

    pub fn with_colors(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self> {
        let mut c = PointCloud::new(points)?;
        c.set_colors(colors)?;
        Ok(c)
    }

    pub fn set_colors(&mut self, colors: Vec<Vec3>) -> Result<()> {
        if colors.len() != self.points.len() {
            return Err(Error::shape(
                "point cloud colors",
                format!("{} colors for {} points", colors.len(), self.points.len()),
            ));
        }
        if colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("colors must lie in [0, 1]"));
        }
        self.colors = Some(colors);
        Ok(())
    }

    /// Cloud from a row-major `n × 3` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::shape("point cloud", format!("{} values", flat.len())));
        }
        PointCloud::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn flat_colors(&self) -> Option<Vec<f64>> {
        self.colors
            .as_ref()
            .map(|c| c.iter().flatten().copied().collect())
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Same colors, points mapped by `f`.
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Keeps the points (and colors) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("point selection"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.points.len()) {
            return Err(Error::invalid(format!("point index {bad} out of range")));
        }
        Ok(PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Rounds every coordinate and color to the nearest `f32`.
    pub fn quantize_f32(&self) -> Self {
        let q = |v: Vec3| v.map(|x| x as f32 as f64);
        PointCloud {
            points: self.points.iter().map(|&p| q(p)).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| c.iter().map(|&p| q(p)).collect()),
        }
    }
}

/// Maps every point to `R·x + t`; colors are carried over.
pub fn apply_pose(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    let r = pose.rotation();
    cloud.map_points(|p| {
        let mut out = pose.t;
        for i in 0..3 {
            out[i] += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    })
}

/// Componentwise `max − min`.
pub fn aabb_size(cloud: &PointCloud) -> Result<Vec3> {
    let (lo, hi) = aabb(cloud)?;
    Ok([hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]])
}

/// Center of the axis-aligned bounding box.
pub fn aabb_center(cloud: &PointCloud) -> Result<Vec3> {
    let (lo, hi) = aabb(cloud)?;
    Ok([(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0, (hi[2] + lo[2]) / 2.0])
}

fn aabb(cloud: &PointCloud) -> Result<(Vec3, Vec3)> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose::{distance, Quat};

    #[test]
    fn identity_pose_is_noop() {
        let c = PointCloud::new(vec![[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5]]).unwrap();
        assert_eq!(apply_pose(&Pose::IDENTITY, &c), c);
    }

    #[test]
    fn aabb_cases() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let cube = PointCloud::new(corners).unwrap();
        assert_eq!(aabb_size(&cube).unwrap(), [1.0, 1.0, 1.0]);
        let single = PointCloud::new(vec![[3.0, -1.0, 2.0]]).unwrap();
        assert_eq!(aabb_size(&single).unwrap(), [0.0, 0.0, 0.0]);
        let doubled = cube.map_points(|p| p.map(|v| v * 2.0));
        assert_eq!(aabb_size(&doubled).unwrap(), [2.0, 2.0, 2.0]);
    }

    #[test]
    fn rigid_motion_preserves_distances() {
        let c = PointCloud::new(vec![[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5], [0.0, 0.0, 4.0]]).unwrap();
        let q = Quat::new(0.3, -0.5, 0.2, 0.7).unwrap();
        let moved = apply_pose(&Pose::new(q, [1.0, 2.0, -3.0]).unwrap(), &c);
        for i in 0..3 {
            for j in 0..3 {
                let a = distance(c.points()[i], c.points()[j]);
                let b = distance(moved.points()[i], moved.points()[j]);
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(PointCloud::with_colors(vec![[0.0; 3]], vec![[1.5, 0.0, 0.0]]).is_err());
    }
}
