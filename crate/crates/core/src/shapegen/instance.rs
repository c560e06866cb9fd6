use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::category::CategorySpec;
use super::template::{Region, Surface};
use crate::error::{Error, Result};
use crate::geom::{aabb_size, PointCloud, Vec3};

/// Held-out flag of an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// One shape drawn from a category, centered and in canonical orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub category: String,
    pub shape_params: Vec<f64>,
    /// Surface samples with procedural colors.
    pub canonical: PointCloud,
    /// Full AABB extents of `canonical`.
    pub size: Vec3,
    pub split: Split,
}

impl Instance {
    /// Rebuilds an instance from stored parts, recomputing the size.
    pub fn from_parts(
        category: String,
        shape_params: Vec<f64>,
        canonical: PointCloud,
        split: Split,
    ) -> Result<Self> {
        let size = aabb_size(&canonical)?;
        Ok(Instance {
            category,
            shape_params,
            canonical,
            size,
            split,
        })
    }

    /// Length of the AABB diagonal.
    pub fn diagonal(&self) -> f64 {
        crate::geom::norm(self.size)
    }

    /// Copy with points and colors rounded to `f32`.
    pub fn quantized(&self) -> Instance {
        let canonical = self.canonical.quantize_f32();
        let size = aabb_size(&canonical).unwrap_or(self.size);
        Instance {
            canonical,
            size,
            ..self.clone()
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> Vec3 {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6 as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Draws shape parameters uniformly from the category ranges and samples
/// `points` surface points spread evenly by area, centered on their
/// centroid.
pub fn sample_instance(category: &CategorySpec, points: usize, seed: u64) -> Result<Instance> {
    category.validate()?;
    if points < 8 {
        return Err(Error::invalid(format!("instance needs at least 8 points, got {points}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<f64> = category
        .ranges
        .iter()
        .map(|r| if r.hi > r.lo { rng.random_range(r.lo..=r.hi) } else { r.lo })
        .collect();
    let surface = Surface::build(category.template, &params);
    let samples = surface.sample_even(points, &mut rng);

    let n = points as f64;
    let mut c = [0.0; 3];
    for (p, _) in &samples {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|v| v / n);
    let pts: Vec<Vec3> = samples
        .iter()
        .map(|(p, _)| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();

    // Region-dependent palette with a vertical shading ramp.
    let hue: f64 = rng.random();
    let (ylo, yhi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
    let span = (yhi - ylo).max(1e-9);
    let colors = samples
        .iter()
        .zip(&pts)
        .map(|((_, region), p)| {
            let ramp = 0.55 + 0.45 * (p[1] - ylo) / span;
            let base = match region {
                Region::Body => hsv(hue, 0.7, 0.9),
                Region::Accent => hsv(hue + 0.5, 0.8, 0.8),
                Region::Base => hsv(hue, 0.2, 0.35),
            };
            base.map(|v| (v * ramp).clamp(0.0, 1.0))
        })
        .collect();

    let canonical = PointCloud::with_colors(pts, colors)?;
    Instance::from_parts(category.name.clone(), params, canonical, Split::Train)
}
