//! Area-uniform surface sampling for the parametric templates.
//!
//! Each template is a union of simple patches with closed-form areas and
//! area-preserving parameterizations of the unit square. Points are
//! apportioned to patches by area and spread by a lattice on each.
//! Canonical frame: symmetry/up axis `+y`.

use std::f64::consts::PI;

use rand::Rng;

use super::category::Template;
use crate::geom::Vec3;

/// Color region of a surface point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Body,
    Accent,
    Base,
}

#[derive(Clone, Debug)]
enum Patch {
    /// Lateral surface of a cylinder around `+y`.
    Cylinder { radius: f64, y0: f64, y1: f64 },
    /// Lateral surface of a cone frustum, radius `r0` at `y0` to `r1` at `y1`.
    Frustum { r0: f64, r1: f64, y0: f64, y1: f64 },
    /// Disk of `radius` in the plane `y`.
    Disk { radius: f64, y: f64 },
    /// Zone of the sphere of `radius` centered at the origin, `y0 ≤ y ≤ y1`.
    SphereZone { radius: f64, y0: f64, y1: f64 },
    /// Parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
    Quad { origin: Vec3, u: Vec3, v: Vec3 },
    /// Half torus in the `xy` plane, opening toward `-x`, around `center`.
    HalfTorus { center: Vec3, major: f64, minor: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Cylinder { radius, y0, y1 } => 2.0 * PI * radius * (y1 - y0),
            Patch::Frustum { r0, r1, y0, y1 } => {
                let slant = ((r1 - r0).powi(2) + (y1 - y0).powi(2)).sqrt();
                PI * (r0 + r1) * slant
            }
            Patch::Disk { radius, .. } => PI * radius * radius,
            Patch::SphereZone { radius, y0, y1 } => 2.0 * PI * radius * (y1 - y0),
            Patch::Quad { u, v, .. } => crate::geom::norm(crate::geom::cross(u, v)),
            Patch::HalfTorus { major, minor, .. } => PI * major * 2.0 * PI * minor,
        }
    }

    /// Area-preserving map from the unit square onto the patch.
    fn at(&self, a: f64, b: f64) -> Vec3 {
        match *self {
            Patch::Cylinder { radius, y0, y1 } => {
                let th = a * 2.0 * PI;
                let y = y0 + b * (y1 - y0);
                [radius * th.cos(), y, radius * th.sin()]
            }
            Patch::Frustum { r0, r1, y0, y1 } => {
                // Density along the slant is proportional to the radius;
                // invert the CDF of r(s) = r0 + (r1 - r0) s.
                let dr = r1 - r0;
                let s = if dr.abs() < 1e-12 {
                    b
                } else {
                    let total = r0 + dr / 2.0;
                    (-r0 + (r0 * r0 + 2.0 * dr * b * total).sqrt()) / dr
                };
                let r = r0 + dr * s;
                let y = y0 + (y1 - y0) * s;
                let th = a * 2.0 * PI;
                [r * th.cos(), y, r * th.sin()]
            }
            Patch::Disk { radius, y } => {
                let r = radius * b.sqrt();
                let th = a * 2.0 * PI;
                [r * th.cos(), y, r * th.sin()]
            }
            Patch::SphereZone { radius, y0, y1 } => {
                // Archimedes: area of a sphere zone is linear in its height.
                let y = y0 + b * (y1 - y0);
                let r = (radius * radius - y * y).max(0.0).sqrt();
                let th = a * 2.0 * PI;
                [r * th.cos(), y, r * th.sin()]
            }
            Patch::Quad { origin, u, v } => [0, 1, 2].map(|k| origin[k] + a * u[k] + b * v[k]),
            Patch::HalfTorus {
                center,
                major,
                minor,
            } => {
                let th = (a - 0.5) * PI;
                let phi = torus_tube_angle(b, major, minor);
                let radial = [th.cos(), th.sin(), 0.0];
                let ring = major + minor * phi.cos();
                [
                    center[0] + ring * radial[0],
                    center[1] + ring * radial[1],
                    center[2] + minor * phi.sin(),
                ]
            }
        }
    }
}

/// Tube angle with area CDF `b`: the area element is proportional to
/// `major + minor·cos φ`, so solve `major·φ + minor·sin φ = 2π·major·b`.
fn torus_tube_angle(b: f64, major: f64, minor: f64) -> f64 {
    let target = 2.0 * PI * major * b;
    let (mut lo, mut hi) = (0.0, 2.0 * PI);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if major * mid + minor * mid.sin() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Splits `n` into parts proportional to `weights` (largest remainder).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn box_faces(center: Vec3, half: Vec3, out: &mut Vec<(Patch, Region)>, region: Region) {
    let [hx, hy, hz] = half;
    let c = center;
    let o = [c[0] - hx, c[1] - hy, c[2] - hz];
    let (ex, ey, ez) = ([2.0 * hx, 0.0, 0.0], [0.0, 2.0 * hy, 0.0], [0.0, 0.0, 2.0 * hz]);
    let shift = |p: Vec3, d: Vec3| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
    out.push((Patch::Quad { origin: o, u: ex, v: ez }, region));
    out.push((Patch::Quad { origin: shift(o, ey), u: ex, v: ez }, region));
    out.push((Patch::Quad { origin: o, u: ex, v: ey }, region));
    out.push((Patch::Quad { origin: shift(o, ez), u: ex, v: ey }, region));
    out.push((Patch::Quad { origin: o, u: ey, v: ez }, region));
    out.push((Patch::Quad { origin: shift(o, ex), u: ey, v: ez }, region));
}

/// Rotates `p` about the x axis through `pivot` by `angle` radians.
fn rotate_x(p: Vec3, pivot: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let (y, z) = (p[1] - pivot[1], p[2] - pivot[2]);
    [p[0], pivot[1] + c * y - s * z, pivot[2] + s * y + c * z]
}

/// A template instance ready for sampling.
pub(crate) struct Surface {
    patches: Vec<(Patch, Region)>,
    /// Post-sample hinge rotation: patches from this index on are rotated.
    lid: Option<(usize, Vec3, f64)>,
}

impl Surface {
    pub fn build(template: Template, p: &[f64]) -> Surface {
        let mut patches = Vec::new();
        let mut lid = None;
        match template {
            Template::Can => {
                let (r, h) = (p[0], p[1]);
                patches.push((Patch::Cylinder { radius: r, y0: 0.0, y1: h }, Region::Body));
                patches.push((Patch::Disk { radius: r, y: h }, Region::Accent));
                patches.push((Patch::Disk { radius: r, y: 0.0 }, Region::Base));
            }
            Template::Bottle => {
                let (rb, hb, hs, rn, hn) = (p[0], p[1], p[2], p[3], p[4]);
                patches.push((Patch::Disk { radius: rb, y: 0.0 }, Region::Base));
                patches.push((Patch::Cylinder { radius: rb, y0: 0.0, y1: hb }, Region::Body));
                patches.push((
                    Patch::Frustum { r0: rb, r1: rn, y0: hb, y1: hb + hs },
                    Region::Body,
                ));
                patches.push((
                    Patch::Cylinder { radius: rn, y0: hb + hs, y1: hb + hs + hn },
                    Region::Accent,
                ));
                patches.push((Patch::Disk { radius: rn, y: hb + hs + hn }, Region::Accent));
            }
            Template::Bowl => {
                let (rs, ratio) = (p[0], p[1]);
                patches.push((
                    Patch::SphereZone { radius: rs, y0: -rs, y1: -rs + ratio * rs },
                    Region::Body,
                ));
            }
            Template::Laptop => {
                let (w, d, th, hinge) = (p[0], p[1], p[2], p[3].to_radians());
                // Base slab on y ∈ [0, th], hinge along the back edge z = -d/2.
                box_faces([0.0, th / 2.0, 0.0], [w / 2.0, th / 2.0, d / 2.0], &mut patches, Region::Base);
                let start = patches.len();
                box_faces(
                    [0.0, th * 1.5, 0.0],
                    [w / 2.0, th / 2.0, d / 2.0],
                    &mut patches,
                    Region::Accent,
                );
                // Lid starts closed on top of the base and opens by
                // (180° − hinge) about the back edge.
                lid = Some((start, [0.0, th, -d / 2.0], -(PI - hinge)));
            }
            Template::Mug => {
                let (r, h, hr, ht) = (p[0], p[1], p[2], p[3]);
                patches.push((Patch::Cylinder { radius: r, y0: 0.0, y1: h }, Region::Body));
                patches.push((Patch::Disk { radius: r, y: 0.0 }, Region::Base));
                patches.push((
                    Patch::HalfTorus {
                        center: [r, h / 2.0, 0.0],
                        major: hr.min(h / 2.0 - ht),
                        minor: ht,
                    },
                    Region::Accent,
                ));
            }
            Template::CameraBox => {
                let (w, h, d) = (p[0], p[1], p[2]);
                box_faces([0.0, h / 2.0, 0.0], [w / 2.0, h / 2.0, d / 2.0], &mut patches, Region::Body);
                // Front face (+z) is the lens side.
                if let Some(face) = patches.get_mut(3) {
                    face.1 = Region::Accent;
                }
            }
        }
        Surface { patches, lid }
    }

    fn place(&self, k: usize, a: f64, b: f64) -> (Vec3, Region) {
        let (patch, region) = &self.patches[k];
        let mut p = patch.at(a, b);
        if let Some((start, pivot, angle)) = self.lid {
            if k >= start {
                p = rotate_x(p, pivot, angle);
            }
        }
        (p, *region)
    }

    /// `n` evenly spread points: counts per patch in proportion to area,
    /// each patch covered by a randomly shifted Fibonacci lattice.
    pub fn sample_even<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec3, Region)> {
        let areas: Vec<f64> = self.patches.iter().map(|(p, _)| p.area()).collect();
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let mut out = Vec::with_capacity(n);
        for (k, c) in apportion(n, &areas).into_iter().enumerate() {
            let (sa, sb): (f64, f64) = (rng.random(), rng.random());
            for i in 0..c {
                let a = (i as f64 / c as f64 + sa).fract();
                let b = (i as f64 * golden + sb).fract();
                out.push(self.place(k, a, b));
            }
        }
        out
    }
}
