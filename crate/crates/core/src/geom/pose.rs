use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

/// Row-major rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_rotation_matrix(q: [f64; 4]) -> [f64; 9] {
    let [w, x, y, z] = q;
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes the sign so that `w >= 0`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Quat> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid(format!("degenerate quaternion ({w}, {x}, {y}, {z})")));
        }
        Ok(Quat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical())
    }

    pub fn from_array(q: [f64; 4]) -> Result<Quat> {
        Quat::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Sign flip to the `w >= 0` hemisphere; same rotation.
    pub fn canonical(self) -> Quat {
        if self.w < 0.0 {
            Quat {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Result<Quat> {
        let n = norm(axis);
        if n < 1e-12 {
            return Err(Error::invalid("zero rotation axis"));
        }
        let (s, c) = (angle_rad / 2.0).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Uniform over SO(3): a normalized 4-D standard normal sample.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Quat {
        loop {
            let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(q) = Quat::from_array(v) {
                return q;
            }
        }
    }

    pub fn conjugate(self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self ⊗ rhs` (apply `rhs` first), sign-canonicalized.
    pub fn mul(self, r: Quat) -> Quat {
        let (a, b) = (self, r);
        Quat {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
        .canonical()
    }

    pub fn matrix(self) -> Mat3 {
        let m = quat_rotation_matrix(self.to_array());
        [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]]
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        mat_vec(&self.matrix(), v)
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Result<Quat> {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Quat::new(w, x, y, z)
    }
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub q: Quat,
    pub t: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        q: Quat::IDENTITY,
        t: [0.0; 3],
    };

    pub fn new(q: Quat, t: Vec3) -> Result<Pose> {
        let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("quaternion norm {n}")));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose translation"));
        }
        Ok(Pose { q: q.canonical(), t })
    }

    /// `[w, x, y, z, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.q.w, self.q.x, self.q.y, self.q.z, self.t[0], self.t[1], self.t[2]]
    }

    /// Inverse of [`Pose::to_array`]; the quaternion is taken as stored and
    /// must already be unit length.
    pub fn from_array(a: [f64; 7]) -> Result<Pose> {
        let q = Quat {
            w: a[0],
            x: a[1],
            y: a[2],
            z: a[3],
        };
        Pose::new(q, [a[4], a[5], a[6]])
    }

    pub fn rotation(&self) -> Mat3 {
        self.q.matrix()
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(self.q.rotate(p), self.t)
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.conjugate().canonical();
        Pose {
            q: qi,
            t: scale(qi.rotate(self.t), -1.0),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            q: self.q.mul(other.q),
            t: self.apply(other.t),
        }
    }
}
