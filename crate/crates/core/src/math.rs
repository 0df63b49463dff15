//! Small linear-algebra helpers shared by the pipeline stages, including the
//! hand-written vector-Jacobian products the backward pass relies on.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat2x3 = Matrix2x3<f64>;

/// Linear RGB triplet.
pub type Rgb = Vector3<f64>;

pub const INV_PI: f64 = std::f64::consts::FRAC_1_PI;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of the quaternion `(w, x, y, z)` after normalization.
pub fn quat_to_rotation(q: &[f64; 4]) -> Mat3 {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[inline]
pub fn quat_norm(q: &[f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &[f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Quaternion for a rotation of `angle` radians about `axis`.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> [f64; 4] {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

/// Quaternion of a proper rotation matrix (Shepperd's method).
pub fn quat_from_rotation(r: &Mat3) -> [f64; 4] {
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    quat_normalize(&q)
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion that produced it through [`quat_to_rotation`].
pub fn quat_to_rotation_vjp(q: &[f64; 4], g: &Mat3) -> [f64; 4] {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| qh[i] * gn[i]).sum();
    [
        (gn[0] - qh[0] * dot) / n,
        (gn[1] - qh[1] * dot) / n,
        (gn[2] - qh[2] * dot) / n,
        (gn[3] - qh[3] * dot) / n,
    ]
}

/// Gradient of `v / |v|` pulled back onto `v`.
#[inline]
pub fn normalize_vjp(v: &Vec3, g: &Vec3) -> Vec3 {
    let len = v.norm();
    let n = v / len;
    (g - n * n.dot(g)) / len
}

/// Mirror `v` about `n` (both pointing away from the surface).
#[inline]
pub fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    2.0 * n.dot(v) * n - v
}

/// Orthonormal tangent frame around a unit vector (Duff et al. 2017).
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1.0f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let bt = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, bt)
}

/// Van der Corput radical inverse in base 2.
#[inline]
pub fn radical_inverse(mut bits: u32) -> f64 {
    bits = bits.rotate_right(16);
    bits = ((bits & 0x5555_5555) << 1) | ((bits & 0xAAAA_AAAA) >> 1);
    bits = ((bits & 0x3333_3333) << 2) | ((bits & 0xCCCC_CCCC) >> 2);
    bits = ((bits & 0x0F0F_0F0F) << 4) | ((bits & 0xF0F0_F0F0) >> 4);
    bits = ((bits & 0x00FF_00FF) << 8) | ((bits & 0xFF00_FF00) >> 8);
    bits as f64 * (1.0 / 4_294_967_296.0)
}

/// `i`-th point of the `n`-point Hammersley set.
#[inline]
pub fn hammersley(i: u32, n: u32) -> (f64, f64) {
    ((i as f64 + 0.5) / n as f64, radical_inverse(i))
}

/// Rec. 709 luminance of a linear RGB value.
#[inline]
pub fn luminance(c: &Rgb) -> f64 {
    0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
}
