//! Fixed-size 3-vector and 3x3 matrix helpers.

use crate::tensor::Real;

pub type Vec3<F> = [F; 3];
pub type Mat3<F> = [[F; 3]; 3];

#[inline]
pub fn add<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<F: Real>(a: Vec3<F>, s: F) -> Vec3<F> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<F: Real>(a: Vec3<F>, b: Vec3<F>) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<F: Real>(a: Vec3<F>) -> F {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize<F: Real>(a: Vec3<F>) -> Vec3<F> {
    scale(a, F::one() / norm(a))
}

#[inline]
pub fn mat_vec<F: Real>(m: &Mat3<F>, v: Vec3<F>) -> Vec3<F> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `m^T v`
#[inline]
pub fn mat_t_vec<F: Real>(m: &Mat3<F>, v: Vec3<F>) -> Vec3<F> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn matmul<F: Real>(a: &Mat3<F>, b: &Mat3<F>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub fn transpose<F: Real>(m: &Mat3<F>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn identity<F: Real>() -> Mat3<F> {
    let mut m = [[F::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = F::one();
    }
    m
}

pub fn det<F: Real>(m: &Mat3<F>) -> F {
    dot(m[0], cross(m[1], m[2]))
}

pub fn cast_vec<F: Real>(v: [f64; 3]) -> Vec3<F> {
    [F::lit(v[0]), F::lit(v[1]), F::lit(v[2])]
}

pub fn cast_mat<F: Real>(m: &[[f64; 3]; 3]) -> Mat3<F> {
    [cast_vec(m[0]), cast_vec(m[1]), cast_vec(m[2])]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat<F: Real>(q: [F; 4]) -> Mat3<F> {
    let [w, x, y, z] = q;
    let one = F::one();
    let two = F::lit(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Gradient of a scalar with respect to the quaternion entries, given its
/// gradient `g` with respect to [`quat_to_mat`]'s output.
pub fn quat_to_mat_grad<F: Real>(q: [F; 4], g: &Mat3<F>) -> [F; 4] {
    let [w, x, y, z] = q;
    let two = F::lit(2.0);
    let four = F::lit(4.0);
    let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    [dw, dx, dy, dz]
}

/// Rotation of `angle` radians about a unit `axis`, as a quaternion.
pub fn axis_angle_quat(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let (s, c) = (0.5 * angle).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Rotation taking `+z` onto the unit vector `n`.
pub fn z_to(n: [f64; 3]) -> [f64; 4] {
    let axis = [-n[1], n[0], 0.0];
    let s = norm(axis);
    if s < 1e-9 {
        return if n[2] > 0.0 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0, 0.0]
        };
    }
    axis_angle_quat(scale(axis, 1.0 / s), n[2].clamp(-1.0, 1.0).acos())
}

/// Symmetric eigenvalues of a 3x3 matrix (Jacobi iteration), ascending.
pub fn sym_eigenvalues(m: &Mat3<f64>) -> [f64; 3] {
    let mut a = *m;
    for _ in 0..64 {
        let (mut p, mut q, mut big) = (0, 1, a[0][1].abs());
        for (i, j) in [(0, 2), (1, 2)] {
            if a[i][j].abs() > big {
                big = a[i][j].abs();
                p = i;
                q = j;
            }
        }
        if big < 1e-300 {
            break;
        }
        let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let mut r = identity::<f64>();
        r[p][p] = c;
        r[q][q] = c;
        r[p][q] = s;
        r[q][p] = -s;
        a = matmul(&transpose(&r), &matmul(&a, &r));
    }
    let mut e = [a[0][0], a[1][1], a[2][2]];
    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
    e
}
