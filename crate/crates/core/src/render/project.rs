//! 3D covariance and perspective (EWA) projection of single Gaussians, with
//! hand-written reverse-mode rules.

use crate::camera::Camera;
use crate::linalg::{self, Mat3, Vec3};
use crate::tensor::Real;

/// Low-pass floor added to the projected covariance diagonal, in px².
pub const COV_FLOOR: f64 = 0.3;

/// Camera constants in the working precision.
#[derive(Debug, Clone, Copy)]
pub struct View<F> {
    /// camera-from-world rotation
    pub w: Mat3<F>,
    pub center: Vec3<F>,
    pub focal: F,
    pub cx: F,
    pub cy: F,
    pub near: F,
    pub width: usize,
    pub height: usize,
}

impl<F: Real> View<F> {
    pub fn new(camera: &Camera) -> Self {
        let [cx, cy] = camera.principal_point();
        Self {
            w: linalg::cast_mat(&linalg::transpose(&camera.rotation)),
            center: linalg::cast_vec(camera.center),
            focal: F::lit(camera.focal()),
            cx: F::lit(cx),
            cy: F::lit(cy),
            near: F::lit(camera.near),
            width: camera.width,
            height: camera.height,
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat<F> {
    pub mean: [F; 2],
    /// `(xx, xy, yy)` of the floored 2D covariance
    pub cov: [F; 3],
    /// `(xx, xy, yy)` of its inverse
    pub conic: [F; 3],
    pub depth: F,
}

/// `Σ = R diag(s²) Rᵀ` for a unit quaternion `q`.
pub fn covariance3d<F: Real>(q: [F; 4], s: [F; 3]) -> Mat3<F> {
    let r = linalg::quat_to_mat(q);
    let m = scale_columns(&r, s);
    linalg::matmul(&m, &linalg::transpose(&m))
}

fn scale_columns<F: Real>(r: &Mat3<F>, s: [F; 3]) -> Mat3<F> {
    let mut m = *r;
    for row in m.iter_mut() {
        for j in 0..3 {
            row[j] *= s[j];
        }
    }
    m
}

fn normalize_quat<F: Real>(q: [F; 4]) -> ([F; 4], F) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Projection Jacobian `∂(u, v)/∂t` at camera-space point `t`.
fn jacobian<F: Real>(t: Vec3<F>, focal: F) -> [[F; 3]; 2] {
    let d = -t[2];
    let z = F::zero();
    [
        [focal / d, z, focal * t[0] / (d * d)],
        [z, -focal / d, -focal * t[1] / (d * d)],
    ]
}

fn mat23_mat33<F: Real>(a: &[[F; 3]; 2], b: &Mat3<F>) -> [[F; 3]; 2] {
    let mut out = [[F::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// `T Σ Tᵀ` for `T` 2×3.
fn sandwich<F: Real>(t: &[[F; 3]; 2], sigma: &Mat3<F>) -> [[F; 2]; 2] {
    let ts = mat23_mat33(t, sigma);
    let mut out = [[F::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = ts[i][0] * t[j][0] + ts[i][1] * t[j][1] + ts[i][2] * t[j][2];
        }
    }
    out
}

/// Projects a Gaussian with raw (not necessarily unit) quaternion `q`.
/// Returns `None` when its centre is not beyond the near plane.
pub fn project<F: Real>(mu: Vec3<F>, q: [F; 4], s: [F; 3], view: &View<F>) -> Option<Splat<F>> {
    let t = linalg::mat_vec(&view.w, linalg::sub(mu, view.center));
    let d = -t[2];
    if !(d > view.near) {
        return None;
    }
    let (qn, _) = normalize_quat(q);
    let sigma = covariance3d(qn, s);
    let tm = mat23_mat33(&jacobian(t, view.focal), &view.w);
    let c = sandwich(&tm, &sigma);
    let floor = F::lit(COV_FLOOR);
    let cov = [c[0][0] + floor, F::lit(0.5) * (c[0][1] + c[1][0]), c[1][1] + floor];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    Some(Splat {
        mean: [view.cx + view.focal * t[0] / d, view.cy - view.focal * t[1] / d],
        cov,
        conic,
        depth: d,
    })
}

/// Upstream gradients for one projected Gaussian. `conic` holds the
/// symmetric full-matrix gradient `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplatGrad<F> {
    pub mean: [F; 2],
    pub conic: [F; 3],
    pub depth: F,
}

/// Reverse pass of [`project`]: gradients for `(mu, q, s)`.
pub fn project_backward<F: Real>(
    mu: Vec3<F>,
    q: [F; 4],
    s: [F; 3],
    view: &View<F>,
    g: &SplatGrad<F>,
) -> (Vec3<F>, [F; 4], Vec3<F>) {
    let z = F::zero();
    let two = F::lit(2.0);
    let f = view.focal;
    let t = linalg::mat_vec(&view.w, linalg::sub(mu, view.center));
    let d = -t[2];
    let (qn, qnorm) = normalize_quat(q);
    let r = linalg::quat_to_mat(qn);
    let m = scale_columns(&r, s);
    let sigma = linalg::matmul(&m, &linalg::transpose(&m));
    let j = jacobian(t, f);
    let tm = mat23_mat33(&j, &view.w);
    let c = sandwich(&tm, &sigma);
    let floor = F::lit(COV_FLOOR);
    let cov = [[c[0][0] + floor, c[0][1]], [c[1][0], c[1][1] + floor]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let k = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];

    // conic -> covariance: dC = -K G K
    let gk = [[g.conic[0], g.conic[1]], [g.conic[1], g.conic[2]]];
    let mut gc = [[z; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = z;
            for p in 0..2 {
                for qi in 0..2 {
                    acc += k[a][p] * gk[p][qi] * k[qi][b];
                }
            }
            gc[a][b] = -acc;
        }
    }

    // covariance -> (T, Σ)
    let mut g_sigma = [[z; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = z;
            for p in 0..2 {
                for qi in 0..2 {
                    acc += tm[p][a] * gc[p][qi] * tm[qi][b];
                }
            }
            g_sigma[a][b] = acc;
        }
    }
    let ts = mat23_mat33(&tm, &sigma);
    let mut g_t = [[z; 3]; 2];
    for p in 0..2 {
        for a in 0..3 {
            g_t[p][a] = two * (gc[p][0] * ts[0][a] + gc[p][1] * ts[1][a]);
        }
    }
    // T = J W
    let mut g_j = [[z; 3]; 2];
    for p in 0..2 {
        for a in 0..3 {
            g_j[p][a] = g_t[p][0] * view.w[a][0] + g_t[p][1] * view.w[a][1] + g_t[p][2] * view.w[a][2];
        }
    }

    // camera-space point
    let d2 = d * d;
    let d3 = d2 * d;
    let mut gt = [z; 3];
    gt[0] = g.mean[0] * f / d + g_j[0][2] * f / d2;
    gt[1] = -g.mean[1] * f / d - g_j[1][2] * f / d2;
    gt[2] = g.mean[0] * f * t[0] / d2 - g.mean[1] * f * t[1] / d2 - g.depth
        + g_j[0][0] * f / d2
        + g_j[0][2] * two * f * t[0] / d3
        - g_j[1][1] * f / d2
        - g_j[1][2] * two * f * t[1] / d3;
    let gmu = linalg::mat_t_vec(&view.w, gt);

    // Σ = M Mᵀ, M = R diag(s)
    let mut g_m = [[z; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            g_m[a][b] = two * (g_sigma[a][0] * m[0][b] + g_sigma[a][1] * m[1][b] + g_sigma[a][2] * m[2][b]);
        }
    }
    let mut gs = [z; 3];
    let mut g_r = [[z; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            g_r[a][b] = g_m[a][b] * s[b];
            gs[b] += g_m[a][b] * r[a][b];
        }
    }
    let gqn = linalg::quat_to_mat_grad(qn, &g_r);
    let dot = gqn[0] * qn[0] + gqn[1] * qn[1] + gqn[2] * qn[2] + gqn[3] * qn[3];
    let gq = [
        (gqn[0] - qn[0] * dot) / qnorm,
        (gqn[1] - qn[1] * dot) / qnorm,
        (gqn[2] - qn[2] * dot) / qnorm,
        (gqn[3] - qn[3] * dot) / qnorm,
    ];
    (gmu, gq, gs)
}
