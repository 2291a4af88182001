//! Image and geometry metrics.
//!
//! Chamfer distance uses the sum convention: the mean nearest-neighbour
//! distance from each cloud to the other, added.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::camera::Rigid;
use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::tensor::{Real, Tensor};

pub const CD_CONVENTION: &str = "chamfer = mean_a(min_b |a-b|) + mean_b(min_a |a-b|)";
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const MAX_POINTS: usize = 100_000;

fn check_pair<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    check_pair("mse", a, b)?;
    let n = a.numel().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn psnr<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..n)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Separable valid-mode filtering of one `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean single-scale SSIM of `[H, W]` or `[H, W, C]` images in `[0, 1]`,
/// 11×11 Gaussian window (σ = 1.5, shrunk for smaller images), averaged
/// over channels.
pub fn ssim<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let (h, w, c) = match a.shape() {
        &[h, w] => (h, w, 1),
        &[h, w, c] => (h, w, c),
        s => {
            return Err(Error::invalid(
                "ssim",
                format!("expected [H, W] or [H, W, C], got {s:?}"),
            ))
        }
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid("ssim", "empty image"));
    }
    let k = gaussian_window(SSIM_WINDOW.min(h).min(w));
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |t: &Tensor<F>| -> Vec<f64> { (0..h * w).map(|i| t.data()[i * c + ch].to_f64_lossy()).collect() };
        let (x, y) = (plane(a), plane(b));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter(&x, h, w, &k);
        let my = filter(&y, h, w, &k).0;
        let sxx = filter(&xx, h, w, &k).0;
        let syy = filter(&yy, h, w, &k).0;
        let sxy = filter(&xy, h, w, &k).0;
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Uniform-grid nearest-neighbour index over a point cloud.
pub struct GridIndex<'a> {
    points: &'a [Vec3<f64>],
    cell: f64,
    origin: Vec3<f64>,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Vec3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("grid index", "empty cloud"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("grid index", "non-finite point"));
            }
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-9);
        // about two points per occupied cell on a surface-like cloud
        let cell = (extent / (points.len() as f64 / 2.0).sqrt().max(1.0)).max(extent * 1e-4);
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / cell).floor() as i64 + 1);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = [0, 1, 2].map(|k| ((p[k] - lo[k]) / cell).floor() as i64);
            cells.entry(key).or_default().push(i);
        }
        Ok(Self {
            points,
            cell,
            origin: lo,
            dims,
            cells,
        })
    }

    /// Index and distance of the closest point to `q`.
    pub fn nearest(&self, q: Vec3<f64>) -> (usize, f64) {
        // clamping into the grid only brings q closer to every indexed point
        // per axis, so ring bounds measured from the clamped cell stay valid
        let key = [0, 1, 2].map(|k| (((q[k] - self.origin[k]) / self.cell).floor() as i64).clamp(0, self.dims[k] - 1));
        let max_ring = self.dims.iter().copied().max().unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        let visit = |c: [i64; 3], best: &mut (usize, f64)| {
            if let Some(ids) = self.cells.get(&c) {
                for &i in ids {
                    let d = linalg::norm(linalg::sub(self.points[i], q));
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
        };
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    let face = dx.abs() == ring || dy.abs() == ring;
                    if face {
                        for dz in -ring..=ring {
                            visit([key[0] + dx, key[1] + dy, key[2] + dz], &mut best);
                        }
                    } else {
                        visit([key[0] + dx, key[1] + dy, key[2] - ring], &mut best);
                        if ring > 0 {
                            visit([key[0] + dx, key[1] + dy, key[2] + ring], &mut best);
                        }
                    }
                }
            }
            // every unvisited cell is at least `ring * cell` away
            if best.1 <= ring as f64 * self.cell || ring >= max_ring {
                return best;
            }
            ring += 1;
        }
    }
}

/// Brute-force nearest neighbour, the oracle for [`GridIndex`].
pub fn nearest_brute(points: &[Vec3<f64>], q: Vec3<f64>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = linalg::norm(linalg::sub(*p, q));
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn directed(from: &[Vec3<f64>], to: &GridIndex<'_>) -> Vec<f64> {
    from.iter().map(|&p| to.nearest(p).1).collect()
}

fn check_cloud(op: &'static str, c: &[Vec3<f64>]) -> Result<()> {
    if c.is_empty() {
        return Err(Error::invalid(op, "empty point cloud"));
    }
    Ok(())
}

/// Directed nearest-neighbour distances `a -> b` and `b -> a`.
pub fn nn_distances(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_cloud("chamfer", a)?;
    check_cloud("chamfer", b)?;
    let (ia, ib) = (GridIndex::new(a)?, GridIndex::new(b)?);
    Ok((directed(a, &ib), directed(b, &ia)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64> {
    let (ab, ba) = nn_distances(a, b)?;
    Ok(mean(&ab) + mean(&ba))
}

fn fscore_from(ab: &[f64], ba: &[f64], t: f64) -> f64 {
    let precision = ab.iter().filter(|&&d| d < t).count() as f64 / ab.len() as f64;
    let recall = ba.iter().filter(|&&d| d < t).count() as f64 / ba.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// F-score of `pred` against `gt` at distance threshold `t`.
pub fn fscore(pred: &[Vec3<f64>], gt: &[Vec3<f64>], t: f64) -> Result<f64> {
    let (ab, ba) = nn_distances(pred, gt)?;
    Ok(fscore_from(&ab, &ba, t))
}

/// Eigen-decomposition of a symmetric 4×4 matrix by cyclic Jacobi.
/// Returns eigenvalues and eigenvectors as columns.
fn sym_eigen4(m: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut a = m;
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

fn centroid(p: &[Vec3<f64>]) -> Vec3<f64> {
    let mut c = [0.0; 3];
    for q in p {
        c = linalg::add(c, *q);
    }
    linalg::scale(c, 1.0 / p.len() as f64)
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]` (Horn's unit
/// quaternion method).
pub fn fit_rigid(src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> Result<Rigid> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::invalid("fit_rigid", "need equal, non-empty correspondences"));
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut s = [[0.0; 3]; 3];
    for (a, b) in src.iter().zip(dst) {
        let (a, b) = (linalg::sub(*a, cs), linalg::sub(*b, cd));
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += a[i] * b[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (vals, vecs) = sym_eigen4(n);
    let k = (0..4).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
    let q = [vecs[0][k], vecs[1][k], vecs[2][k], vecs[3][k]];
    let rotation = linalg::quat_to_mat(q);
    let translation = linalg::sub(cd, linalg::mat_vec(&rotation, cs));
    Ok(Rigid { rotation, translation })
}

fn compose(a: &Rigid, b: &Rigid) -> Rigid {
    // a after b
    Rigid {
        rotation: linalg::matmul(&a.rotation, &b.rotation),
        translation: a.apply(b.translation),
    }
}

/// Point-to-point ICP aligning `src` to `dst`. Returns the accumulated
/// motion applied to `src`.
pub fn icp(src: &[Vec3<f64>], dst: &[Vec3<f64>], iterations: usize) -> Result<Rigid> {
    check_cloud("icp", src)?;
    check_cloud("icp", dst)?;
    let index = GridIndex::new(dst)?;
    let mut total = Rigid {
        rotation: linalg::identity(),
        translation: [0.0; 3],
    };
    let mut cur = src.to_vec();
    for _ in 0..iterations {
        let matches: Vec<Vec3<f64>> = cur.iter().map(|&p| dst[index.nearest(p).0]).collect();
        let step = fit_rigid(&cur, &matches)?;
        cur.iter_mut().for_each(|p| *p = step.apply(*p));
        total = compose(&step, &total);
    }
    Ok(total)
}

/// Deterministic stride subsample to at most `max` points.
pub fn subsample(points: &[Vec3<f64>], max: usize) -> Vec<Vec3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    let stride = points.len() as f64 / max as f64;
    (0..max).map(|i| points[(i as f64 * stride) as usize]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub chamfer: f64,
    /// `(threshold, F-score)`
    pub fscores: Vec<(f64, f64)>,
    pub pred_points: usize,
    pub gt_points: usize,
}

/// Chamfer distance and F-scores, optionally after ICP of `pred` onto `gt`.
pub fn chamfer_fscore(pred: &[Vec3<f64>], gt: &[Vec3<f64>], thresholds: &[f64], align: bool) -> Result<GeometryReport> {
    check_cloud("chamfer_fscore", pred)?;
    check_cloud("chamfer_fscore", gt)?;
    let mut p = subsample(pred, MAX_POINTS);
    let g = subsample(gt, MAX_POINTS);
    if align {
        let before = chamfer(&p, &g)?;
        let motion = icp(&p, &g, 20)?;
        let moved: Vec<_> = p.iter().map(|&x| motion.apply(x)).collect();
        if chamfer(&moved, &g)? <= before {
            p = moved;
        }
    }
    let (ab, ba) = nn_distances(&p, &g)?;
    Ok(GeometryReport {
        chamfer: mean(&ab) + mean(&ba),
        fscores: thresholds.iter().map(|&t| (t, fscore_from(&ab, &ba, t))).collect(),
        pred_points: p.len(),
        gt_points: g.len(),
    })
}

/// Per-scene metrics with a CSV row rendering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub geometry: Option<GeometryReport>,
    pub gaussians: usize,
    pub seconds: f64,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean_or_nan(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean_or_nan(&self.ssim)
    }

    pub fn csv_header(thresholds: &[f64]) -> String {
        let mut h = "scene,views,psnr,ssim,chamfer".to_string();
        for t in thresholds {
            h.push_str(&format!(",fscore@{t}"));
        }
        h.push_str(",gaussians,seconds");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{:.4},{:.4},",
            self.scene,
            self.psnr.len(),
            self.mean_psnr(),
            self.mean_ssim()
        );
        match &self.geometry {
            Some(g) => {
                r.push_str(&format!("{:.6}", g.chamfer));
                for (_, f) in &g.fscores {
                    r.push_str(&format!(",{f:.4}"));
                }
            }
            None => r.push_str("nan"),
        }
        r.push_str(&format!(",{},{:.3}", self.gaussians, self.seconds));
        r
    }
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        mean(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, rng: &mut impl Rng) -> Vec<Vec3<f64>> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                ]
            })
            .collect()
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::<f64>::full(&[4, 4, 3], 0.5);
        let b = Tensor::<f64>::full(&[4, 4, 3], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::uniform(&[5, 7, 3], 0.0, 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(&[5, 7, 3], 0.0, 1.0, &mut rng);
        let mut s = 0.0;
        for i in 0..x.numel() {
            s += (x.data()[i] - y.data()[i]).powi(2);
        }
        let want = 10.0 * (1.0 / (s / x.numel() as f64)).log10();
        assert!((psnr(&x, &y).unwrap() - want).abs() < 1e-12);
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[16, 16, 3], 0.0, 1.0, &mut rng);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);

        let board = Tensor::<f64>::from_fn(&[16, 16], |i| ((i / 16 + i % 16) % 2) as f64);
        let neg = board.map(|v| 1.0 - v);
        assert!(ssim(&board, &neg).unwrap() < 0.0);

        let a = Tensor::<f64>::full(&[16, 16], 0.2);
        let b = Tensor::<f64>::full(&[16, 16], 0.7);
        let want = (2.0 * 0.2 * 0.7 + C1) / (0.04 + 0.49 + C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = cloud(1500, &mut rng);
        let index = GridIndex::new(&pts).unwrap();
        for _ in 0..300 {
            let q = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let (i, d) = index.nearest(q);
            let (j, e) = nearest_brute(&pts, q);
            assert_eq!(d, e);
            assert_eq!(pts[i], pts[j]);
        }
    }

    #[test]
    fn chamfer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(200, &mut rng);
        let r = chamfer_fscore(&a, &a, &[0.01, 0.1], false).unwrap();
        assert_eq!(r.chamfer, 0.0);
        assert!(r.fscores.iter().all(|&(_, f)| f == 1.0));

        let p = [[0.0, 0.0, 0.0]];
        let q = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&p, &q).unwrap(), 2.0);
        assert_eq!(fscore(&p, &q, 1.5).unwrap(), 1.0);
        assert!(chamfer(&[], &q).is_err());

        let b = cloud(150, &mut rng);
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
    }

    #[test]
    fn icp_recovers_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(800, &mut rng);
        let axis = linalg::normalize([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0]);
        let motion = Rigid {
            rotation: linalg::quat_to_mat(linalg::axis_angle_quat(axis, 0.3)),
            translation: [0.1, -0.05, 0.08],
        };
        let b: Vec<_> = a.iter().map(|&p| motion.apply(p)).collect();
        let r = chamfer_fscore(&a, &b, &[0.01], true).unwrap();
        assert!(r.chamfer < 1e-3, "{}", r.chamfer);
        let raw = chamfer_fscore(&a, &b, &[0.01], false).unwrap();
        assert!(r.chamfer <= raw.chamfer);
    }

    #[test]
    fn fit_rigid_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cloud(10, &mut rng);
        let m = Rigid {
            rotation: linalg::quat_to_mat(linalg::axis_angle_quat([0.0, 1.0, 0.0], 2.5)),
            translation: [1.0, 2.0, 3.0],
        };
        let b: Vec<_> = a.iter().map(|&p| m.apply(p)).collect();
        let f = fit_rigid(&a, &b).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!(linalg::norm(linalg::sub(f.apply(*p), *q)) < 1e-9);
        }
    }

    #[test]
    fn fscore_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let a = cloud(100, &mut rng);
            let b = cloud(120, &mut rng);
            let ts: Vec<f64> = (1..=10).map(|i| i as f64 * 0.03).collect();
            let r = chamfer_fscore(&a, &b, &ts, false).unwrap();
            for w in r.fscores.windows(2) {
                assert!(w[1].1 >= w[0].1);
                assert!((0.0..=1.0).contains(&w[1].1));
            }
        }
    }

    #[test]
    fn csv_row_shape() {
        let r = MetricReport {
            scene: "s".into(),
            psnr: vec![20.0, 22.0],
            ssim: vec![0.5, 0.7],
            geometry: Some(GeometryReport {
                chamfer: 0.01,
                fscores: vec![(0.05, 0.9)],
                pred_points: 3,
                gt_points: 4,
            }),
            gaussians: 10,
            seconds: 0.5,
        };
        assert_eq!(
            MetricReport::csv_header(&[0.05]).split(',').count(),
            r.csv_row().split(',').count()
        );
        assert!(r.csv_row().starts_with("s,2,21.0000,0.6000,0.010000,0.9000"));
    }
}
