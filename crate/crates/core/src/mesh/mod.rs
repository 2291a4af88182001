//! Mesh extraction: RGB-D fusion of rendered views into a truncated signed
//! distance volume, marching cubes, and small-component removal.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{fibonacci_cameras, Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::io::ply;
use crate::linalg::{self, Vec3};
use crate::render::{render, RenderSettings};
use crate::tensor::Real;

use tables::{EDGE_TABLE, TRIANGLE_TABLE};

/// Pixels below this rendered alpha carry no depth.
pub const ALPHA_GATE: f64 = 0.5;

/// Voxel grid of truncated signed distances, normalised to `[-1, 1]`.
/// Voxel `(i, j, k)` is centred at `origin + voxel * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3<f64>,
    pub voxel: f64,
    pub dims: [usize; 3],
    pub trunc: f64,
    pub tsdf: Vec<f32>,
    pub weight: Vec<f32>,
    /// weighted RGB sums
    pub color: Vec<[f32; 3]>,
}

impl TsdfVolume {
    /// Empty volume covering the box `[lo, hi]`.
    pub fn new(lo: Vec3<f64>, hi: Vec3<f64>, voxel: f64, trunc: f64) -> Result<Self> {
        if !(voxel > 0.0) || !(trunc >= 2.0 * voxel) {
            return Err(Error::invalid(
                "tsdf",
                format!("need voxel > 0 and trunc >= 2 voxel, got voxel={voxel} trunc={trunc}"),
            ));
        }
        let mut dims = [0; 3];
        for k in 0..3 {
            if !(hi[k] >= lo[k]) {
                return Err(Error::invalid("tsdf", "empty bounding box"));
            }
            dims[k] = ((hi[k] - lo[k]) / voxel).ceil() as usize + 1;
        }
        let n = dims[0] * dims[1] * dims[2];
        if n > 64 << 20 {
            return Err(Error::invalid("tsdf", format!("grid {dims:?} is too large")));
        }
        Ok(Self {
            origin: lo,
            voxel,
            dims,
            trunc,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Volume sampled from a signed distance function, weight 1 everywhere.
    pub fn from_sdf(
        lo: Vec3<f64>,
        hi: Vec3<f64>,
        voxel: f64,
        trunc: f64,
        sdf: impl Fn(Vec3<f64>) -> f64,
    ) -> Result<Self> {
        let mut v = Self::new(lo, hi, voxel, trunc)?;
        for idx in 0..v.len() {
            let p = v.position(idx);
            v.tsdf[idx] = (sdf(p) / trunc).clamp(-1.0, 1.0) as f32;
            v.weight[idx] = 1.0;
            v.color[idx] = [0.5; 3];
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn position(&self, idx: usize) -> Vec3<f64> {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        self.grid_point(i, j, k)
    }

    fn grid_point(&self, i: usize, j: usize, k: usize) -> Vec3<f64> {
        [
            self.origin[0] + self.voxel * i as f64,
            self.origin[1] + self.voxel * j as f64,
            self.origin[2] + self.voxel * k as f64,
        ]
    }

    /// Mean fused color of a voxel.
    pub fn mean_color(&self, idx: usize) -> [f32; 3] {
        let w = self.weight[idx];
        if w > 0.0 {
            self.color[idx].map(|c| c / w)
        } else {
            [0.0; 3]
        }
    }

    /// Integrates one posed RGB-D frame. `rgb` is `[H, W, 3]`, `depth` and
    /// `alpha` are `[H, W]`, all row-major.
    pub fn integrate(&mut self, camera: &Camera, rgb: &[f32], depth: &[f32], alpha: &[f32]) -> Result<()> {
        let (w, h) = (camera.width, camera.height);
        if rgb.len() != 3 * w * h || depth.len() != w * h || alpha.len() != w * h {
            return Err(Error::invalid("tsdf", "frame does not match camera resolution"));
        }
        for idx in 0..self.len() {
            let Some((uv, d)) = camera.project(self.position(idx)) else {
                continue;
            };
            if !(uv[0] >= 0.0 && uv[1] >= 0.0) {
                continue;
            }
            let (px, py) = (uv[0] as usize, uv[1] as usize);
            if px >= w || py >= h {
                continue;
            }
            let pix = py * w + px;
            if (alpha[pix] as f64) < ALPHA_GATE {
                continue;
            }
            let sdf = depth[pix] as f64 - d;
            if sdf < -self.trunc {
                continue;
            }
            let t = (sdf / self.trunc).min(1.0) as f32;
            let wt = self.weight[idx];
            self.tsdf[idx] = (self.tsdf[idx] * wt + t) / (wt + 1.0);
            self.weight[idx] = wt + 1.0;
            for c in 0..3 {
                self.color[idx][c] += rgb[3 * pix + c];
            }
        }
        Ok(())
    }
}

/// Renders `set` from every camera and fuses the gated depth maps into a
/// volume over the set's bounding box padded by `padding` of its extent.
/// An empty set yields an all-zero-weight volume over `[-1, 1]³`.
pub fn tsdf_fuse<F: Real>(
    set: &GaussianSet<F>,
    cameras: &[Camera],
    voxel: f64,
    trunc: f64,
    padding: f64,
    settings: &RenderSettings,
) -> Result<TsdfVolume> {
    let (lo, hi) = padded_bounds(set, padding);
    let mut vol = TsdfVolume::new(lo, hi, voxel, trunc)?;
    fuse_into(&mut vol, set, cameras, settings)?;
    Ok(vol)
}

pub fn padded_bounds<F: Real>(set: &GaussianSet<F>, padding: f64) -> (Vec3<f64>, Vec3<f64>) {
    let Some((mut lo, mut hi)) = set.bounds() else {
        return ([-1.0; 3], [1.0; 3]);
    };
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-3);
    for k in 0..3 {
        lo[k] -= padding * extent;
        hi[k] += padding * extent;
    }
    (lo, hi)
}

pub fn fuse_into<F: Real>(
    vol: &mut TsdfVolume,
    set: &GaussianSet<F>,
    cameras: &[Camera],
    settings: &RenderSettings,
) -> Result<()> {
    let settings = RenderSettings {
        background: [0.0; 3],
        ..*settings
    };
    for cam in cameras {
        let img = render(set, cam, &settings)?;
        let f = |t: &crate::tensor::Tensor<F>| t.data().iter().map(|v| v.to_f64_lossy() as f32).collect::<Vec<_>>();
        vol.integrate(cam, &f(&img.rgb), &f(&img.depth), &f(&img.alpha))?;
    }
    Ok(())
}

/// Indexed triangle mesh with per-vertex colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3<f64>>,
    pub colors: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

// corner offsets and corner pairs of each cube edge
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Isosurface at `tsdf = 0`. Cubes with an unobserved corner are skipped.
/// Vertices on shared grid edges are merged, so closed surfaces come out
/// closed. Triangles wind counter-clockwise seen from outside (positive side).
pub fn marching_cubes(vol: &TsdfVolume) -> Mesh {
    let mut mesh = Mesh::default();
    let [nx, ny, nz] = vol.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut cache: HashMap<(usize, u8), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx = CORNERS.map(|c| vol.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&n| vol.weight[n] <= 0.0) {
                    continue;
                }
                let mut case = 0usize;
                for (b, &n) in idx.iter().enumerate() {
                    if vol.tsdf[n] < 0.0 {
                        case |= 1 << b;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut t = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let (a, b) = EDGES[e as usize];
                        let (lo, hi) = if idx[a] < idx[b] { (a, b) } else { (b, a) };
                        let (va, vb) = (vol.tsdf[idx[lo]] as f64, vol.tsdf[idx[hi]] as f64);
                        let s = if va != vb { va / (va - vb) } else { 0.5 };
                        // crossings on a grid point are shared by all its edges
                        let key = match s {
                            0.0 => (idx[lo], 3),
                            1.0 => (idx[hi], 3),
                            _ => (idx[lo], (0..3).find(|&x| CORNERS[a][x] != CORNERS[b][x]).unwrap() as u8),
                        };
                        t[slot] = *cache.entry(key).or_insert_with(|| {
                            let (pa, pb) = (vol.position(idx[lo]), vol.position(idx[hi]));
                            let (ca, cb) = (vol.mean_color(idx[lo]), vol.mean_color(idx[hi]));
                            mesh.vertices
                                .push(linalg::add(pa, linalg::scale(linalg::sub(pb, pa), s)));
                            mesh.colors.push([0, 1, 2].map(|c| ca[c] + (cb[c] - ca[c]) * s as f32));
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        mesh.triangles.push([t[0], t[2], t[1]]);
                    }
                }
            }
        }
    }
    mesh
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_counts().values().all(|&c| c == 2)
    }

    /// Signed enclosed volume; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| self.vertices[v as usize]);
                linalg::dot(a, linalg::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Component label per triangle, triangles being connected through
    /// shared vertices. Returns labels and the count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0] as usize);
            for &v in &t[1..] {
                let r = find(&mut parent, v as usize);
                parent[r] = r0;
            }
        }
        let mut label = HashMap::new();
        let labels = self
            .triangles
            .iter()
            .map(|t| {
                let r = find(&mut parent, t[0] as usize);
                let n = label.len();
                *label.entry(r).or_insert(n)
            })
            .collect();
        (labels, label.len())
    }

    /// Keeps only the listed triangles and the vertices they use.
    pub fn retain_triangles(&self, keep: impl Fn(usize) -> bool) -> Mesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = Mesh::default();
        for (ti, t) in self.triangles.iter().enumerate() {
            if !keep(ti) {
                continue;
            }
            let t = t.map(|v| {
                let v = v as usize;
                if remap[v] == u32::MAX {
                    remap[v] = out.vertices.len() as u32;
                    out.vertices.push(self.vertices[v]);
                    out.colors.push(self.colors.get(v).copied().unwrap_or([0.5; 3]));
                }
                remap[v]
            });
            out.triangles.push(t);
        }
        out
    }

    /// Appends `other` as new vertices and triangles.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors
            .extend((0..other.vertices.len()).map(|i| other.colors.get(i).copied().unwrap_or([0.5; 3])));
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|v| v + base)));
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let props = [
            "float x",
            "float y",
            "float z",
            "uchar red",
            "uchar green",
            "uchar blue",
        ];
        let mut bytes = ply::header(&[
            (
                "vertex",
                self.vertices.len(),
                props.iter().map(|s| s.to_string()).collect(),
            ),
            (
                "face",
                self.triangles.len(),
                vec!["list uchar int vertex_indices".into()],
            ),
        ])
        .into_bytes();
        for (i, v) in self.vertices.iter().enumerate() {
            for x in v {
                bytes.extend_from_slice(&(*x as f32).to_le_bytes());
            }
            let c = self.colors.get(i).copied().unwrap_or([0.5; 3]);
            bytes.extend(c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        for t in &self.triangles {
            bytes.push(3);
            for v in t {
                bytes.extend_from_slice(&(*v as i32).to_le_bytes());
            }
        }
        ply::write_atomic(path, &bytes)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        ply::write_atomic(path, s.as_bytes())
    }

    pub fn read_ply(path: &Path) -> Result<Mesh> {
        let data = ply::read_ply(path)?;
        let bad = |m: &str| Error::format(path, m.to_string());
        let v = data.element("vertex").ok_or_else(|| bad("no vertex element"))?;
        let col = |n: &str| v.scalar(n).ok_or_else(|| bad(&format!("vertex property {n} missing")));
        let (x, y, z) = (col("x")?, col("y")?, col("z")?);
        let rgb = [v.scalar("red"), v.scalar("green"), v.scalar("blue")];
        let mut mesh = Mesh::default();
        for i in 0..v.count {
            mesh.vertices.push([x[i], y[i], z[i]]);
            mesh.colors.push(rgb.map(|c| c.map_or(0.5, |c| (c[i] / 255.0) as f32)));
        }
        if let Some(f) = data.element("face") {
            let lists = f
                .list("vertex_indices")
                .ok_or_else(|| bad("face vertex_indices missing"))?;
            for l in lists {
                if l.len() != 3 || l.iter().any(|&i| i as usize >= v.count) {
                    return Err(bad("faces must be triangles over existing vertices"));
                }
                mesh.triangles.push([l[0], l[1], l[2]]);
            }
        }
        Ok(mesh)
    }
}

/// Deletes connected components with fewer than `min_fraction` of the
/// largest component's triangles.
pub fn remove_floaters(mesh: &Mesh, min_fraction: f64) -> Mesh {
    if mesh.is_empty() {
        return mesh.clone();
    }
    let (labels, n) = mesh.components();
    let mut sizes = vec![0usize; n];
    for &l in &labels {
        sizes[l] += 1;
    }
    let largest = *sizes.iter().max().unwrap() as f64;
    mesh.retain_triangles(|t| sizes[labels[t]] as f64 >= min_fraction * largest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub views: usize,
    pub resolution: usize,
    pub fov_y_deg: f64,
    /// camera distance as a multiple of the padded bounding-box half diagonal
    pub radius_factor: f64,
    /// cells along the longest side when `voxel` is 0
    pub grid: usize,
    pub voxel: f64,
    /// truncation distance in voxels
    pub trunc_voxels: f64,
    pub padding: f64,
    pub min_fraction: f64,
    pub render: RenderSettings,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            views: 200,
            resolution: 128,
            fov_y_deg: 50.0,
            radius_factor: 2.5,
            grid: 128,
            voxel: 0.0,
            trunc_voxels: 3.0,
            padding: 0.1,
            min_fraction: 0.05,
            render: RenderSettings::default(),
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.grid < 2 || !(self.trunc_voxels >= 2.0) {
            return Err(Error::Config(
                "mesh: need resolution > 0, grid >= 2, trunc_voxels >= 2".into(),
            ));
        }
        if !(self.radius_factor > 1.0) || !(self.min_fraction >= 0.0) || !(self.padding >= 0.0) {
            return Err(Error::Config(
                "mesh: need radius_factor > 1, min_fraction >= 0, padding >= 0".into(),
            ));
        }
        self.render.validate()
    }
}

/// Fusion rig and volume, meshing and floater removal in one call.
pub fn extract_mesh<F: Real>(set: &GaussianSet<F>, cfg: &MeshConfig) -> Result<(Mesh, TsdfVolume)> {
    cfg.validate()?;
    let (lo, hi) = padded_bounds(set, cfg.padding);
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let voxel = if cfg.voxel > 0.0 {
        cfg.voxel
    } else {
        extent / (cfg.grid - 1) as f64
    };
    let centre = linalg::scale(linalg::add(lo, hi), 0.5);
    let radius = cfg.radius_factor * 0.5 * linalg::norm(linalg::sub(hi, lo));
    let intr = Intrinsics {
        fov_y_deg: cfg.fov_y_deg,
        width: cfg.resolution,
        height: cfg.resolution,
        near: 0.1 * radius,
        far: 4.0 * radius,
    };
    let cams = fibonacci_cameras(cfg.views, radius, centre, intr)?;
    let mut vol = TsdfVolume::new(lo, hi, voxel, cfg.trunc_voxels * voxel)?;
    fuse_into(&mut vol, set, &cams, &cfg.render)?;
    let mesh = remove_floaters(&marching_cubes(&vol), cfg.min_fraction);
    Ok((mesh, vol))
}

/// Summed unnormalised Gaussian density `Σ o exp(-½ dᵀΣ⁻¹d)` at `x`.
pub fn gaussian_density<F: Real>(set: &GaussianSet<F>, x: Vec3<f64>) -> f64 {
    set.iter()
        .map(|g| {
            let r = linalg::quat_to_mat(g.rotation);
            let local = linalg::mat_t_vec(&r, linalg::sub(x, g.position));
            let md2: f64 = (0..3).map(|k| (local[k] / g.scale[k]).powi(2)).sum();
            if md2 > 50.0 {
                0.0
            } else {
                g.opacity * (-0.5 * md2).exp()
            }
        })
        .sum()
}

/// Outermost radius from `centre` along `dir` where the density crosses
/// `level`, searched over `[0, r_max]`.
pub fn density_level_radius<F: Real>(
    set: &GaussianSet<F>,
    centre: Vec3<f64>,
    dir: Vec3<f64>,
    level: f64,
    r_max: f64,
) -> Option<f64> {
    let at = |r: f64| gaussian_density(set, linalg::add(centre, linalg::scale(dir, r))) - level;
    let steps = 400;
    let h = r_max / steps as f64;
    let mut outer = at(r_max);
    for s in (0..steps).rev() {
        let (a, b) = (s as f64 * h, (s + 1) as f64 * h);
        let inner = at(a);
        if inner >= 0.0 && outer < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..40 {
                let m = 0.5 * (lo + hi);
                if at(m) >= 0.0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        outer = inner;
    }
    None
}

/// Shell of flat Gaussians tangent to a sphere, placed on a Fibonacci
/// lattice.
pub fn gaussian_sphere(n: usize, radius: f64, tangent_scale: f64, normal_scale: f64, opacity: f64) -> GaussianSet<f32> {
    use crate::gaussian::Gaussian;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let gs: Vec<Gaussian> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let nrm = [r * phi.cos(), r * phi.sin(), z];
            let t = i as f64 / n as f64;
            Gaussian {
                position: linalg::scale(nrm, radius),
                rotation: linalg::z_to(nrm),
                scale: [tangent_scale, tangent_scale, normal_scale],
                opacity,
                color: [0.3 + 0.5 * t, 0.6, 0.9 - 0.5 * t],
            }
        })
        .collect();
    GaussianSet::from_gaussians(&gs)
}
