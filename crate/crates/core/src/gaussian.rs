//! Gaussian scene representation: raw per-pixel attribute maps, their
//! activation into renderable Gaussians, multi-view merging and PLY interop.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::io::ply;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Zeroth-order real spherical-harmonics basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Activated Gaussians. Shapes: positions/scales/colors `[N, 3]`,
/// rotations `[N, 4]` (unit `w, x, y, z`), opacities `[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet<F: Real> {
    pub positions: Tensor<F>,
    pub rotations: Tensor<F>,
    pub scales: Tensor<F>,
    pub opacities: Tensor<F>,
    pub colors: Tensor<F>,
}

/// One Gaussian's attributes in 64-bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl<F: Real> GaussianSet<F> {
    pub fn empty() -> Self {
        Self::from_gaussians(&[])
    }

    pub fn from_gaussians(gs: &[Gaussian]) -> Self {
        let n = gs.len();
        let flat = |f: &dyn Fn(&Gaussian) -> Vec<f64>, w: usize| {
            let data: Vec<F> = gs.iter().flat_map(f).map(F::lit).collect();
            let shape = if w == 1 { vec![n] } else { vec![n, w] };
            Tensor::new(&shape, data).expect("consistent widths")
        };
        Self {
            positions: flat(&|g| g.position.to_vec(), 3),
            rotations: flat(&|g| g.rotation.to_vec(), 4),
            scales: flat(&|g| g.scale.to_vec(), 3),
            opacities: flat(&|g| vec![g.opacity], 1),
            colors: flat(&|g| g.color.to_vec(), 3),
        }
    }

    pub fn len(&self) -> usize {
        self.opacities.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Gaussian {
        let p = self.positions.data();
        let r = self.rotations.data();
        let s = self.scales.data();
        let c = self.colors.data();
        let f = |x: F| x.to_f64_lossy();
        Gaussian {
            position: [f(p[3 * i]), f(p[3 * i + 1]), f(p[3 * i + 2])],
            rotation: [f(r[4 * i]), f(r[4 * i + 1]), f(r[4 * i + 2]), f(r[4 * i + 3])],
            scale: [f(s[3 * i]), f(s[3 * i + 1]), f(s[3 * i + 2])],
            opacity: f(self.opacities.data()[i]),
            color: [f(c[3 * i]), f(c[3 * i + 1]), f(c[3 * i + 2])],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn cast<G: Real>(&self) -> GaussianSet<G> {
        GaussianSet {
            positions: self.positions.cast(),
            rotations: self.rotations.cast(),
            scales: self.scales.cast(),
            opacities: self.opacities.cast(),
            colors: self.colors.cast(),
        }
    }

    /// Checks every invariant: unit quaternions, scales in `[s_min, s_max]`,
    /// opacities and colors strictly inside `(0, 1)`, finite positions.
    pub fn validate(&self, s_min: f64, s_max: f64) -> Result<()> {
        let slack = 1e-6 * s_max.abs().max(1.0);
        for (i, g) in self.iter().enumerate() {
            let bad = |what: &str| Err(Error::invalid("gaussian set", format!("gaussian {i}: {what}")));
            let qn = g.rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > 1e-5 {
                return bad(&format!("quaternion norm {qn}"));
            }
            if g.scale.iter().any(|&s| s < s_min - slack || s > s_max + slack) {
                return bad(&format!("scale {:?} outside [{s_min}, {s_max}]", g.scale));
            }
            if !(g.opacity > 0.0 && g.opacity < 1.0) {
                return bad(&format!("opacity {}", g.opacity));
            }
            if g.color.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
                return bad(&format!("color {:?}", g.color));
            }
            if g.position.iter().any(|p| !p.is_finite()) {
                return bad("non-finite position");
            }
        }
        Ok(())
    }

    /// Concatenates sets view-major, preserving each set's order.
    pub fn merge(sets: &[GaussianSet<F>]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("merge_views", "no sets"));
        }
        let cat = |f: &dyn Fn(&GaussianSet<F>) -> &Tensor<F>| {
            let first = f(&sets[0]);
            let mut shape = first.shape().to_vec();
            shape[0] = sets.iter().map(|s| f(s).shape()[0]).sum();
            let data: Vec<F> = sets.iter().flat_map(|s| f(s).data().iter().copied()).collect();
            Tensor::new(&shape, data)
        };
        Ok(Self {
            positions: cat(&|s| &s.positions)?,
            rotations: cat(&|s| &s.rotations)?,
            scales: cat(&|s| &s.scales)?,
            opacities: cat(&|s| &s.opacities)?,
            colors: cat(&|s| &s.colors)?,
        })
    }

    /// Inverse of [`merge`](Self::merge) given the per-set lengths.
    pub fn split(&self, lengths: &[usize]) -> Result<Vec<Self>> {
        if lengths.iter().sum::<usize>() != self.len() {
            return Err(Error::invalid("split", "lengths do not sum to set size"));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(lengths.len());
        for &len in lengths {
            let part = |t: &Tensor<F>, w: usize| {
                let mut shape = t.shape().to_vec();
                shape[0] = len;
                Tensor::new(&shape, t.data()[start * w..(start + len) * w].to_vec())
            };
            out.push(Self {
                positions: part(&self.positions, 3)?,
                rotations: part(&self.rotations, 4)?,
                scales: part(&self.scales, 3)?,
                opacities: part(&self.opacities, 1)?,
                colors: part(&self.colors, 3)?,
            });
            start += len;
        }
        Ok(out)
    }

    /// Axis-aligned bounds of the positions.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        if self.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in self.iter() {
            for k in 0..3 {
                lo[k] = lo[k].min(g.position[k]);
                hi[k] = hi[k].max(g.position[k]);
            }
        }
        Some((lo, hi))
    }
}

/// The five attribute tensors of a Gaussian set recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars<'t, F: Real> {
    pub positions: Var<'t, F>,
    pub rotations: Var<'t, F>,
    pub scales: Var<'t, F>,
    pub opacities: Var<'t, F>,
    pub colors: Var<'t, F>,
}

impl<'t, F: Real> GaussianVars<'t, F> {
    pub fn leaves(tape: &'t Tape<F>, set: &GaussianSet<F>) -> Self {
        Self {
            positions: tape.leaf(set.positions.clone()),
            rotations: tape.leaf(set.rotations.clone()),
            scales: tape.leaf(set.scales.clone()),
            opacities: tape.leaf(set.opacities.clone()),
            colors: tape.leaf(set.colors.clone()),
        }
    }

    pub fn constants(tape: &'t Tape<F>, set: &GaussianSet<F>) -> Self {
        Self {
            positions: tape.constant(set.positions.clone()),
            rotations: tape.constant(set.rotations.clone()),
            scales: tape.constant(set.scales.clone()),
            opacities: tape.constant(set.opacities.clone()),
            colors: tape.constant(set.colors.clone()),
        }
    }

    pub fn values(&self) -> GaussianSet<F> {
        GaussianSet {
            positions: self.positions.value(),
            rotations: self.rotations.value(),
            scales: self.scales.value(),
            opacities: self.opacities.value(),
            colors: self.colors.value(),
        }
    }

    pub fn as_array(&self) -> [Var<'t, F>; 5] {
        [self.positions, self.rotations, self.scales, self.opacities, self.colors]
    }

    pub fn merge(parts: &[GaussianVars<'t, F>]) -> Result<Self> {
        let cat = |f: fn(&GaussianVars<'t, F>) -> Var<'t, F>| Var::concat(&parts.iter().map(f).collect::<Vec<_>>(), 0);
        Ok(Self {
            positions: cat(|g| g.positions)?,
            rotations: cat(|g| g.rotations)?,
            scales: cat(|g| g.scales)?,
            opacities: cat(|g| g.opacities)?,
            colors: cat(|g| g.colors)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleActivation {
    /// `s = s_min * sigmoid(x) + s_max * (1 - sigmoid(x))`
    #[default]
    Interpolated,
    /// `s = exp(x)`, unbounded
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthActivation {
    /// `tau = near + (far - near) * sigmoid(x)`
    #[default]
    Sigmoid,
    /// `tau = near + softplus(x)`
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// one depth channel, positions unprojected along the pixel ray
    #[default]
    Depth,
    /// three channels giving world positions directly
    Xyz,
}

impl PositionMode {
    pub fn channels(self) -> usize {
        match self {
            Self::Depth => 1,
            Self::Xyz => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub scale: ScaleActivation,
    pub depth: DepthActivation,
    pub position: PositionMode,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            s_min: 0.005,
            s_max: 0.02,
            scale: ScaleActivation::Interpolated,
            depth: DepthActivation::Sigmoid,
            position: PositionMode::Depth,
        }
    }
}

impl ActivationConfig {
    /// Raw channels per pixel: position (1 or 3), rotation 4, scale 3,
    /// opacity 1, color 3.
    pub fn channels(&self) -> usize {
        self.position.channels() + 11
    }

    /// `(offset, width)` of each attribute group in channel order
    /// position, rotation, scale, opacity, color.
    pub fn layout(&self) -> [(usize, usize); 5] {
        let p = self.position.channels();
        [(0, p), (p, 4), (p + 4, 3), (p + 7, 1), (p + 8, 3)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_min < self.s_max) {
            return Err(Error::Config(format!(
                "need 0 < s_min < s_max, got {} / {}",
                self.s_min, self.s_max
            )));
        }
        Ok(())
    }
}

/// Diagnostics from [`activate`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActivationStats {
    /// quaternions with (near-)zero norm replaced by the identity
    pub zero_quaternions: usize,
}

/// Activates one view's raw `[H, W, C]` attribute map into `H * W`
/// Gaussians, row-major.
pub fn activate<'t, F: Real>(
    raw: Var<'t, F>,
    camera: &Camera,
    cfg: &ActivationConfig,
) -> Result<(GaussianVars<'t, F>, ActivationStats)> {
    cfg.validate()?;
    let tape = raw.tape();
    let shape = raw.shape();
    let (h, w, c) = match shape.as_slice() {
        &[h, w, c] => (h, w, c),
        _ => {
            return Err(Error::shape(
                "activate",
                &shape,
                &[camera.height, camera.width, cfg.channels()],
            ))
        }
    };
    if h != camera.height || w != camera.width || c != cfg.channels() {
        return Err(Error::shape(
            "activate",
            &shape,
            &[camera.height, camera.width, cfg.channels()],
        ));
    }
    let n = h * w;
    let flat = raw.reshape(&[n, c])?;
    let [pos, rot, scl, opa, col] = cfg.layout();
    let group = |(off, width): (usize, usize)| flat.slice(1, off, off + width);

    let positions = match cfg.position {
        PositionMode::Depth => {
            let logit = group(pos)?;
            let tau = match cfg.depth {
                DepthActivation::Sigmoid => logit
                    .sigmoid()
                    .scale(F::lit(camera.far - camera.near))
                    .add_scalar(F::lit(camera.near)),
                DepthActivation::Softplus => logit.softplus().add_scalar(F::lit(camera.near)),
            };
            let rays = camera.pixel_rays();
            let dirs: Vec<F> = rays.directions.iter().flatten().map(|&v| F::lit(v)).collect();
            let dirs = tape.constant(Tensor::new(&[n, 3], dirs)?);
            let ones = tape.constant(Tensor::ones(&[1, 3]));
            let center = tape.constant(Tensor::new(&[3], camera.center.iter().map(|&v| F::lit(v)).collect())?);
            tau.matmul(&ones)?.mul(&dirs)?.add(&center)?
        }
        PositionMode::Xyz => group(pos)?,
    };

    let raw_q = group(rot)?;
    let qv = raw_q.value();
    let mut stats = ActivationStats::default();
    let mut fix = vec![F::zero(); n * 4];
    for (i, q) in qv.data().chunks(4).enumerate() {
        let norm2: F = q.iter().map(|v| *v * *v).sum();
        if norm2.to_f64_lossy().sqrt() < 1e-8 {
            stats.zero_quaternions += 1;
            fix[4 * i] = F::one();
        }
    }
    let rotations = if stats.zero_quaternions > 0 {
        raw_q.add(&tape.constant(Tensor::new(&[n, 4], fix)?))?
    } else {
        raw_q
    }
    .l2_normalize(1e-12)?;

    let s_logit = group(scl)?;
    let scales = match cfg.scale {
        ScaleActivation::Interpolated => s_logit
            .sigmoid()
            .scale(F::lit(cfg.s_min - cfg.s_max))
            .add_scalar(F::lit(cfg.s_max)),
        ScaleActivation::Exp => s_logit.exp(),
    };
    let opacities = group(opa)?.sigmoid().reshape(&[n])?;
    let colors = group(col)?.sigmoid();
    Ok((
        GaussianVars {
            positions,
            rotations,
            scales,
            opacities,
            colors,
        },
        stats,
    ))
}

/// Untaped convenience wrapper around [`activate`].
pub fn activate_values<F: Real>(
    raw: &Tensor<F>,
    camera: &Camera,
    cfg: &ActivationConfig,
) -> Result<(GaussianSet<F>, ActivationStats)> {
    let tape = Tape::new();
    let (vars, stats) = activate(tape.constant(raw.clone()), camera, cfg)?;
    Ok((vars.values(), stats))
}

const PLY_PROPS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Writes the de-facto splat PLY layout: SH-DC colors, logit opacities, log
/// scales, `(w, x, y, z)` rotations.
pub fn export_ply<F: Real>(set: &GaussianSet<F>, path: &Path) -> Result<()> {
    let props: Vec<String> = PLY_PROPS.iter().map(|p| format!("float {p}")).collect();
    let mut bytes = ply::header(&[("vertex", set.len(), props)]).into_bytes();
    for (i, g) in set.iter().enumerate() {
        let row = [
            g.position[0],
            g.position[1],
            g.position[2],
            (g.color[0] - 0.5) / SH_C0,
            (g.color[1] - 0.5) / SH_C0,
            (g.color[2] - 0.5) / SH_C0,
            logit(g.opacity),
            g.scale[0].ln(),
            g.scale[1].ln(),
            g.scale[2].ln(),
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "export_ply",
                format!("gaussian {i} has non-finite attributes"),
            ));
        }
        for v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    ply::write_atomic(path, &bytes)
}

pub fn import_ply<F: Real>(path: &Path) -> Result<GaussianSet<F>> {
    let data = ply::read_ply(path)?;
    let vertex = data
        .element("vertex")
        .ok_or_else(|| Error::format(path, "missing 'vertex' element"))?;
    let cols: Vec<&[f64]> = PLY_PROPS
        .iter()
        .map(|p| {
            vertex
                .scalar(p)
                .ok_or_else(|| Error::format(path, format!("missing vertex property '{p}'")))
        })
        .collect::<Result<_>>()?;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let gs: Vec<Gaussian> = (0..vertex.count)
        .map(|i| Gaussian {
            position: [cols[0][i], cols[1][i], cols[2][i]],
            color: [
                0.5 + SH_C0 * cols[3][i],
                0.5 + SH_C0 * cols[4][i],
                0.5 + SH_C0 * cols[5][i],
            ],
            opacity: sig(cols[6][i]),
            scale: [cols[7][i].exp(), cols[8][i].exp(), cols[9][i].exp()],
            rotation: [cols[10][i], cols[11][i], cols[12][i], cols[13][i]],
        })
        .collect();
    Ok(GaussianSet::from_gaussians(&gs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::linalg;

    fn cam(w: usize, h: usize, near: f64, far: f64) -> Camera {
        Camera::new(
            linalg::identity(),
            [0.0, 0.0, 0.0],
            Intrinsics {
                fov_y_deg: 50.0,
                width: w,
                height: h,
                near,
                far,
            },
        )
        .unwrap()
    }

    fn raw_pixel(values: [f64; 12]) -> Tensor<f64> {
        Tensor::new(&[1, 1, 12], values.to_vec()).unwrap()
    }

    #[test]
    fn activation_examples() {
        let cfg = ActivationConfig::default();
        let camera = cam(1, 1, 0.5, 2.5);
        let mut v = [0.0; 12];
        v[1] = 2.0;
        let (g, stats) = activate_values(&raw_pixel(v), &camera, &cfg).unwrap();
        assert_eq!(stats.zero_quaternions, 0);
        let g = g.get(0);
        assert!(g.scale.iter().all(|s| (s - 0.0125).abs() < 1e-12));
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
        // depth logit 0 -> tau 1.5 along (0, 0, -1)
        assert!((g.position[2] + 1.5).abs() < 1e-12);
        assert_eq!(g.opacity, 0.5);

        v[5] = 20.0;
        v[6] = 20.0;
        v[7] = 20.0;
        let (g, _) = activate_values(&raw_pixel(v), &camera, &cfg).unwrap();
        assert!(g.get(0).scale.iter().all(|s| (s - 0.005).abs() < 1e-6));
    }

    #[test]
    fn zero_quaternion_becomes_identity_and_is_counted() {
        let (g, stats) = activate_values(
            &raw_pixel([0.0; 12]),
            &cam(1, 1, 0.5, 2.5),
            &ActivationConfig::default(),
        )
        .unwrap();
        assert_eq!(stats.zero_quaternions, 1);
        assert_eq!(g.get(0).rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let tape = Tape::<f64>::new();
        let raw = tape.constant(Tensor::zeros(&[1, 1, 11]));
        assert!(activate(raw, &cam(1, 1, 0.5, 2.5), &ActivationConfig::default()).is_err());
    }

    #[test]
    fn merge_split_round_trip() {
        let a = GaussianSet::<f64>::from_gaussians(&[Gaussian {
            position: [1.0, 2.0, 3.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [0.01; 3],
            opacity: 0.3,
            color: [0.2, 0.4, 0.6],
        }]);
        let mut b = a.clone();
        b.positions = Tensor::new(&[1, 3], vec![4.0, 5.0, 6.0]).unwrap();
        let m = GaussianSet::merge(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.split(&[1, 1]).unwrap(), vec![a.clone(), b]);
        assert_eq!(GaussianSet::merge(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn ply_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        let set = GaussianSet::<f64>::from_gaussians(&[Gaussian {
            position: [0.1, -0.2, 0.3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [0.01, 0.02, 0.015],
            opacity: 0.75,
            color: [0.5, 0.5, 0.5],
        }]);
        export_ply(&set, &path).unwrap();
        let data = ply::read_ply(&path).unwrap();
        let v = data.element("vertex").unwrap();
        assert_eq!(v.scalar("f_dc_0").unwrap()[0], 0.0);
        assert!((v.scalar("opacity").unwrap()[0] - 3f64.ln()).abs() < 1e-6);
        let back: GaussianSet<f64> = import_ply(&path).unwrap();
        assert!((back.get(0).opacity - 0.75).abs() < 1e-6);
    }

    #[test]
    fn ply_missing_property_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        let mut bytes = ply::header(&[("vertex", 1, vec!["float x".into(), "float y".into()])]).into_bytes();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        let err = import_ply::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("'z'"), "{err}");
        std::fs::write(&path, b"plx\n").unwrap();
        assert!(import_ply::<f32>(&path).is_err());
    }
}
