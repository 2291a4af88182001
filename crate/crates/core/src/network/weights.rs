//! Named parameter store, initialisation and the checkpoint format.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, UpsamplerKind};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

const MAGIC: &[u8; 8] = b"GRMCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init) {
    out.push(ParamSpec { name, shape, init });
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize) {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    spec(out, format!("{name}.w"), vec![fan_in, fan_out], Init::Normal(std));
    spec(out, format!("{name}.b"), vec![fan_out], Init::Zeros);
}

fn layer_norm(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    spec(out, format!("{name}.g"), vec![c], Init::Ones);
    spec(out, format!("{name}.b"), vec![c], Init::Zeros);
}

fn block(out: &mut Vec<ParamSpec>, name: &str, c: usize, ratio: usize) {
    layer_norm(out, &format!("{name}.ln1"), c);
    linear(out, &format!("{name}.attn.qkv"), c, 3 * c);
    linear(out, &format!("{name}.attn.proj"), c, c);
    layer_norm(out, &format!("{name}.ln2"), c);
    linear(out, &format!("{name}.mlp.fc1"), c, ratio * c);
    linear(out, &format!("{name}.mlp.fc2"), ratio * c, c);
}

/// Output head groups: `(name, channels)` in attribute-map order.
pub fn head_groups(cfg: &NetworkConfig) -> Vec<(&'static str, usize)> {
    if cfg.single_head {
        vec![("all", cfg.activation.channels())]
    } else {
        vec![
            ("position", cfg.activation.position.channels()),
            ("rotation", 4),
            ("scale", 3),
            ("opacity", 1),
            ("color", 3),
        ]
    }
}

/// Every parameter of the network in a fixed order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let c = cfg.width;
    let mut out = Vec::new();
    let fan_in = cfg.patch * cfg.patch * 9;
    spec(
        &mut out,
        "tok.w".into(),
        vec![fan_in, c],
        Init::Normal((1.0 / fan_in as f64).sqrt()),
    );
    spec(&mut out, "tok.b".into(), vec![c], Init::Zeros);
    let pos_shape = if cfg.per_view_pos {
        vec![cfg.views, cfg.tokens_per_view(), c]
    } else {
        vec![cfg.tokens_per_view(), c]
    };
    spec(&mut out, "pos".into(), pos_shape, Init::Normal(0.02));
    for i in 0..cfg.enc_layers {
        block(&mut out, &format!("enc.{i}"), c, cfg.mlp_ratio);
    }
    for b in 0..cfg.up_blocks {
        let cin = cfg.width_at(b);
        match cfg.upsampler {
            UpsamplerKind::Transformer => {
                linear(&mut out, &format!("up.{b}.fc"), cin, 2 * cin);
                block(&mut out, &format!("up.{b}.win"), cin / 2, cfg.mlp_ratio);
                block(&mut out, &format!("up.{b}.shift"), cin / 2, cfg.mlp_ratio);
            }
            UpsamplerKind::Conv => linear(&mut out, &format!("up.{b}.conv"), 9 * cin, 2 * cin),
        }
    }
    let cf = cfg.width_at(cfg.up_blocks);
    let r2 = cfg.head_shuffle() * cfg.head_shuffle();
    let [_, rot, ..] = cfg.activation.layout();
    for (name, k) in head_groups(cfg) {
        let std = 0.1 * (1.0 / cf as f64).sqrt();
        spec(&mut out, format!("head.{name}.w"), vec![cf, r2 * k], Init::Normal(std));
        // quaternion bias (1, 0, 0, 0) keeps early rotations well-defined
        let mut bias = vec![0.0; k];
        let rot_offset = if cfg.single_head {
            Some(rot.0)
        } else {
            (name == "rotation").then_some(0)
        };
        if let Some(o) = rot_offset {
            bias[o] = 1.0;
        }
        let bias: Vec<f64> = bias.iter().flat_map(|&v| std::iter::repeat_n(v, r2)).collect();
        spec(&mut out, format!("head.{name}.b"), vec![r2 * k], Init::Values(bias));
    }
    out
}

/// Total scalar parameter count for a configuration.
pub fn param_count(cfg: &NetworkConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

#[derive(Debug, Clone)]
pub struct Weights<F: Real> {
    pub config: NetworkConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: Arc<HashMap<String, usize>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    dtype: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

impl<F: Real> Weights<F> {
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = param_specs(config);
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let n: usize = s.shape.iter().product();
            let data: Vec<F> = match &s.init {
                Init::Normal(std) => {
                    let d = Normal::new(0.0, *std).map_err(|e| Error::Config(e.to_string()))?;
                    (0..n).map(|_| F::lit(d.sample(&mut rng))).collect()
                }
                Init::Zeros => vec![F::zero(); n],
                Init::Ones => vec![F::one(); n],
                Init::Values(v) => v.iter().map(|&x| F::lit(x)).collect(),
            };
            tensors.push(Tensor::new(&s.shape, data)?);
        }
        Ok(Self::from_parts(
            *config,
            specs.into_iter().map(|s| s.name).collect(),
            tensors,
        ))
    }

    fn from_parts(config: NetworkConfig, names: Vec<String>, tensors: Vec<Tensor<F>>) -> Self {
        let index = Arc::new(names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect());
        Self {
            config,
            names,
            tensors,
            index,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid("weights", format!("unknown parameter '{name}'")))?;
        if value.shape() != self.tensors[i].shape() {
            return Err(Error::shape("weights.set", value.shape(), self.tensors[i].shape()));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn set_all(&mut self, tensors: Vec<Tensor<F>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::invalid("weights", "parameter count changed"));
        }
        for (old, new) in self.tensors.iter().zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(Error::shape("weights.set_all", new.shape(), old.shape()));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Real>(&self) -> Weights<G> {
        Weights::from_parts(
            self.config,
            self.names.clone(),
            self.tensors.iter().map(Tensor::cast).collect(),
        )
    }

    /// Registers every parameter on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<F>, trainable: bool) -> Params<'t, F> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Params {
            vars,
            index: Arc::clone(&self.index),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config,
            dtype: "f32".into(),
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::invalid("checkpoint", e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Atomic write: temp file then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, msg),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format(Path::new("<checkpoint>"), m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        header.config.validate()?;
        let expected = param_specs(&header.config);
        if expected.len() != header.params.len()
            || expected
                .iter()
                .zip(&header.params)
                .any(|(s, p)| s.name != p.name || s.shape != p.shape)
        {
            return Err(bad("parameter manifest does not match the config".into()));
        }
        let mut data = &bytes[16 + hlen..];
        let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if data.len() != 4 * total {
            return Err(bad(format!("expected {} data bytes, found {}", 4 * total, data.len())));
        }
        let mut tensors = Vec::with_capacity(header.params.len());
        for p in &header.params {
            let n: usize = p.shape.iter().product();
            let vals: Vec<F> = data[..4 * n]
                .chunks_exact(4)
                .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            data = &data[4 * n..];
            tensors.push(Tensor::new(&p.shape, vals)?);
        }
        Ok(Self::from_parts(
            header.config,
            header.params.into_iter().map(|p| p.name).collect(),
            tensors,
        ))
    }
}

/// Parameters bound to a tape, looked up by name.
pub struct Params<'t, F: Real> {
    pub vars: Vec<Var<'t, F>>,
    index: Arc<HashMap<String, usize>>,
}

impl<'t, F: Real> Params<'t, F> {
    pub fn get(&self, name: &str) -> Var<'t, F> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named '{name}'"),
        }
    }
}

impl<'t, F: Real> Params<'t, F> {
    #[cfg(test)]
    pub(crate) fn for_test(vars: Vec<Var<'t, F>>, index: HashMap<String, usize>) -> Self {
        Self {
            vars,
            index: Arc::new(index),
        }
    }
}
