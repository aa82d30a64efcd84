//! Named parameters and the `.mvw` container.
//!
//! Layout: magic `MVW1`, u32 entry count, then per entry a u16 name length,
//! the UTF-8 name, u8 dtype (0 = f32), u8 rank, `rank` u32 extents and the
//! row-major f32 payload. All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Tensor, BN_EPS};

const MAGIC: &[u8; 4] = b"MVW1";

/// How a parameter is initialised by [`WeightStore::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    FanIn(usize),
    Const(f32),
    /// Row `d` of an (D, N) table holds ln(1..=N).
    LogRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin: usize, k: usize) {
    let fan_in = cin * k * k;
    let mut p = |suffix: &str, shape: Vec<usize>, init| {
        out.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape,
            init,
        })
    };
    p("kernel", vec![cout, cin, k, k], Init::FanIn(fan_in));
    p("bias", vec![cout], Init::FanIn(fan_in));
    p("bn.scale", vec![cout], Init::Const(1.0));
    p("bn.shift", vec![cout], Init::Const(0.0));
    p("bn.mean", vec![cout], Init::Const(0.0));
    p("bn.var", vec![cout], Init::Const(1.0 - BN_EPS));
}

fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, o: usize, i: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![o, i],
        init: Init::FanIn(i),
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![o],
        init: Init::FanIn(i),
    });
}

fn push_fusion(out: &mut Vec<ParamSpec>, prefix: &str, w: usize) {
    push_conv(out, &format!("{prefix}.conv"), w, 2 * w, 3);
    push_conv(out, &format!("{prefix}.attn.channel"), w, w, 1);
    push_conv(out, &format!("{prefix}.attn.spatial"), 1, 1, 3);
}

/// Every parameter the configured graph reads, in evaluation order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let w = &cfg.widths;
    let s = w.len();
    let n = cfg.window;
    let d = cfg.bottleneck_channels();
    let ns = cfg.ss2d_state;
    let mut out = Vec::new();

    push_conv(&mut out, "motion.rv.stem.conv", w[0], n, 3);
    for i in 0..s - 1 {
        push_conv(&mut out, &format!("motion.rv.down.{i}.conv"), w[i + 1], w[i], 3);
    }
    push_conv(&mut out, "motion.bev.stem.conv", w[0], n, 3);
    push_conv(&mut out, "semantic.stem.conv", w[0], 1, 3);
    for i in 0..s {
        push_fusion(&mut out, &format!("motion.fuse_rv.{i}"), w[i]);
        push_fusion(&mut out, &format!("motion.fuse_sem.{i}"), w[i]);
        if i + 1 < s {
            push_conv(&mut out, &format!("motion.down.{i}.conv"), w[i + 1], w[i], 3);
            push_conv(&mut out, &format!("semantic.down.{i}.conv"), w[i + 1], w[i], 3);
        }
    }

    push_linear(&mut out, "fusion.ss2d.in_proj", d, d);
    for k in 0..4 {
        let p = format!("fusion.ss2d.dir{k}");
        let mut add = |suffix: &str, shape: Vec<usize>, init| {
            out.push(ParamSpec {
                name: format!("{p}.{suffix}"),
                shape,
                init,
            })
        };
        add("a_log", vec![d, ns], Init::LogRange);
        add("d", vec![d], Init::Const(1.0));
        add("dt_weight", vec![d, d], Init::FanIn(d));
        add("dt_bias", vec![d], Init::FanIn(d));
        add("b_weight", vec![ns, d], Init::FanIn(d));
        add("b_bias", vec![ns], Init::FanIn(d));
        add("c_weight", vec![ns, d], Init::FanIn(d));
        add("c_bias", vec![ns], Init::FanIn(d));
    }
    push_linear(&mut out, "fusion.gate.spatial", d, w[s - 1]);
    push_linear(&mut out, "fusion.gate.channel", d, d);

    for i in (0..s - 1).rev() {
        let cin = w[i + 1] / 4 + w[i];
        push_conv(&mut out, &format!("semantic.up.{i}.conv"), w[i], cin, 3);
    }
    push_linear(&mut out, "semantic.head", cfg.classes, w[0]);
    for i in (0..s - 1).rev() {
        let below = if i + 1 == s - 1 { d } else { w[i + 1] };
        let cin = below / 4 + 2 * w[i];
        push_conv(&mut out, &format!("motion.up.{i}.conv"), w[i], cin, 3);
    }
    push_linear(&mut out, "motion.head", cfg.classes, w[0]);
    out
}

/// Parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialisation: kernels, linear weights and biases uniform in
    /// ±1/sqrt(fan_in); batch-norm exactly the identity.
    pub fn random(cfg: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for spec in param_specs(cfg) {
            let len: usize = spec.shape.iter().product();
            let data: Vec<f32> = match spec.init {
                Init::FanIn(f) => {
                    let b = 1.0 / (f as f32).sqrt();
                    (0..len).map(|_| rng.gen_range(-b..=b)).collect()
                }
                Init::Const(v) => vec![v; len],
                Init::LogRange => {
                    let n = spec.shape[1];
                    (0..len).map(|i| ((i % n) as f32 + 1.0).ln()).collect()
                }
            };
            let t = Tensor::new(spec.shape, data).expect("consistent spec");
            store.params.insert(spec.name, t);
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.params.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces every parameter whose name ends with one of `suffixes` by zeros.
    pub fn zero_matching(&mut self, suffixes: &[&str]) {
        for (name, t) in self.params.iter_mut() {
            if suffixes.iter().any(|s| name.ends_with(s)) {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    /// Conv + batch-norm parameters stored under `prefix`.
    pub fn conv(&self, prefix: &str, relu: bool) -> Result<ConvParams> {
        let g = |s: &str| self.get(&format!("{prefix}.{s}")).cloned();
        Ok(ConvParams {
            kernel: g("kernel")?,
            bias: g("bias")?,
            bn_scale: g("bn.scale")?,
            bn_shift: g("bn.shift")?,
            bn_mean: g("bn.mean")?,
            bn_var: g("bn.var")?,
            relu,
        })
    }

    /// Stores `p` under `prefix` using the same names [`Self::conv`] reads.
    pub fn insert_conv(&mut self, prefix: &str, p: ConvParams) {
        self.insert(format!("{prefix}.kernel"), p.kernel);
        self.insert(format!("{prefix}.bias"), p.bias);
        self.insert(format!("{prefix}.bn.scale"), p.bn_scale);
        self.insert(format!("{prefix}.bn.shift"), p.bn_shift);
        self.insert(format!("{prefix}.bn.mean"), p.bn_mean);
        self.insert(format!("{prefix}.bn.var"), p.bn_var);
    }

    /// Every parameter of `cfg` must be present with its exact shape.
    /// Unknown names are rejected unless `permissive`.
    pub fn validate(&self, cfg: &NetworkConfig, permissive: bool) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(format!(
                    "expected {:?}, file has {:?}",
                    spec.shape,
                    t.shape()
                ))
                .at(spec.name.clone()));
            }
        }
        if !permissive {
            let known: std::collections::HashSet<&str> =
                specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.params.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::UnexpectedParameter(extra.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(0);
            out.push(t.shape().len() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::MalformedWeights("bad magic, expected MVW1".into()));
        }
        let count = r.u32("entry count")?;
        let mut store = WeightStore::new();
        for entry in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(len as usize, "name")?)
                .map_err(|_| Error::MalformedWeights(format!("entry {entry}: name is not UTF-8")))?
                .to_string();
            let dtype = r.take(1, "dtype")?[0];
            if dtype != 0 {
                return Err(Error::MalformedWeights(format!("{name}: unsupported dtype {dtype}")));
            }
            let rank = r.take(1, "rank")?[0] as usize;
            if !(1..=4).contains(&rank) {
                return Err(Error::MalformedWeights(format!("{name}: unsupported rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::MalformedWeights(format!("{name}: extents overflow")))?;
            let data: Vec<f32> = r
                .take(n, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::MalformedWeights(format!("{name}: {e}")))?;
            if store.params.insert(name.clone(), t).is_some() {
                return Err(Error::MalformedWeights(format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedWeights(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedWeights(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
