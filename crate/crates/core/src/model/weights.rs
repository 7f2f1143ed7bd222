//! Weight schema, seeded initialization and the `OFN1` container format.
//!
//! ```text
//! "OFN1"  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u32 dim, Π dims × f32 }
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{WeightMap, WeightTensor};
use crate::tfca::Tfca;
use crate::tfsm::TfsmBlock;

pub const MAGIC: &[u8; 4] = b"OFN1";

/// Range of the seeded uniform initializer.
pub const INIT_RANGE: f32 = 0.1;

/// Initial PReLU slope.
pub const INIT_PRELU: f32 = 0.25;

/// What a tensor is for; decides initialization and whether it counts as a
/// trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    BnGamma,
    BnRunningMean,
    BnRunningVar,
    PreluSlope,
}

impl TensorRole {
    pub fn trainable(self) -> bool {
        !matches!(self, Self::BnRunningMean | Self::BnRunningVar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: TensorRole,
    /// top-level group for the parameter breakdown
    pub module: &'static str,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

fn push_plain(out: &mut Vec<TensorSpec>, module: &'static str, specs: Vec<(String, Vec<usize>)>) {
    out.extend(specs.into_iter().map(|(name, dims)| TensorSpec {
        name,
        dims,
        role: TensorRole::Weight,
        module,
    }));
}

fn push_bn(out: &mut Vec<TensorSpec>, module: &'static str, prefix: &str, c: usize) {
    for (suffix, role) in [
        ("gamma", TensorRole::BnGamma),
        ("beta", TensorRole::Weight),
        ("mean", TensorRole::BnRunningMean),
        ("var", TensorRole::BnRunningVar),
    ] {
        out.push(TensorSpec {
            name: format!("{prefix}.bn.{suffix}"),
            dims: vec![c],
            role,
            module,
        });
    }
}

fn push_prelu(out: &mut Vec<TensorSpec>, module: &'static str, prefix: &str, c: usize) {
    out.push(TensorSpec {
        name: format!("{prefix}.prelu.a"),
        dims: vec![c],
        role: TensorRole::PreluSlope,
        module,
    });
}

/// Every tensor the configuration needs, in canonical file order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let mut v = Vec::new();
    let [kf, kt] = cfg.kernel;
    push_plain(&mut v, "ofif", Tfca::tensor_specs("ofif.tfca", cfg.input_channels));

    let mut cin = cfg.input_channels;
    for (i, &cout) in cfg.encoder_channels.iter().enumerate() {
        let p = format!("enc.{i}");
        push_plain(
            &mut v,
            "encoder",
            vec![
                (format!("{p}.conv.w"), vec![cout, cin, kf, kt]),
                (format!("{p}.conv.b"), vec![cout]),
            ],
        );
        push_bn(&mut v, "encoder", &p, cout);
        push_prelu(&mut v, "encoder", &p, cout);
        cin = cout;
    }

    let c = cfg.bottleneck_channels();
    for (i, &h) in cfg.tfsm_hidden.iter().enumerate() {
        push_plain(&mut v, "tfsm", TfsmBlock::tensor_specs(&format!("tfsm.{i}"), c, h));
    }

    let n = cfg.depth();
    for i in 0..n {
        let skip_c = cfg.encoder_channels[n - 1 - i];
        push_plain(&mut v, "skip_tfca", Tfca::tensor_specs(&format!("skip.{i}.tfca"), skip_c));
    }
    for (i, &cout) in cfg.decoder_channels.iter().enumerate() {
        let p = format!("dec.{i}");
        let cin = cfg.decoder_in_channels(i);
        push_plain(
            &mut v,
            "decoder",
            vec![
                (format!("{p}.deconv.w"), vec![cin, cout, kf, kt]),
                (format!("{p}.deconv.b"), vec![cout]),
            ],
        );
        push_bn(&mut v, "decoder", &p, cout);
        if i + 1 < n {
            push_prelu(&mut v, "decoder", &p, cout);
            push_plain(&mut v, "decoder_tfca", Tfca::tensor_specs(&format!("{p}.tfca"), cout));
        }
    }
    v
}

/// Checks that `w` holds exactly the tensors `cfg` needs, with the right shapes.
pub fn validate(cfg: &ModelConfig, w: &WeightMap) -> Result<()> {
    let specs = tensor_specs(cfg);
    for s in &specs {
        let t = w.get(&s.name).ok_or_else(|| Error::MissingTensor(s.name.clone()))?;
        if t.dims != s.dims {
            return Err(Error::TensorShape {
                name: s.name.clone(),
                expected: s.dims.clone(),
                got: t.dims.clone(),
            });
        }
        if let Some(v) = t.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidWeights(format!("tensor `{}` contains {v}", s.name)));
        }
    }
    let known: HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    if let Some(t) = w.iter().find(|t| !known.contains(t.name.as_str())) {
        return Err(Error::UnexpectedTensor(t.name.clone()));
    }
    Ok(())
}

/// Deterministic weights for `cfg`: weights and biases `U[−0.1, 0.1]`,
/// batch-norm `γ = 1 + U[−0.1, 0.1]` with running mean 0 and variance 1,
/// PReLU slopes 0.25.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> WeightMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tensor_specs(cfg)
        .into_iter()
        .map(|s| {
            let n = s.numel();
            let data = match s.role {
                TensorRole::Weight => (0..n).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect(),
                TensorRole::BnGamma => (0..n)
                    .map(|_| 1.0 + rng.random_range(-INIT_RANGE..=INIT_RANGE))
                    .collect(),
                TensorRole::BnRunningMean => vec![0.0; n],
                TensorRole::BnRunningVar => vec![1.0; n],
                TensorRole::PreluSlope => vec![INIT_PRELU; n],
            };
            WeightTensor::new(s.name, s.dims, data).expect("spec sizes agree")
        })
        .collect()
}

/// Encodes `w` in the `OFN1` format.
pub fn write_weights(w: &WeightMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * w.total_params());
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(w.len())
        .map_err(|_| Error::InvalidWeights("more than u32::MAX tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in w.iter() {
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| Error::InvalidWeights(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::InvalidWeights(format!("tensor `{}` rank > 255", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidWeights(format!("tensor `{}` dim too large", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                what: format!("{what} needs {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes an `OFN1` buffer. Errors carry the byte offset of the problem.
pub fn read_weights(buf: &[u8]) -> Result<WeightMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Malformed {
            offset: 0,
            what: "bad magic, expected \"OFN1\"".into(),
        });
    }
    let count = r.u32("tensor count")?;
    let mut map = WeightMap::default();
    for i in 0..count {
        let start = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Malformed {
                offset: name_at,
                what: format!("tensor {i} name is not UTF-8"),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let data_at = r.pos;
        let bytes = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed {
                offset: data_at,
                what: format!("tensor `{name}` dims {dims:?} overflow"),
            })?;
        let raw = r.take(bytes, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = WeightTensor::new(name, dims, data)?;
        if map.contains(&t.name) {
            return Err(Error::Malformed {
                offset: start,
                what: format!("duplicate tensor `{}`", t.name),
            });
        }
        map.insert(t);
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed {
            offset: r.pos,
            what: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(map)
}

pub fn load_weights(path: &Path) -> Result<WeightMap> {
    read_weights(&std::fs::read(path)?)
}

pub fn save_weights(w: &WeightMap, path: &Path) -> Result<()> {
    std::fs::write(path, write_weights(w)?)?;
    Ok(())
}

/// Default config sidecar for a weight file: same path, `.json` extension.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}
