//! Dense arrays and the causal neural primitives the network is built from.
//!
//! Every layer here works frame by frame: a batch `forward` over a whole
//! [`FeatureMap`] is a loop over the same per-frame `step` a streaming caller
//! uses, so batch and streaming results are bit-identical. Accumulation
//! happens in `f64` with a fixed summation order; stored results are `f32`.

mod act;
mod conv;
mod gemm;
mod gru;
mod norm;
pub(crate) mod pool;
mod softmax;

pub use act::{prelu, tanh_act, Prelu};
pub use conv::{conv2d_causal, deconv2d_causal, Conv2dCausal, ConvState, Deconv2dCausal};
pub use gemm::matmul_into;
pub use gru::{bigru_over_frequency, gru_sequence, BiGruFreq, Gru};
pub use norm::{batchnorm_eval, BatchNorm};
pub use pool::{
    causal_pool_channels, causal_pool_time, global_pool_cf, PoolMode, PoolWindow,
};
pub use softmax::{causal_mask, masked_softmax, softmax_in_place};

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Network activation with dims (channels, frequency bins, time frames).
///
/// Stored frame-major (`[t][c][f]`) so a single time frame is one contiguous
/// slice, which is what the streaming path consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    freqs: usize,
    frames: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, freqs: usize, frames: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || freqs == 0 || frames == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be >= 1, got ({channels}, {freqs}, {frames})"
            )));
        }
        if data.len() != channels * freqs * frames {
            return Err(Error::Shape(format!(
                "data length {} != {channels}*{freqs}*{frames}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            freqs,
            frames,
            data,
        })
    }

    pub fn zeros(channels: usize, freqs: usize, frames: usize) -> Self {
        Self::new(channels, freqs, frames, vec![0.0; channels * freqs * frames])
            .expect("zeros: dims must be >= 1")
    }

    /// Builds a map from `f(c, f, t)`.
    pub fn from_fn(
        channels: usize,
        freqs: usize,
        frames: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut m = Self::zeros(channels, freqs, frames);
        for t in 0..frames {
            for c in 0..channels {
                for k in 0..freqs {
                    m.data[(t * channels + c) * freqs + k] = f(c, k, t);
                }
            }
        }
        m
    }

    /// Stacks per-frame `[c][f]` slices along time.
    pub fn from_frames(channels: usize, freqs: usize, frames: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * freqs * frames.len());
        for (t, fr) in frames.iter().enumerate() {
            if fr.len() != channels * freqs {
                return Err(Error::Shape(format!(
                    "frame {t} has {} values, expected {}",
                    fr.len(),
                    channels * freqs
                )));
            }
            data.extend_from_slice(fr);
        }
        Self::new(channels, freqs, frames.len(), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.freqs, self.frames)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn freqs(&self) -> usize {
        self.freqs
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.freqs
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, t: usize) -> f32 {
        self.data[(t * self.channels + c) * self.freqs + f]
    }

    #[inline]
    pub fn set(&mut self, c: usize, f: usize, t: usize, v: f32) {
        self.data[(t * self.channels + c) * self.freqs + f] = v;
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.frame_len())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.freqs != other.freqs || self.frames != other.frames {
            return Err(Error::Shape(format!(
                "cannot concat {:?} with {:?} along channels",
                self.dims(),
                other.dims()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for (a, b) in self.iter_frames().zip(other.iter_frames()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        FeatureMap::new(self.channels + other.channels, self.freqs, self.frames, data)
    }

    /// Applies a per-frame function producing `(channels, freqs)` frames.
    pub fn map_frames(
        &self,
        channels: usize,
        freqs: usize,
        mut f: impl FnMut(usize, &[f32]) -> Vec<f32>,
    ) -> Result<FeatureMap> {
        let frames: Vec<Vec<f32>> = self.iter_frames().enumerate().map(|(t, x)| f(t, x)).collect();
        FeatureMap::from_frames(channels, freqs, &frames)
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::InvalidWeights(format!(
                "tensor `{name}`: {} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Lookup of parameter tensors by name.
pub trait WeightSource {
    fn tensor(&self, name: &str) -> Result<&WeightTensor>;
}

/// Insertion-ordered set of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightMap {
    tensors: IndexMap<String, WeightTensor>,
}

impl WeightMap {
    /// Inserts `t`, returning the tensor it replaced.
    pub fn insert(&mut self, t: WeightTensor) -> Option<WeightTensor> {
        self.tensors.insert(t.name.clone(), t)
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut WeightTensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightTensor> {
        self.tensors.values()
    }

    pub fn remove(&mut self, name: &str) -> Option<WeightTensor> {
        self.tensors.shift_remove(name)
    }

    pub fn total_params(&self) -> usize {
        self.iter().map(WeightTensor::numel).sum()
    }
}

impl WeightSource for WeightMap {
    fn tensor(&self, name: &str) -> Result<&WeightTensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }
}

impl FromIterator<WeightTensor> for WeightMap {
    fn from_iter<I: IntoIterator<Item = WeightTensor>>(iter: I) -> Self {
        let mut m = Self::default();
        for t in iter {
            m.insert(t);
        }
        m
    }
}

/// Row-major `f64` matrix (attention matrices, pooled maps).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

/// 1×1 convolution over a `[c][f]` frame: `out = W · x + b`, W is `cout × cin`.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub cin: usize,
    pub cout: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Pointwise {
    pub fn from_tensors(w: &WeightTensor, b: &WeightTensor) -> Result<Self> {
        let (cout, cin) = match w.dims.as_slice() {
            [o, i] => (*o, *i),
            [o, i, 1, 1] => (*o, *i),
            d => {
                return Err(Error::InvalidConfig(format!(
                    "pointwise weight `{}` must be [out, in], got {d:?}",
                    w.name
                )))
            }
        };
        if b.dims != [cout] {
            return Err(Error::InvalidConfig(format!(
                "bias `{}` must be [{cout}], got {:?}",
                b.name, b.dims
            )));
        }
        Ok(Self {
            cin,
            cout,
            w: w.to_f64(),
            b: b.to_f64(),
        })
    }

    pub fn apply(&self, x: &[f32], freqs: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.cin * freqs);
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0f64; self.cout * freqs];
        matmul_into(&mut out, &self.w, &xf, self.cout, self.cin, freqs);
        for (row, &b) in out.chunks_exact_mut(freqs).zip(&self.b) {
            for v in row {
                *v += b;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}

/// Dense layer over rows: `out[r] = x[r] · Wᵀ + b`, stored with W transposed.
#[derive(Clone, Debug)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    wt: Vec<f64>,
    b: Vec<f64>,
}

impl Linear {
    pub fn from_tensors(w: &WeightTensor, b: &WeightTensor) -> Result<Self> {
        let [d_out, d_in] = w.dims[..] else {
            return Err(Error::InvalidConfig(format!(
                "linear weight `{}` must be [out, in], got {:?}",
                w.name, w.dims
            )));
        };
        if b.dims != [d_out] {
            return Err(Error::InvalidConfig(format!(
                "bias `{}` must be [{d_out}], got {:?}",
                b.name, b.dims
            )));
        }
        let mut wt = vec![0.0; d_in * d_out];
        for o in 0..d_out {
            for i in 0..d_in {
                wt[i * d_out + o] = w.data[o * d_in + i] as f64;
            }
        }
        Ok(Self {
            d_in,
            d_out,
            wt,
            b: b.to_f64(),
        })
    }

    /// `x` is `rows × d_in`; returns `rows × d_out` in `f64`.
    pub fn apply_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.d_out];
        matmul_into(&mut out, x, &self.wt, rows, self.d_in, self.d_out);
        for row in out.chunks_exact_mut(self.d_out) {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        out
    }
}

/// A layer that maps one time frame at a time with explicit carried state.
pub trait CausalLayer {
    type State: Clone;

    fn init_state(&self) -> Self::State;

    fn in_channels(&self) -> usize;

    /// Processes one `[c][f]` frame with `freqs` input bins.
    fn step(&self, state: &mut Self::State, frame: &[f32], freqs: usize) -> Vec<f32>;

    /// Output `(channels, freqs)` for an input with `freqs` bins.
    fn out_shape(&self, freqs: usize) -> (usize, usize);

    /// Whole-map forward: a loop of [`CausalLayer::step`] from a fresh state.
    fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels() {
            return Err(Error::InvalidConfig(format!(
                "layer expects {} input channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        let (c, f) = self.out_shape(input.freqs());
        if c == 0 || f == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer output would be empty for {} input bins",
                input.freqs()
            )));
        }
        let mut st = self.init_state();
        input.map_frames(c, f, |_, x| self.step(&mut st, x, input.freqs()))
    }
}
