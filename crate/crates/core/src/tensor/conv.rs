//! Time-causal 2-D convolution and transposed convolution.
//!
//! Kernels are `(k_f, k_t)` over (frequency, time). Convolution pads `k_t - 1`
//! zero frames before the first frame; transposed convolution produces
//! `T + k_t - 1` raw frames and drops the trailing ones. Either way output
//! frame `t` reads input frames `t - k_t + 1 ..= t` only.
//!
//! Both lower to an im2col matrix per frame whose rows are ordered
//! (input channel, frequency tap, time tap), multiplied by the weight matrix.

use std::collections::VecDeque;

use super::{matmul_into, CausalLayer, FeatureMap, WeightTensor};
use crate::error::{Error, Result};

/// Previous input frames a causal (de)convolution still needs, oldest first.
#[derive(Clone, Debug, Default)]
pub struct ConvState {
    hist: VecDeque<Vec<f32>>,
}

impl ConvState {
    /// Input frame `back` steps in the past (`back >= 1`), `None` before the start.
    fn past(&self, back: usize) -> Option<&[f32]> {
        self.hist
            .len()
            .checked_sub(back)
            .map(|i| self.hist[i].as_slice())
    }

    fn push(&mut self, frame: &[f32], keep: usize) {
        if keep == 0 {
            return;
        }
        if self.hist.len() == keep {
            let mut old = self.hist.pop_front().unwrap();
            old.clear();
            old.extend_from_slice(frame);
            self.hist.push_back(old);
        } else {
            self.hist.push_back(frame.to_vec());
        }
    }
}

fn kernel_dims(w: &WeightTensor) -> Result<[usize; 4]> {
    match w.dims[..] {
        [a, b, c, d] if a > 0 && b > 0 && c > 0 && d > 0 => Ok([a, b, c, d]),
        _ => Err(Error::InvalidConfig(format!(
            "kernel `{}` must be a non-empty rank-4 tensor, got {:?}",
            w.name, w.dims
        ))),
    }
}

fn check_bias(b: &WeightTensor, n: usize) -> Result<()> {
    if b.dims != [n] {
        return Err(Error::InvalidConfig(format!(
            "bias `{}` must be [{n}], got {:?}",
            b.name, b.dims
        )));
    }
    Ok(())
}

/// Causal Conv2d: weight `[c_out, c_in, k_f, k_t]`, time stride 1.
#[derive(Clone, Debug)]
pub struct Conv2dCausal {
    pub cin: usize,
    pub cout: usize,
    pub kf: usize,
    pub kt: usize,
    pub stride_f: usize,
    pub pad_f: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Conv2dCausal {
    pub fn from_tensors(
        w: &WeightTensor,
        b: &WeightTensor,
        stride: (usize, usize),
        pad_f: usize,
    ) -> Result<Self> {
        let [cout, cin, kf, kt] = kernel_dims(w)?;
        check_bias(b, cout)?;
        if stride.0 == 0 || stride.1 != 1 {
            return Err(Error::InvalidConfig(format!(
                "causal conv needs frequency stride >= 1 and time stride 1, got {stride:?}"
            )));
        }
        Ok(Self {
            cin,
            cout,
            kf,
            kt,
            stride_f: stride.0,
            pad_f,
            w: w.to_f64(),
            b: b.to_f64(),
        })
    }

    pub fn out_freqs(&self, fin: usize) -> usize {
        (fin + 2 * self.pad_f)
            .checked_sub(self.kf)
            .map_or(0, |n| n / self.stride_f + 1)
    }
}

impl CausalLayer for Conv2dCausal {
    type State = ConvState;

    fn init_state(&self) -> ConvState {
        ConvState::default()
    }

    fn in_channels(&self) -> usize {
        self.cin
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (self.cout, self.out_freqs(freqs))
    }

    fn step(&self, state: &mut ConvState, x: &[f32], fin: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.cin * fin);
        let fout = self.out_freqs(fin);
        let k = self.cin * self.kf * self.kt;
        let mut cols = vec![0.0f64; k * fout];
        for j in 0..self.kt {
            let back = self.kt - 1 - j;
            let src = if back == 0 { Some(x) } else { state.past(back) };
            let Some(src) = src else { continue };
            for ci in 0..self.cin {
                let chan = &src[ci * fin..(ci + 1) * fin];
                for a in 0..self.kf {
                    let row = ((ci * self.kf + a) * self.kt + j) * fout;
                    let dst = &mut cols[row..row + fout];
                    for (fo, d) in dst.iter_mut().enumerate() {
                        let fi = (fo * self.stride_f + a) as isize - self.pad_f as isize;
                        if fi >= 0 && (fi as usize) < fin {
                            *d = chan[fi as usize] as f64;
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0f64; self.cout * fout];
        matmul_into(&mut out, &self.w, &cols, self.cout, k, fout);
        state.push(x, self.kt - 1);
        out.chunks_exact(fout)
            .zip(&self.b)
            .flat_map(|(row, &b)| row.iter().map(move |&v| (v + b) as f32))
            .collect()
    }
}

#[derive(Clone, Debug)]
struct DeconvPhase {
    /// `(c_in, time tap, input bin offset)` per im2col row.
    rows: Vec<(usize, usize, isize)>,
    /// `c_out × rows.len()`.
    w: Vec<f64>,
}

/// Causal ConvTranspose2d: weight `[c_in, c_out, k_f, k_t]`, time stride 1.
///
/// Output bins are split into `stride_f` phases (`fo mod stride_f`); each
/// phase only touches the frequency taps that land on it, so no work is
/// spent on the zeros a dilated-input formulation would multiply.
#[derive(Clone, Debug)]
pub struct Deconv2dCausal {
    pub cin: usize,
    pub cout: usize,
    pub kf: usize,
    pub kt: usize,
    pub stride_f: usize,
    pub pad_f: usize,
    pub out_pad_f: usize,
    phases: Vec<DeconvPhase>,
    b: Vec<f64>,
}

impl Deconv2dCausal {
    pub fn from_tensors(
        w: &WeightTensor,
        b: &WeightTensor,
        stride: (usize, usize),
        pad_f: usize,
        out_pad_f: usize,
    ) -> Result<Self> {
        let [cin, cout, kf, kt] = kernel_dims(w)?;
        check_bias(b, cout)?;
        if stride.0 == 0 || stride.1 != 1 {
            return Err(Error::InvalidConfig(format!(
                "causal deconv needs frequency stride >= 1 and time stride 1, got {stride:?}"
            )));
        }
        let s = stride.0 as isize;
        let mut phases = Vec::with_capacity(stride.0);
        for p in 0..s {
            let mut rows = Vec::new();
            let mut taps = Vec::new();
            for ci in 0..cin {
                for a in 0..kf {
                    let num = p + pad_f as isize - a as isize;
                    if num.rem_euclid(s) != 0 {
                        continue;
                    }
                    for j in 0..kt {
                        rows.push((ci, j, num.div_euclid(s)));
                        taps.push((ci, a, j));
                    }
                }
            }
            let mut pw = vec![0.0; cout * rows.len()];
            for co in 0..cout {
                for (r, &(ci, a, j)) in taps.iter().enumerate() {
                    pw[co * rows.len() + r] = w.data[((ci * cout + co) * kf + a) * kt + j] as f64;
                }
            }
            phases.push(DeconvPhase { rows, w: pw });
        }
        Ok(Self {
            cin,
            cout,
            kf,
            kt,
            stride_f: stride.0,
            pad_f,
            out_pad_f,
            phases,
            b: b.to_f64(),
        })
    }

    pub fn out_freqs(&self, fin: usize) -> usize {
        let n = (fin as isize - 1) * self.stride_f as isize - 2 * self.pad_f as isize
            + self.kf as isize
            + self.out_pad_f as isize;
        n.max(0) as usize
    }
}

impl CausalLayer for Deconv2dCausal {
    type State = ConvState;

    fn init_state(&self) -> ConvState {
        ConvState::default()
    }

    fn in_channels(&self) -> usize {
        self.cin
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (self.cout, self.out_freqs(freqs))
    }

    fn step(&self, state: &mut ConvState, x: &[f32], fin: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.cin * fin);
        let fout = self.out_freqs(fin);
        let s = self.stride_f;
        let mut out = vec![0.0f32; self.cout * fout];
        for (p, phase) in self.phases.iter().enumerate() {
            if p >= fout {
                break;
            }
            let nq = (fout - 1 - p) / s + 1;
            let k = phase.rows.len();
            let mut cols = vec![0.0f64; k * nq];
            for (r, &(ci, j, off)) in phase.rows.iter().enumerate() {
                let src = if j == 0 { Some(x) } else { state.past(j) };
                let Some(src) = src else { continue };
                let chan = &src[ci * fin..(ci + 1) * fin];
                for (q, d) in cols[r * nq..(r + 1) * nq].iter_mut().enumerate() {
                    let fi = q as isize + off;
                    if fi >= 0 && (fi as usize) < fin {
                        *d = chan[fi as usize] as f64;
                    }
                }
            }
            let mut acc = vec![0.0f64; self.cout * nq];
            matmul_into(&mut acc, &phase.w, &cols, self.cout, k, nq);
            for co in 0..self.cout {
                let b = self.b[co];
                for q in 0..nq {
                    out[co * fout + p + q * s] = (acc[co * nq + q] + b) as f32;
                }
            }
        }
        state.push(x, self.kt - 1);
        out
    }
}

/// Causal convolution of a whole feature map.
pub fn conv2d_causal(
    input: &FeatureMap,
    w: &WeightTensor,
    b: &WeightTensor,
    stride: (usize, usize),
    pad_f: usize,
) -> Result<FeatureMap> {
    Conv2dCausal::from_tensors(w, b, stride, pad_f)?.forward(input)
}

/// Causal transposed convolution of a whole feature map.
pub fn deconv2d_causal(
    input: &FeatureMap,
    w: &WeightTensor,
    b: &WeightTensor,
    stride: (usize, usize),
    pad_f: usize,
    out_pad_f: usize,
) -> Result<FeatureMap> {
    Deconv2dCausal::from_tensors(w, b, stride, pad_f, out_pad_f)?.forward(input)
}
