//! Gated recurrent units.
//!
//! Gate convention (weights in `[r; z; n]` row blocks, two bias vectors):
//!
//! ```text
//! r  = σ(W_r x + b_ir + U_r h + b_hr)
//! z  = σ(W_z x + b_iz + U_z h + b_hz)
//! n  = tanh(W_n x + b_in + r ⊙ (U_n h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use super::{matmul_into, CausalLayer, FeatureMap, WeightTensor};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub d_in: usize,
    pub hidden: usize,
    /// `d_in × 3h`
    w_ih_t: Vec<f64>,
    /// `h × 3h`
    w_hh_t: Vec<f64>,
    b_ih: Vec<f64>,
    b_hh: Vec<f64>,
}

fn transpose(data: &[f32], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c] as f64;
        }
    }
    out
}

impl Gru {
    /// `w_ih: [3h, d_in]`, `w_hh: [3h, h]`, `b_ih, b_hh: [3h]`.
    pub fn from_tensors(
        w_ih: &WeightTensor,
        w_hh: &WeightTensor,
        b_ih: &WeightTensor,
        b_hh: &WeightTensor,
    ) -> Result<Self> {
        let [g, d_in] = w_ih.dims[..] else {
            return Err(Error::InvalidConfig(format!("`{}` must be rank 2", w_ih.name)));
        };
        if g == 0 || g % 3 != 0 {
            return Err(Error::InvalidConfig(format!(
                "`{}` rows must be a positive multiple of 3, got {g}",
                w_ih.name
            )));
        }
        let h = g / 3;
        for (t, dims) in [(w_hh, vec![g, h]), (b_ih, vec![g]), (b_hh, vec![g])] {
            if t.dims != dims {
                return Err(Error::InvalidConfig(format!(
                    "`{}` must be {dims:?}, got {:?}",
                    t.name, t.dims
                )));
            }
        }
        Ok(Self {
            d_in,
            hidden: h,
            w_ih_t: transpose(&w_ih.data, g, d_in),
            w_hh_t: transpose(&w_hh.data, g, h),
            b_ih: b_ih.to_f64(),
            b_hh: b_hh.to_f64(),
        })
    }

    /// Input projections `x W_ihᵀ + b_ih` for `rows` inputs.
    fn input_proj(&self, xs: &[f32], rows: usize) -> Vec<f64> {
        let g = 3 * self.hidden;
        let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0; rows * g];
        matmul_into(&mut out, &x, &self.w_ih_t, rows, self.d_in, g);
        for row in out.chunks_exact_mut(g) {
            for (v, b) in row.iter_mut().zip(&self.b_ih) {
                *v += b;
            }
        }
        out
    }

    /// Advances `rows` independent states given their input projections.
    fn recur(&self, gx: &[f64], hs: &mut [f32], rows: usize) {
        let h = self.hidden;
        let g = 3 * h;
        let hv: Vec<f64> = hs.iter().map(|&v| v as f64).collect();
        let mut gh = vec![0.0; rows * g];
        matmul_into(&mut gh, &hv, &self.w_hh_t, rows, h, g);
        for r in 0..rows {
            let gxr = &gx[r * g..(r + 1) * g];
            let ghr = &gh[r * g..(r + 1) * g];
            let hr = &mut hs[r * h..(r + 1) * h];
            for i in 0..h {
                let rg = sigmoid(gxr[i] + (ghr[i] + self.b_hh[i]));
                let zg = sigmoid(gxr[h + i] + (ghr[h + i] + self.b_hh[h + i]));
                let n = (gxr[2 * h + i] + rg * (ghr[2 * h + i] + self.b_hh[2 * h + i])).tanh();
                hr[i] = ((1.0 - zg) * n + zg * hv[r * h + i]) as f32;
            }
        }
    }

    /// One step for `rows` independent sequences (`xs: rows × d_in`, `hs: rows × h`).
    pub fn step_rows(&self, xs: &[f32], hs: &mut [f32], rows: usize) {
        assert_eq!(xs.len(), rows * self.d_in);
        assert_eq!(hs.len(), rows * self.hidden);
        let gx = self.input_proj(xs, rows);
        self.recur(&gx, hs, rows);
    }

    pub fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        let mut out = h.to_vec();
        self.step_rows(x, &mut out, 1);
        out
    }

    /// Runs over a time-major `T × d_in` sequence from `h0`.
    pub fn run(&self, seq: &[f32], h0: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        if h0.len() != self.hidden || seq.len() % self.d_in != 0 {
            return Err(Error::Shape(format!(
                "gru expects h0 of {} and rows of {}, got {} and {}",
                self.hidden,
                self.d_in,
                h0.len(),
                seq.len()
            )));
        }
        let steps = seq.len() / self.d_in;
        let g = 3 * self.hidden;
        let gx = self.input_proj(seq, steps);
        let mut h = h0.to_vec();
        let mut out = Vec::with_capacity(steps * self.hidden);
        for t in 0..steps {
            self.recur(&gx[t * g..(t + 1) * g], &mut h, 1);
            out.extend_from_slice(&h);
        }
        Ok((out, h))
    }
}

/// Runs `gru` over `seq` (time-major, `T × d_in`) and returns `(outputs, final state)`.
pub fn gru_sequence(gru: &Gru, seq: &[f32], h0: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
    gru.run(seq, h0)
}

/// Bidirectional GRU over the frequency axis of each frame.
///
/// Each frame is its own pair of sequences (low→high, high→low bins) with
/// zero initial state, so output frame `t` depends on input frame `t` alone.
#[derive(Clone, Debug)]
pub struct BiGruFreq {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGruFreq {
    pub fn new(fwd: Gru, bwd: Gru) -> Result<Self> {
        if fwd.d_in != bwd.d_in || fwd.hidden != bwd.hidden {
            return Err(Error::InvalidConfig(
                "bidirectional GRU directions must share input and hidden sizes".into(),
            ));
        }
        Ok(Self { fwd, bwd })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Runs both directions over one `[c][f]` frame; returns `F × 2h` rows
    /// laid out `[h_fwd | h_bwd]`.
    pub fn apply_rows(&self, frame: &[f32], freqs: usize) -> Vec<f32> {
        let c = self.fwd.d_in;
        let h = self.fwd.hidden;
        let g = 3 * h;
        let mut rows = vec![0.0f32; freqs * c];
        for ci in 0..c {
            for f in 0..freqs {
                rows[f * c + ci] = frame[ci * freqs + f];
            }
        }
        let gx_f = self.fwd.input_proj(&rows, freqs);
        let gx_b = self.bwd.input_proj(&rows, freqs);
        let mut out = vec![0.0f32; freqs * 2 * h];
        let mut state = vec![0.0f32; h];
        for f in 0..freqs {
            self.fwd.recur(&gx_f[f * g..(f + 1) * g], &mut state, 1);
            out[f * 2 * h..f * 2 * h + h].copy_from_slice(&state);
        }
        state.fill(0.0);
        for f in (0..freqs).rev() {
            self.bwd.recur(&gx_b[f * g..(f + 1) * g], &mut state, 1);
            out[f * 2 * h + h..(f + 1) * 2 * h].copy_from_slice(&state);
        }
        out
    }
}

impl CausalLayer for BiGruFreq {
    type State = ();

    fn init_state(&self) {}

    fn in_channels(&self) -> usize {
        self.fwd.d_in
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (2 * self.fwd.hidden, freqs)
    }

    fn step(&self, _: &mut (), frame: &[f32], freqs: usize) -> Vec<f32> {
        let rows = self.apply_rows(frame, freqs);
        let c2 = 2 * self.fwd.hidden;
        let mut out = vec![0.0f32; c2 * freqs];
        for f in 0..freqs {
            for c in 0..c2 {
                out[c * freqs + f] = rows[f * c2 + c];
            }
        }
        out
    }
}

/// Bidirectional frequency-axis GRU over every frame: `(C, F, T) → (2h, F, T)`.
pub fn bigru_over_frequency(input: &FeatureMap, bigru: &BiGruFreq) -> Result<FeatureMap> {
    bigru.forward(input)
}
