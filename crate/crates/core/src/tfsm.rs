//! Time-frequency sequence modelling at the bottleneck.
//!
//! A block first runs a bidirectional GRU across the frequency bins of each
//! frame (intra-frame, so it costs no latency), projects back to `C` and adds
//! the input. It then runs a unidirectional GRU along time independently for
//! every bin, projects back to `C` and adds again. The only carried state is
//! the `F × h` time-GRU hidden matrix.

use crate::error::{Error, Result};
use crate::tensor::{BiGruFreq, CausalLayer, FeatureMap, Gru, Linear, WeightSource};

#[derive(Clone, Debug)]
pub struct TfsmBlock {
    pub channels: usize,
    pub hidden: usize,
    fgru: BiGruFreq,
    fproj: Linear,
    tgru: Gru,
    tproj: Linear,
}

/// Time-GRU hidden state, `F × h`, empty until the first frame.
#[derive(Clone, Debug, Default)]
pub struct TfsmState {
    h: Vec<f32>,
}

fn gru_specs(prefix: &str, d_in: usize, h: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.w_ih"), vec![3 * h, d_in]),
        (format!("{prefix}.w_hh"), vec![3 * h, h]),
        (format!("{prefix}.b_ih"), vec![3 * h]),
        (format!("{prefix}.b_hh"), vec![3 * h]),
    ]
}

fn load_gru(src: &impl WeightSource, prefix: &str) -> Result<Gru> {
    Gru::from_tensors(
        src.tensor(&format!("{prefix}.w_ih"))?,
        src.tensor(&format!("{prefix}.w_hh"))?,
        src.tensor(&format!("{prefix}.b_ih"))?,
        src.tensor(&format!("{prefix}.b_hh"))?,
    )
}

fn load_linear(src: &impl WeightSource, prefix: &str) -> Result<Linear> {
    Linear::from_tensors(
        src.tensor(&format!("{prefix}.w"))?,
        src.tensor(&format!("{prefix}.b"))?,
    )
}

impl TfsmBlock {
    pub fn tensor_specs(prefix: &str, channels: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
        let mut v = gru_specs(&format!("{prefix}.fgru.fwd"), channels, hidden);
        v.extend(gru_specs(&format!("{prefix}.fgru.bwd"), channels, hidden));
        v.push((format!("{prefix}.fproj.w"), vec![channels, 2 * hidden]));
        v.push((format!("{prefix}.fproj.b"), vec![channels]));
        v.extend(gru_specs(&format!("{prefix}.tgru"), channels, hidden));
        v.push((format!("{prefix}.tproj.w"), vec![channels, hidden]));
        v.push((format!("{prefix}.tproj.b"), vec![channels]));
        v
    }

    pub fn from_weights(src: &impl WeightSource, prefix: &str) -> Result<Self> {
        let fgru = BiGruFreq::new(
            load_gru(src, &format!("{prefix}.fgru.fwd"))?,
            load_gru(src, &format!("{prefix}.fgru.bwd"))?,
        )?;
        let fproj = load_linear(src, &format!("{prefix}.fproj"))?;
        let tgru = load_gru(src, &format!("{prefix}.tgru"))?;
        let tproj = load_linear(src, &format!("{prefix}.tproj"))?;
        let c = fgru.fwd.d_in;
        let h = fgru.hidden();
        if fproj.d_in != 2 * h
            || fproj.d_out != c
            || tgru.d_in != c
            || tgru.hidden != h
            || tproj.d_in != h
            || tproj.d_out != c
        {
            return Err(Error::InvalidConfig(format!(
                "TFSM block `{prefix}` has inconsistent sizes (C={c}, h={h})"
            )));
        }
        Ok(Self {
            channels: c,
            hidden: h,
            fgru,
            fproj,
            tgru,
            tproj,
        })
    }
}

/// Adds `rows` (`F × C`) to a `[c][f]` frame in place.
fn add_rows_transposed(frame: &mut [f32], rows: &[f64], channels: usize, freqs: usize) {
    for c in 0..channels {
        for f in 0..freqs {
            let v = &mut frame[c * freqs + f];
            *v = (*v as f64 + rows[f * channels + c]) as f32;
        }
    }
}

impl CausalLayer for TfsmBlock {
    type State = TfsmState;

    fn init_state(&self) -> TfsmState {
        TfsmState::default()
    }

    fn in_channels(&self) -> usize {
        self.channels
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (self.channels, freqs)
    }

    fn step(&self, st: &mut TfsmState, x: &[f32], freqs: usize) -> Vec<f32> {
        let c = self.channels;
        let mut y = x.to_vec();

        let rows: Vec<f64> = self
            .fgru
            .apply_rows(x, freqs)
            .into_iter()
            .map(f64::from)
            .collect();
        add_rows_transposed(&mut y, &self.fproj.apply_rows(&rows, freqs), c, freqs);

        if st.h.is_empty() {
            st.h = vec![0.0; freqs * self.hidden];
        }
        let mut xs = vec![0.0f32; freqs * c];
        for ci in 0..c {
            for f in 0..freqs {
                xs[f * c + ci] = y[ci * freqs + f];
            }
        }
        self.tgru.step_rows(&xs, &mut st.h, freqs);
        let h64: Vec<f64> = st.h.iter().map(|&v| v as f64).collect();
        add_rows_transposed(&mut y, &self.tproj.apply_rows(&h64, freqs), c, freqs);
        y
    }
}

/// Runs `block` over a whole `(C, F, T)` map.
pub fn tfsm_forward(block: &TfsmBlock, x: &FeatureMap) -> Result<FeatureMap> {
    block.forward(x)
}
