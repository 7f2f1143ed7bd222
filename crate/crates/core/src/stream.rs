//! Chunked streaming inference and the causality harness.
//!
//! A [`StreamState`] buffers incoming samples until a full window is
//! available, runs that frame through [`Model::step_frame`], overlap-adds the
//! result and emits every sample no later frame can touch. Output is
//! bit-identical to [`Model::forward`] regardless of how the input is chunked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{padded_len, Model, NetworkState};
use crate::stdct::{OverlapAdd, Stdct, Waveform, ALGORITHMIC_DELAY};
use crate::tfca::AttentionMode;

/// Per-stream state. One per stream; push from a single thread at a time.
#[derive(Clone, Debug)]
pub struct StreamState {
    net: NetworkState,
    /// samples from `frames · H` onwards
    pending: Vec<f32>,
    frames: usize,
    consumed: usize,
    ola: OverlapAdd,
    closed: bool,
    delay: Option<usize>,
    max_lag: Option<usize>,
}

impl StreamState {
    /// Fails with [`Error::NotStreamable`] unless the model uses cumulative
    /// attention.
    pub fn new(model: &Model) -> Result<Self> {
        let tf = Stdct::standard();
        Ok(Self {
            net: model.init_state()?,
            pending: Vec::with_capacity(tf.frame_len),
            frames: 0,
            consumed: 0,
            ola: OverlapAdd::new(tf),
            closed: false,
            delay: None,
            max_lag: None,
        })
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn emitted(&self) -> usize {
        self.ola.emitted()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Largest number of input samples a sample needed before it could be
    /// emitted: `(frame that finalized it) · H + W − n`. Independent of
    /// chunking; `None` until something has been emitted before a flush.
    pub fn algorithmic_delay(&self) -> Option<usize> {
        self.delay
    }

    /// Largest `consumed − n` seen at emission time, which also includes
    /// the wait caused by the chunk size.
    pub fn max_emission_lag(&self) -> Option<usize> {
        self.max_lag
    }

    fn run_frames(&mut self, model: &Model) -> Result<()> {
        let tf = Stdct::standard();
        while self.pending.len() >= tf.frame_len {
            let (est, _) = model.step_frame(&mut self.net, &self.pending[..tf.frame_len])?;
            self.ola.add_frame(&tf.idct_rows(&est, 1));
            self.pending.drain(..tf.hop);
            self.frames += 1;
        }
        Ok(())
    }

    fn drain(&mut self, end: usize, track: bool) -> Vec<f32> {
        let start = self.ola.emitted();
        let out = self.ola.drain_until(end);
        if track && !out.is_empty() {
            let tf = Stdct::standard();
            // the first sample of each hop block waits longest
            let mut n = start;
            while n < end {
                let t = n / tf.hop;
                let d = t * tf.hop + tf.frame_len - n;
                self.delay = Some(self.delay.map_or(d, |v| v.max(d)));
                n = (t + 1) * tf.hop;
            }
            let lag = self.consumed - start;
            self.max_lag = Some(self.max_lag.map_or(lag, |v| v.max(lag)));
        }
        out
    }

    /// Consumes `chunk` and returns every newly final output sample.
    pub fn push(&mut self, model: &Model, chunk: &[f32]) -> Result<Vec<f32>> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        if chunk.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(v) = chunk.iter().find(|v| !v.is_finite()) {
            return Err(Error::Audio(format!("non-finite input sample {v}")));
        }
        self.pending.extend_from_slice(chunk);
        self.consumed += chunk.len();
        self.run_frames(model)?;
        let end = self.ola.finalized().min(self.consumed);
        let before = self.emitted();
        let out = self.drain(end, true);
        debug_assert!(self.emitted() >= before);
        Ok(out)
    }

    /// Zero-pads the last partial frame, runs it and drains the rest, so the
    /// total output length equals the total input length. A second call
    /// fails with [`Error::StreamClosed`].
    pub fn flush(&mut self, model: &Model) -> Result<Vec<f32>> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        self.closed = true;
        if self.consumed == 0 {
            return Ok(Vec::new());
        }
        let tf = Stdct::standard();
        let start = self.frames * tf.hop;
        self.pending.resize(padded_len(self.consumed, tf) - start, 0.0);
        self.run_frames(model)?;
        Ok(self.drain(self.consumed, false))
    }
}

pub fn stream_push(state: &mut StreamState, model: &Model, chunk: &[f32]) -> Result<Vec<f32>> {
    state.push(model, chunk)
}

pub fn stream_flush(state: &mut StreamState, model: &Model) -> Result<Vec<f32>> {
    state.flush(model)
}

/// Streams `x` in chunks of `chunk` samples (one push when `chunk == 0`).
pub fn enhance_streaming(model: &Model, x: &[f32], chunk: usize) -> Result<(Vec<f32>, StreamState)> {
    let mut st = StreamState::new(model)?;
    let mut out = Vec::with_capacity(x.len());
    if chunk == 0 {
        out.extend(st.push(model, x)?);
    } else {
        for c in x.chunks(chunk) {
            out.extend(st.push(model, c)?);
        }
    }
    out.extend(st.flush(model)?);
    Ok((out, st))
}

/// Outcome of one causality trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalityReport {
    pub seed: u64,
    pub split: usize,
    pub len: usize,
    pub mode: AttentionMode,
    /// samples `0 .. compared` must agree
    pub compared: usize,
    /// first index where the two outputs differ at all
    pub first_divergence: Option<usize>,
    /// measured algorithmic delay; `None` for the offline path
    pub latency: Option<usize>,
    pub passed: bool,
}

impl std::fmt::Display for CausalityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let div = self
            .first_divergence
            .map_or("none".to_string(), |d| d.to_string());
        let lat = self.latency.map_or("n/a".to_string(), |d| d.to_string());
        write!(
            f,
            "{} seed={} split={} len={} compared=[0,{}) first_divergence={} latency={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.seed,
            self.split,
            self.len,
            self.compared,
            div,
            lat
        )
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

/// Two seeded inputs of length `len` that agree on samples `0..split` and
/// differ from `split` on.
pub fn causality_pair(seed: u64, split: usize, len: usize) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = noise(&mut rng, len);
    let mut b = a.clone();
    let tail = noise(&mut rng, len.saturating_sub(split));
    for (dst, src) in b[split.min(len)..].iter_mut().zip(tail) {
        *dst = if src == *dst { -src - 0.25 } else { src };
    }
    (a, b)
}

/// Runs two inputs that share their first `split` samples and checks the
/// outputs agree bit-for-bit on samples `0 .. split − W`.
///
/// Cumulative models are run through [`StreamState`] one sample at a time;
/// offline models cannot stream and are run through [`Model::forward`].
pub fn verify_causality(model: &Model, seed: u64, split: usize, len: usize) -> Result<CausalityReport> {
    let (a, b) = causality_pair(seed, split, len);
    let (ya, yb, latency) = match model.mode() {
        AttentionMode::Cumulative => {
            let (ya, sa) = enhance_streaming(model, &a, 1)?;
            let (yb, _) = enhance_streaming(model, &b, 1)?;
            (ya, yb, sa.algorithmic_delay())
        }
        AttentionMode::Offline => {
            let ya = model.forward(&Waveform::new(a)?)?.0.into_samples();
            let yb = model.forward(&Waveform::new(b)?)?.0.into_samples();
            (ya, yb, None)
        }
    };
    let compared = split.saturating_sub(ALGORITHMIC_DELAY).min(len);
    let first_divergence = ya
        .iter()
        .zip(&yb)
        .position(|(x, y)| x.to_bits() != y.to_bits());
    let prefix_ok = first_divergence.is_none_or(|d| d >= compared);
    let latency_ok = latency.is_none_or(|l| l == ALGORITHMIC_DELAY);
    Ok(CausalityReport {
        seed,
        split,
        len,
        mode: model.mode(),
        compared,
        first_divergence,
        latency,
        passed: prefix_ok && latency_ok,
    })
}
