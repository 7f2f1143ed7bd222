//! Pooling operators for the attention branches.
//!
//! Causal pooling zero-pads `K_T - 1` frames before the start, so early
//! frames average against zeros and their max includes 0.

use std::collections::VecDeque;

use super::{FeatureMap, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Which axis survives per-frame reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum KeepAxis {
    /// reduce over channels, keep frequency bins
    Freq,
    /// reduce over frequency bins, keep channels
    Channel,
}

/// Per-frame sum and max along the reduced axis, accumulated in index order.
pub(crate) fn frame_stats(frame: &[f32], channels: usize, freqs: usize, keep: KeepAxis) -> (Vec<f64>, Vec<f64>) {
    match keep {
        KeepAxis::Freq => {
            let mut sum = vec![0.0f64; freqs];
            let mut max = vec![f64::NEG_INFINITY; freqs];
            for chan in frame.chunks_exact(freqs).take(channels) {
                for ((s, m), &v) in sum.iter_mut().zip(max.iter_mut()).zip(chan) {
                    *s += v as f64;
                    *m = m.max(v as f64);
                }
            }
            (sum, max)
        }
        KeepAxis::Channel => {
            let mut sum = vec![0.0f64; channels];
            let mut max = vec![f64::NEG_INFINITY; channels];
            for (c, chan) in frame.chunks_exact(freqs).take(channels).enumerate() {
                for &v in chan {
                    sum[c] += v as f64;
                    max[c] = max[c].max(v as f64);
                }
            }
            (sum, max)
        }
    }
}

/// Sliding causal window of `K_T` frames over per-frame statistics.
#[derive(Clone, Debug)]
pub struct PoolWindow {
    k_t: usize,
    /// elements reduced per frame (the averaging denominator is `k_t * reduced`)
    reduced: usize,
    hist: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl PoolWindow {
    pub fn new(k_t: usize, reduced: usize) -> Self {
        assert!(k_t >= 1);
        Self {
            k_t,
            reduced,
            hist: VecDeque::with_capacity(k_t),
        }
    }

    /// Adds the newest frame's `(sum, max)` and returns the window's `(avg, max)`.
    pub fn push(&mut self, sum: Vec<f64>, max: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        if self.hist.len() == self.k_t {
            self.hist.pop_front();
        }
        self.hist.push_back((sum, max));
        let n = self.hist[0].0.len();
        let padded = self.hist.len() < self.k_t;
        let mut wsum = vec![0.0f64; n];
        let mut wmax = vec![if padded { 0.0 } else { f64::NEG_INFINITY }; n];
        for (s, m) in &self.hist {
            for i in 0..n {
                wsum[i] += s[i];
                wmax[i] = wmax[i].max(m[i]);
            }
        }
        let denom = (self.k_t * self.reduced) as f64;
        (wsum.into_iter().map(|v| v / denom).collect(), wmax)
    }
}

fn pool_map(input: &FeatureMap, k_t: usize, mode: PoolMode, keep: KeepAxis) -> Matrix {
    let (c, f, t) = input.dims();
    let (rows, reduced) = match keep {
        KeepAxis::Freq => (f, c),
        KeepAxis::Channel => (c, f),
    };
    let mut win = PoolWindow::new(k_t, reduced);
    let mut out = Matrix::zeros(rows, t);
    for (ti, frame) in input.iter_frames().enumerate() {
        let (s, m) = frame_stats(frame, c, f, keep);
        let (avg, max) = win.push(s, m);
        let col = if mode == PoolMode::Avg { avg } else { max };
        for (r, v) in col.into_iter().enumerate() {
            out.set(r, ti, v);
        }
    }
    out
}

/// Pools `input[:, f, t-K_T+1 ..= t]` over channels and the window → `F × T`.
pub fn causal_pool_time(input: &FeatureMap, k_t: usize, mode: PoolMode) -> Matrix {
    pool_map(input, k_t, mode, KeepAxis::Freq)
}

/// Pools `input[c, :, t-K_T+1 ..= t]` over frequency and the window → `C × T`.
pub fn causal_pool_channels(input: &FeatureMap, k_t: usize, mode: PoolMode) -> Matrix {
    pool_map(input, k_t, mode, KeepAxis::Channel)
}

/// Per-frame pooling over every (channel, bin) pair → length `T`.
pub fn global_pool_cf(input: &FeatureMap, mode: PoolMode) -> Vec<f64> {
    input
        .iter_frames()
        .map(|fr| global_frame_stats(fr, mode))
        .collect()
}

pub(crate) fn global_frame_stats(frame: &[f32], mode: PoolMode) -> f64 {
    match mode {
        PoolMode::Avg => frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len() as f64,
        PoolMode::Max => frame.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_map(seed: u64, c: usize, f: usize, t: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, f, t, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn window_one_single_channel_is_identity() {
        let x = rand_map(1, 1, 6, 4);
        let p = causal_pool_time(&x, 1, PoolMode::Avg);
        for f in 0..6 {
            for t in 0..4 {
                assert_eq!(p.get(f, t) as f32, x.get(0, f, t));
            }
        }
    }

    #[test]
    fn constant_input_dilutes_only_at_start() {
        let v = 0.8f32;
        let x = FeatureMap::from_fn(3, 2, 20, |_, _, _| v);
        let p = causal_pool_time(&x, 15, PoolMode::Avg);
        assert!((p.get(0, 0) - v as f64 / 15.0).abs() < 1e-12);
        for t in 14..20 {
            assert!((p.get(1, t) - v as f64).abs() < 1e-12);
        }
        let neg = FeatureMap::from_fn(3, 2, 20, |_, _, _| -v);
        let m = causal_pool_time(&neg, 15, PoolMode::Max);
        assert_eq!(m.get(0, 0), 0.0, "zero padding takes part in max");
        assert_eq!(m.get(0, 14) as f32, -v);
    }

    #[test]
    fn matches_window_oracle() {
        let x = rand_map(2, 3, 4, 9);
        let k = 4;
        let p = causal_pool_time(&x, k, PoolMode::Avg);
        let q = causal_pool_channels(&x, k, PoolMode::Max);
        for t in 0..9usize {
            for f in 0..4 {
                let mut s = 0.0;
                for tt in t.saturating_sub(k - 1)..=t {
                    for c in 0..3 {
                        s += x.get(c, f, tt) as f64;
                    }
                }
                assert!((p.get(f, t) - s / (3 * k) as f64).abs() < 1e-12);
            }
            for c in 0..3 {
                let mut m = if t + 1 < k { 0.0f64 } else { f64::NEG_INFINITY };
                for tt in t.saturating_sub(k - 1)..=t {
                    for f in 0..4 {
                        m = m.max(x.get(c, f, tt) as f64);
                    }
                }
                assert_eq!(q.get(c, t), m);
            }
        }
    }

    #[test]
    fn causal_prefix_stable() {
        let x = rand_map(3, 2, 5, 10);
        let mut x2 = x.clone();
        x2.frame_mut(6).iter_mut().for_each(|v| *v += 3.0);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let (a, b) = (causal_pool_time(&x, 3, mode), causal_pool_time(&x2, 3, mode));
            for f in 0..5 {
                for t in 0..6 {
                    assert_eq!(a.get(f, t), b.get(f, t));
                }
            }
        }
    }

    #[test]
    fn global_pool_cases() {
        let x = rand_map(4, 1, 1, 5);
        let avg = global_pool_cf(&x, PoolMode::Avg);
        for t in 0..5 {
            assert_eq!(avg[t] as f32, x.get(0, 0, t));
        }
        let c = FeatureMap::from_fn(2, 3, 2, |_, _, _| 0.25);
        assert_eq!(global_pool_cf(&c, PoolMode::Avg), vec![0.25, 0.25]);
        assert_eq!(global_pool_cf(&c, PoolMode::Max), vec![0.25, 0.25]);
        let r = rand_map(5, 3, 4, 3);
        let g = global_pool_cf(&r, PoolMode::Avg);
        for t in 0..3 {
            let mut s = 0.0;
            for c in 0..3 {
                for f in 0..4 {
                    s += r.get(c, f, t) as f64;
                }
            }
            assert!((g[t] - s / 12.0).abs() < 1e-6);
        }
    }
}
