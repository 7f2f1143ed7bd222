//! Time-frequency-channel attention.
//!
//! Three parallel single-head attention branches over a `(C, F, T)` map:
//!
//! * time: queries/keys are 2→1 pointwise projections of the global
//!   (avg, max) pool over channels and bins; the `T × T` scores are causally
//!   masked (no scaling);
//! * frequency / channel: queries/keys come from a causal `K_T`-frame
//!   (avg, max) pool; scores `Q·Kᵀ` sum over time and are scaled by `1/√T`.
//!
//! Each branch re-weights its own 1×1-convolved value map, and a 1×1
//! convolution fuses the three results back to `C` channels.
//!
//! The frequency/channel scores sum over *all* frames in
//! [`AttentionMode::Offline`], which lets frame `t` see the future. In
//! [`AttentionMode::Cumulative`] frame `t` uses the running sum over frames
//! `0..=t` scaled by `1/√(t+1)`; at the last frame it equals the offline
//! matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::pool::{frame_stats, global_frame_stats, KeepAxis};
use crate::tensor::{
    causal_mask, masked_softmax, matmul_into, softmax_in_place, FeatureMap, Matrix, PoolMode,
    PoolWindow, Pointwise, WeightSource, WeightTensor,
};

/// Pooling window of the frequency and channel branches.
pub const DEFAULT_K_T: usize = 15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// scores over the whole utterance, exactly as printed; not causal
    Offline,
    /// running scores over frames `0..=t`; causal and streamable
    #[default]
    Cumulative,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Self::Offline),
            "cumulative" => Ok(Self::Cumulative),
            _ => Err(Error::InvalidConfig(format!(
                "attention mode must be offline|cumulative, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Frequency,
    Channel,
}

impl Axis {
    fn keep(self) -> KeepAxis {
        match self {
            Axis::Frequency => KeepAxis::Freq,
            Axis::Channel => KeepAxis::Channel,
        }
    }
}

/// 2→1 pointwise projection of an (avg, max) pooled pair.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PoolProj {
    w_avg: f64,
    w_max: f64,
    b: f64,
}

impl PoolProj {
    fn from_tensors(w: &WeightTensor, b: &WeightTensor) -> Result<Self> {
        if w.dims != [1, 2] || b.dims != [1] {
            return Err(Error::InvalidConfig(format!(
                "`{}`/`{}` must be [1, 2]/[1], got {:?}/{:?}",
                w.name, b.name, w.dims, b.dims
            )));
        }
        Ok(Self {
            w_avg: w.data[0] as f64,
            w_max: w.data[1] as f64,
            b: b.data[0] as f64,
        })
    }

    #[inline]
    fn apply(&self, avg: f64, max: f64) -> f64 {
        self.w_avg * avg + self.w_max * max + self.b
    }

    fn apply_all(&self, avg: &[f64], max: &[f64]) -> Vec<f64> {
        avg.iter().zip(max).map(|(&a, &m)| self.apply(a, m)).collect()
    }
}

/// Running `Σ_t q_t k_tᵀ` for one of the frequency/channel branches.
#[derive(Clone, Debug)]
pub struct ScoreAccumulator {
    n: usize,
    sum: Vec<f64>,
    frames: usize,
}

impl ScoreAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            sum: vec![0.0; n * n],
            frames: 0,
        }
    }

    pub fn push(&mut self, q: &[f64], k: &[f64]) {
        debug_assert!(q.len() == self.n && k.len() == self.n);
        for (row, &qi) in self.sum.chunks_exact_mut(self.n).zip(q) {
            for (s, &kj) in row.iter_mut().zip(k) {
                *s += qi * kj;
            }
        }
        self.frames += 1;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `softmax(S / √frames)` row by row.
    pub fn attention(&self) -> Matrix {
        let scale = (self.frames.max(1) as f64).sqrt();
        let mut data: Vec<f64> = self.sum.iter().map(|&v| v / scale).collect();
        for row in data.chunks_exact_mut(self.n) {
            softmax_in_place(row);
        }
        Matrix {
            rows: self.n,
            cols: self.n,
            data,
        }
    }
}

/// Carried state of one block in cumulative mode.
#[derive(Clone, Debug)]
pub struct TfcaState {
    keys: Vec<f64>,
    values: Vec<Vec<f32>>,
    f_win: PoolWindow,
    c_win: PoolWindow,
    f_acc: Option<ScoreAccumulator>,
    c_acc: ScoreAccumulator,
}

impl TfcaState {
    pub fn frames_seen(&self) -> usize {
        self.keys.len()
    }
}

/// One TFCA block. Every projection is pointwise, so the parameters depend
/// on the channel count only.
#[derive(Clone, Debug)]
pub struct Tfca {
    pub channels: usize,
    pub k_t: usize,
    pub mode: AttentionMode,
    t_q: PoolProj,
    t_k: PoolProj,
    f_q: PoolProj,
    f_k: PoolProj,
    c_q: PoolProj,
    c_k: PoolProj,
    v_t: Pointwise,
    v_f: Pointwise,
    v_c: Pointwise,
    fuse: Pointwise,
}

impl Tfca {
    /// Tensor names and shapes under `prefix`, in canonical order.
    pub fn tensor_specs(prefix: &str, channels: usize) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for br in ["t", "f", "c"] {
            for qk in ["q", "k"] {
                v.push((format!("{prefix}.{br}.{qk}.w"), vec![1, 2]));
                v.push((format!("{prefix}.{br}.{qk}.b"), vec![1]));
            }
        }
        for vn in ["v_t", "v_f", "v_c"] {
            v.push((format!("{prefix}.{vn}.w"), vec![channels, channels]));
            v.push((format!("{prefix}.{vn}.b"), vec![channels]));
        }
        v.push((format!("{prefix}.fuse.w"), vec![channels, 3 * channels]));
        v.push((format!("{prefix}.fuse.b"), vec![channels]));
        v
    }

    pub fn from_weights(
        src: &impl WeightSource,
        prefix: &str,
        channels: usize,
        k_t: usize,
        mode: AttentionMode,
    ) -> Result<Self> {
        if k_t == 0 {
            return Err(Error::InvalidConfig("K_T must be >= 1".into()));
        }
        let pp = |name: &str| -> Result<PoolProj> {
            PoolProj::from_tensors(
                src.tensor(&format!("{prefix}.{name}.w"))?,
                src.tensor(&format!("{prefix}.{name}.b"))?,
            )
        };
        let pw = |name: &str, cin: usize| -> Result<Pointwise> {
            let p = Pointwise::from_tensors(
                src.tensor(&format!("{prefix}.{name}.w"))?,
                src.tensor(&format!("{prefix}.{name}.b"))?,
            )?;
            if p.cin != cin || p.cout != channels {
                return Err(Error::InvalidConfig(format!(
                    "`{prefix}.{name}` maps {}→{}, expected {cin}→{channels}",
                    p.cin, p.cout
                )));
            }
            Ok(p)
        };
        Ok(Self {
            channels,
            k_t,
            mode,
            t_q: pp("t.q")?,
            t_k: pp("t.k")?,
            f_q: pp("f.q")?,
            f_k: pp("f.k")?,
            c_q: pp("c.q")?,
            c_k: pp("c.k")?,
            v_t: pw("v_t", channels)?,
            v_f: pw("v_f", channels)?,
            v_c: pw("v_c", channels)?,
            fuse: pw("fuse", 3 * channels)?,
        })
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn init_state(&self, freqs: usize) -> TfcaState {
        TfcaState {
            keys: Vec::new(),
            values: Vec::new(),
            f_win: PoolWindow::new(self.k_t, self.channels),
            c_win: PoolWindow::new(self.k_t, freqs),
            f_acc: None,
            c_acc: ScoreAccumulator::new(self.channels),
        }
    }

    fn check(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "TFCA block has {} channels, input has {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    fn time_qk(&self, frame: &[f32]) -> (f64, f64) {
        let avg = global_frame_stats(frame, PoolMode::Avg);
        let max = global_frame_stats(frame, PoolMode::Max);
        (self.t_q.apply(avg, max), self.t_k.apply(avg, max))
    }

    fn pooled_qk(
        &self,
        win: &mut PoolWindow,
        frame: &[f32],
        freqs: usize,
        axis: Axis,
    ) -> (Vec<f64>, Vec<f64>) {
        let (s, m) = frame_stats(frame, self.channels, freqs, axis.keep());
        let (avg, max) = win.push(s, m);
        let (qp, kp) = match axis {
            Axis::Frequency => (self.f_q, self.f_k),
            Axis::Channel => (self.c_q, self.c_k),
        };
        (qp.apply_all(&avg, &max), kp.apply_all(&avg, &max))
    }

    /// Time branch for the newest frame given all keys/values so far.
    fn attend_time(q: f64, keys: &[f64], values: &[Vec<f32>]) -> Vec<f32> {
        let mut w: Vec<f64> = keys.iter().map(|&k| q * k).collect();
        softmax_in_place(&mut w);
        weighted_frames(&w, values)
    }

    fn fuse_frame(&self, ft: &[f32], ff: &[f32], fc: &[f32], freqs: usize) -> Vec<f32> {
        let mut cat = Vec::with_capacity(3 * ft.len());
        cat.extend_from_slice(ft);
        cat.extend_from_slice(ff);
        cat.extend_from_slice(fc);
        self.fuse.apply(&cat, freqs)
    }

    /// Cumulative-mode step for one `[c][f]` frame.
    pub fn step(&self, st: &mut TfcaState, x: &[f32], freqs: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.channels * freqs);
        let (q, k) = self.time_qk(x);
        st.keys.push(k);
        st.values.push(self.v_t.apply(x, freqs));
        let out_t = Self::attend_time(q, &st.keys, &st.values);

        let (qf, kf) = self.pooled_qk(&mut st.f_win, x, freqs, Axis::Frequency);
        let f_acc = st.f_acc.get_or_insert_with(|| ScoreAccumulator::new(freqs));
        f_acc.push(&qf, &kf);
        let out_f = apply_freq_attention(&f_acc.attention(), &self.v_f.apply(x, freqs), self.channels, freqs);

        let (qc, kc) = self.pooled_qk(&mut st.c_win, x, freqs, Axis::Channel);
        st.c_acc.push(&qc, &kc);
        let out_c = apply_channel_attention(&st.c_acc.attention(), &self.v_c.apply(x, freqs), self.channels, freqs);

        self.fuse_frame(&out_t, &out_f, &out_c, freqs)
    }

    /// Whole-map forward in the block's [`AttentionMode`].
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check(x)?;
        let freqs = x.freqs();
        match self.mode {
            AttentionMode::Cumulative => {
                let mut st = self.init_state(freqs);
                x.map_frames(self.channels, freqs, |_, fr| self.step(&mut st, fr, freqs))
            }
            AttentionMode::Offline => {
                let af = self.fc_attention_offline(x, Axis::Frequency)?;
                let ac = self.fc_attention_offline(x, Axis::Channel)?;
                let mut keys = Vec::with_capacity(x.frames());
                let mut values = Vec::with_capacity(x.frames());
                x.map_frames(self.channels, freqs, |_, fr| {
                    let (q, k) = self.time_qk(fr);
                    keys.push(k);
                    values.push(self.v_t.apply(fr, freqs));
                    let out_t = Self::attend_time(q, &keys, &values);
                    let out_f = apply_freq_attention(&af, &self.v_f.apply(fr, freqs), self.channels, freqs);
                    let out_c = apply_channel_attention(&ac, &self.v_c.apply(fr, freqs), self.channels, freqs);
                    self.fuse_frame(&out_t, &out_f, &out_c, freqs)
                })
            }
        }
    }

    /// `Atten_t` (`T × T`) built as a full score matrix and masked.
    pub fn time_attention(&self, x: &FeatureMap) -> Result<Matrix> {
        self.check(x)?;
        let qk: Vec<(f64, f64)> = x.iter_frames().map(|fr| self.time_qk(fr)).collect();
        let t = qk.len();
        let scores = Matrix::from_fn(t, t, |i, j| qk[i].0 * qk[j].1);
        Ok(masked_softmax(&scores, &causal_mask(t)))
    }

    /// Time branch output `Atten_t · V_t`.
    pub fn t_branch(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let a = self.time_attention(x)?;
        let freqs = x.freqs();
        let values: Vec<Vec<f32>> = x.iter_frames().map(|fr| self.v_t.apply(fr, freqs)).collect();
        let frames: Vec<Vec<f32>> = (0..x.frames())
            .map(|t| weighted_frames(&a.row(t)[..=t], &values[..=t]))
            .collect();
        FeatureMap::from_frames(self.channels, freqs, &frames)
    }

    /// Per-frame queries and keys of a frequency/channel branch, each `n × T`
    /// stored frame-major (`[t][i]`).
    pub fn fc_queries_keys(&self, x: &FeatureMap, axis: Axis) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check(x)?;
        let reduced = match axis {
            Axis::Frequency => self.channels,
            Axis::Channel => x.freqs(),
        };
        let mut win = PoolWindow::new(self.k_t, reduced);
        Ok(x.iter_frames()
            .map(|fr| self.pooled_qk(&mut win, fr, x.freqs(), axis))
            .unzip())
    }

    /// `softmax(Q·Kᵀ/√T)` over the whole map.
    pub fn fc_attention_offline(&self, x: &FeatureMap, axis: Axis) -> Result<Matrix> {
        let (q, k) = self.fc_queries_keys(x, axis)?;
        let mut acc = ScoreAccumulator::new(q[0].len());
        for (qt, kt) in q.iter().zip(&k) {
            acc.push(qt, kt);
        }
        Ok(acc.attention())
    }

    /// Cumulative attention matrix in force at frame `t`.
    pub fn fc_attention_cumulative(&self, x: &FeatureMap, axis: Axis, t: usize) -> Result<Matrix> {
        if t >= x.frames() {
            return Err(Error::Shape(format!("frame {t} out of {}", x.frames())));
        }
        let (q, k) = self.fc_queries_keys(x, axis)?;
        let mut acc = ScoreAccumulator::new(q[0].len());
        for (qt, kt) in q.iter().zip(&k).take(t + 1) {
            acc.push(qt, kt);
        }
        Ok(acc.attention())
    }

    /// Frequency- or channel-branch output in the given mode.
    pub fn fc_branch(&self, x: &FeatureMap, axis: Axis, mode: AttentionMode) -> Result<FeatureMap> {
        let (q, k) = self.fc_queries_keys(x, axis)?;
        let freqs = x.freqs();
        let n = q[0].len();
        let (vp, apply): (&Pointwise, fn(&Matrix, &[f32], usize, usize) -> Vec<f32>) = match axis {
            Axis::Frequency => (&self.v_f, apply_freq_attention),
            Axis::Channel => (&self.v_c, apply_channel_attention),
        };
        let mut acc = ScoreAccumulator::new(n);
        let offline = if mode == AttentionMode::Offline {
            for (qt, kt) in q.iter().zip(&k) {
                acc.push(qt, kt);
            }
            Some(acc.attention())
        } else {
            None
        };
        x.map_frames(self.channels, freqs, |t, fr| {
            let a = match &offline {
                Some(a) => a.clone(),
                None => {
                    acc.push(&q[t], &k[t]);
                    acc.attention()
                }
            };
            apply(&a, &vp.apply(fr, freqs), self.channels, freqs)
        })
    }
}

/// `Σ_j w_j · frames[j]`, accumulated in `j` order.
fn weighted_frames(w: &[f64], frames: &[Vec<f32>]) -> Vec<f32> {
    let n = frames[0].len();
    let mut acc = vec![0.0f64; n];
    for (&wj, fr) in w.iter().zip(frames) {
        for (a, &v) in acc.iter_mut().zip(fr) {
            *a += wj * v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// `out[c][f] = Σ_f' A[f][f'] · v[c][f']`.
fn apply_freq_attention(a: &Matrix, v: &[f32], channels: usize, freqs: usize) -> Vec<f32> {
    let at = a.transpose();
    let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let mut out = vec![0.0; channels * freqs];
    matmul_into(&mut out, &vf, &at.data, channels, freqs, freqs);
    out.into_iter().map(|x| x as f32).collect()
}

/// `out[c][f] = Σ_c' A[c][c'] · v[c'][f]`.
fn apply_channel_attention(a: &Matrix, v: &[f32], channels: usize, freqs: usize) -> Vec<f32> {
    let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let mut out = vec![0.0; channels * freqs];
    matmul_into(&mut out, &a.data, &vf, channels, channels, freqs);
    out.into_iter().map(|x| x as f32).collect()
}
