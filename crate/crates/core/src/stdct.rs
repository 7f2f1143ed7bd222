//! Short-time DCT analysis and weighted overlap-add synthesis.
//!
//! Analysis: frame `t` is `hamming ⊙ x[t·H .. t·H + W]`, transformed by an
//! orthonormal DCT-II. No padding is added in front of the signal, so column
//! `t` depends only on samples `< t·H + W`.
//!
//! Synthesis: inverse DCT (DCT-III), multiply by the same Hamming window,
//! overlap-add at the hop, then divide every sample by the summed squared
//! window covering it. A sample in block `⌊n/H⌋` is final once that frame has
//! been added, which is `W` samples after the block started arriving.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Frame length in samples (32 ms).
pub const WINDOW: usize = 512;
/// Hop in samples (8 ms).
pub const HOP: usize = 128;
/// DCT size; one coefficient per bin.
pub const DCT_POINTS: usize = WINDOW;
/// Delay inherent to overlap-add synthesis: one window.
pub const ALGORITHMIC_DELAY: usize = WINDOW;

/// Denominators below this are clamped during overlap-add normalization.
pub const OLA_FLOOR: f64 = 1e-8;

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Undefined(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

/// Symmetric Hamming window: `0.54 − 0.46·cos(2πn/(W−1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Precomputed window and orthonormal DCT basis for one frame size.
#[derive(Debug)]
pub struct Stdct {
    pub frame_len: usize,
    pub hop: usize,
    window: Vec<f64>,
    /// `basis[k][n]`: row `k` is the k-th DCT-II basis vector.
    basis: Vec<f64>,
    /// transpose of `basis`, `[n][k]`
    basis_t: Vec<f64>,
}

impl Stdct {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len == 0 || hop == 0 || hop > frame_len {
            return Err(Error::InvalidConfig(format!(
                "frame length {frame_len} / hop {hop} invalid"
            )));
        }
        let n = frame_len;
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                // reduce (2i+1)k mod 4N before scaling to keep the argument small
                let m = ((2 * i + 1) * k) % (4 * n);
                basis[k * n + i] =
                    alpha * (std::f64::consts::PI * m as f64 / (2 * n) as f64).cos();
            }
        }
        let mut basis_t = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                basis_t[i * n + k] = basis[k * n + i];
            }
        }
        Ok(Self {
            frame_len,
            hop,
            window: hamming(frame_len),
            basis,
            basis_t,
        })
    }

    /// The 512/128 transform used by the model, built once per process.
    pub fn standard() -> &'static Stdct {
        static STD: OnceLock<Stdct> = OnceLock::new();
        STD.get_or_init(|| Stdct::new(WINDOW, HOP).expect("standard STDCT"))
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// `basis[k][n]` (row-major `N × N`).
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// Applies the analysis window to a raw frame.
    pub fn window_frame(&self, raw: &[f32]) -> Vec<f32> {
        raw.iter()
            .zip(&self.window)
            .map(|(&x, &w)| (x as f64 * w) as f32)
            .collect()
    }

    /// Orthonormal DCT-II of `rows` frames laid end to end.
    pub fn dct_rows(&self, frames: &[f32], rows: usize) -> Vec<f32> {
        self.transform(frames, rows, &self.basis_t)
    }

    /// DCT-III (inverse of [`Stdct::dct_rows`]).
    pub fn idct_rows(&self, coeffs: &[f32], rows: usize) -> Vec<f32> {
        self.transform(coeffs, rows, &self.basis)
    }

    fn transform(&self, x: &[f32], rows: usize, m: &[f64]) -> Vec<f32> {
        let n = self.frame_len;
        assert_eq!(x.len(), rows * n);
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut out = vec![0.0; rows * n];
        crate::tensor::matmul_into(&mut out, &xf, m, rows, n, n);
        out.into_iter().map(|v| v as f32).collect()
    }

    pub fn frame_count(&self, len: usize) -> Option<usize> {
        len.checked_sub(self.frame_len).map(|r| r / self.hop + 1)
    }
}

/// Windowed frames, `T × W`, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub frame_len: usize,
    pub hop: usize,
    frames: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(frame_len: usize, hop: usize, frames: Vec<f32>) -> Result<Self> {
        if frame_len != 4 * hop {
            return Err(Error::InvalidConfig(format!(
                "frame length {frame_len} must be 4 × hop {hop}"
            )));
        }
        if frames.len() % frame_len != 0 {
            return Err(Error::Shape(format!(
                "{} samples is not a whole number of {frame_len}-sample frames",
                frames.len()
            )));
        }
        Ok(Self {
            frame_len,
            hop,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.frame_len
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.frame_len..(t + 1) * self.frame_len]
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }
}

/// Real STDCT coefficients, `bins × frames`, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    data: Vec<f32>,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::Shape(format!(
                "{} coefficients for {bins} bins × {frames} frames",
                data.len()
            )));
        }
        Ok(Self { bins, frames, data })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn get(&self, k: usize, t: usize) -> f32 {
        self.data[t * self.bins + k]
    }

    pub fn column(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Splits `wave` into windowed frames without any padding.
pub fn frame_signal(wave: &Waveform) -> Result<FrameMatrix> {
    frame_with(Stdct::standard(), wave.samples())
}

pub(crate) fn frame_with(tf: &Stdct, x: &[f32]) -> Result<FrameMatrix> {
    let t = tf.frame_count(x.len()).ok_or(Error::TooShort {
        len: x.len(),
        min: tf.frame_len,
    })?;
    let mut frames = Vec::with_capacity(t * tf.frame_len);
    for i in 0..t {
        frames.extend(tf.window_frame(&x[i * tf.hop..i * tf.hop + tf.frame_len]));
    }
    FrameMatrix::new(tf.frame_len, tf.hop, frames)
}

pub fn dct_frames(frames: &FrameMatrix) -> Result<Spectrogram> {
    let tf = Stdct::standard();
    if frames.frame_len != tf.frame_len {
        return Err(Error::Shape(format!(
            "frame length {} != DCT size {}",
            frames.frame_len, tf.frame_len
        )));
    }
    let t = frames.num_frames();
    Spectrogram::new(tf.frame_len, t, tf.dct_rows(frames.data(), t))
}

pub fn idct_frames(spec: &Spectrogram) -> Result<FrameMatrix> {
    let tf = Stdct::standard();
    if spec.bins() != tf.frame_len {
        return Err(Error::Shape(format!(
            "{} bins != DCT size {}",
            spec.bins(),
            tf.frame_len
        )));
    }
    FrameMatrix::new(tf.frame_len, tf.hop, tf.idct_rows(spec.data(), spec.frames()))
}

/// Plain STDCT of a waveform: `(512, T)` with `T = 1 + ⌊(len − 512)/128⌋`.
pub fn stdct(wave: &Waveform) -> Result<Spectrogram> {
    dct_frames(&frame_signal(wave)?)
}

/// Incremental weighted overlap-add.
///
/// Frames are added in order; samples before `(frames added) · hop` are
/// final and may be drained with [`OverlapAdd::drain_until`].
#[derive(Clone, Debug)]
pub struct OverlapAdd {
    hop: usize,
    window: Vec<f64>,
    /// absolute index of `num[0]`
    base: usize,
    num: Vec<f64>,
    den: Vec<f64>,
    frames_added: usize,
    clamped: usize,
}

impl OverlapAdd {
    pub fn new(tf: &Stdct) -> Self {
        Self {
            hop: tf.hop,
            window: tf.window.clone(),
            base: 0,
            num: Vec::new(),
            den: Vec::new(),
            frames_added: 0,
            clamped: 0,
        }
    }

    /// Adds the next time-domain frame (already inverse-transformed).
    pub fn add_frame(&mut self, frame: &[f32]) {
        let start = self.frames_added * self.hop;
        let end = start + self.window.len();
        if end > self.base + self.num.len() {
            self.num.resize(end - self.base, 0.0);
            self.den.resize(end - self.base, 0.0);
        }
        let off = start - self.base;
        for (i, (&y, &w)) in frame.iter().zip(&self.window).enumerate() {
            self.num[off + i] += w * y as f64;
            self.den[off + i] += w * w;
        }
        self.frames_added += 1;
    }

    /// Samples `< finalized()` receive no further contributions.
    pub fn finalized(&self) -> usize {
        self.frames_added * self.hop
    }

    pub fn emitted(&self) -> usize {
        self.base
    }

    /// Count of samples whose normalizer was clamped at [`OLA_FLOOR`].
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Normalizes and removes samples `emitted() .. end`.
    ///
    /// Samples never covered by a frame come out as 0 (and are counted as
    /// clamped).
    pub fn drain_until(&mut self, end: usize) -> Vec<f32> {
        if end <= self.base {
            return Vec::new();
        }
        let n = end - self.base;
        if self.num.len() < n {
            self.num.resize(n, 0.0);
            self.den.resize(n, 0.0);
        }
        let mut out = Vec::with_capacity(n);
        for (&num, &den) in self.num[..n].iter().zip(&self.den[..n]) {
            let den = if den < OLA_FLOOR {
                self.clamped += 1;
                OLA_FLOOR
            } else {
                den
            };
            out.push((num / den) as f32);
        }
        self.num.drain(..n);
        self.den.drain(..n);
        self.base = end;
        out
    }
}

/// Inverse STDCT by weighted overlap-add, truncated to `out_len` samples.
pub fn istdct_ola(spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
    istdct_ola_with_diagnostics(spec, out_len).map(|(w, _)| w)
}

/// Like [`istdct_ola`], also returning how many samples had a clamped normalizer.
pub fn istdct_ola_with_diagnostics(spec: &Spectrogram, out_len: usize) -> Result<(Waveform, usize)> {
    let tf = Stdct::standard();
    let cover = (spec.frames() > 0).then(|| (spec.frames() - 1) * tf.hop + tf.frame_len);
    if cover.is_none_or(|c| out_len > c) {
        return Err(Error::Shape(format!(
            "{out_len} output samples but {} frames cover only {}",
            spec.frames(),
            cover.unwrap_or(0)
        )));
    }
    let frames = idct_frames(spec)?;
    let mut ola = OverlapAdd::new(tf);
    for t in 0..frames.num_frames() {
        ola.add_frame(frames.frame(t));
    }
    let out = ola.drain_until(out_len);
    Ok((Waveform::new(out)?, ola.clamped()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
        let den: f64 = b.iter().map(|&y| (y as f64).powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_signal(&noise(0, 512)).unwrap().num_frames(), 1);
        assert_eq!(frame_signal(&noise(0, 640)).unwrap().num_frames(), 2);
        assert_eq!(frame_signal(&noise(0, 16000)).unwrap().num_frames(), 122);
        assert!(matches!(
            frame_signal(&noise(0, 511)),
            Err(Error::TooShort { len: 511, min: 512 })
        ));
    }

    #[test]
    fn consecutive_frames_share_overlap() {
        let w = noise(1, 640);
        let tf = Stdct::standard();
        let f = frame_signal(&w).unwrap();
        for n in 128..512 {
            let a = f.frame(0)[n] as f64 / tf.window()[n];
            let b = f.frame(1)[n - 128] as f64 / tf.window()[n - 128];
            assert!((a - w.samples()[n] as f64).abs() < 1e-6);
            assert!((b - w.samples()[n] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn hamming_endpoints_and_range() {
        let w = hamming(512);
        assert!((w[0] - 0.08).abs() < 1e-12 && (w[511] - 0.08).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn dc_frame_concentrates_in_bin_zero() {
        let tf = Stdct::standard();
        let c = 0.3f32;
        let x = tf.dct_rows(&[c; 512], 1);
        assert!((x[0] as f64 - c as f64 * 512f64.sqrt()).abs() < 1e-5);
        assert!(x[1..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn impulse_gives_first_basis_column() {
        let tf = Stdct::standard();
        let mut imp = vec![0.0f32; 512];
        imp[0] = 1.0;
        let x = tf.dct_rows(&imp, 1);
        for k in 0..512 {
            assert_eq!(x[k], tf.basis()[k * 512] as f32);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let tf = Stdct::standard();
        let b = tf.basis();
        let mut worst = 0.0f64;
        for i in 0..512 {
            for j in i..512 {
                let d: f64 = (0..512).map(|n| b[i * 512 + n] * b[j * 512 + n]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - want).abs());
            }
        }
        assert!(worst <= 1e-6, "gram deviation {worst}");
    }

    #[test]
    fn dct_round_trip() {
        let tf = Stdct::standard();
        let x = noise(2, 512 * 3);
        let y = tf.idct_rows(&tf.dct_rows(x.samples(), 3), 3);
        assert!(rel_l2(&y, x.samples()) <= 1e-6);
    }

    #[test]
    fn stdct_shape_and_zero() {
        assert_eq!(stdct(&noise(3, 16000)).unwrap().shape(), (512, 122));
        let z = stdct(&Waveform::new(vec![0.0; 2000]).unwrap()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stdct_is_linear() {
        let (x, y) = (noise(4, 3000), noise(5, 3000));
        let (a, b) = (0.7f32, -1.3f32);
        let mix = Waveform::new(
            x.samples().iter().zip(y.samples()).map(|(&p, &q)| a * p + b * q).collect(),
        )
        .unwrap();
        let (sx, sy, sm) = (stdct(&x).unwrap(), stdct(&y).unwrap(), stdct(&mix).unwrap());
        let comb: Vec<f32> = sx.data().iter().zip(sy.data()).map(|(&p, &q)| a * p + b * q).collect();
        assert!(rel_l2(sm.data(), &comb) <= 1e-5);
    }

    #[test]
    fn column_depends_only_on_covered_samples() {
        let x = noise(6, 4000);
        let s = stdct(&x).unwrap();
        let n = 2100;
        let mut y = x.samples().to_vec();
        y[n] += 0.5;
        let s2 = stdct(&Waveform::new(y).unwrap()).unwrap();
        for t in 0..s.frames() {
            if t * HOP + WINDOW <= n {
                assert_eq!(s.column(t), s2.column(t));
            } else if t * HOP <= n {
                assert_ne!(s.column(t), s2.column(t));
            }
        }
    }

    #[test]
    fn ola_round_trip_interior() {
        let x = noise(7, 16000);
        let y = istdct_ola(&stdct(&x).unwrap(), 16000).unwrap();
        let r = rel_l2(&y.samples()[WINDOW..16000 - WINDOW], &x.samples()[WINDOW..16000 - WINDOW]);
        assert!(r <= 1e-5, "{r}");
    }

    #[test]
    fn single_frame_support() {
        let mut data = vec![0.0f32; 512 * 6];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in &mut data[512 * 3..512 * 4] {
            *v = rng.random_range(-1.0..1.0);
        }
        let spec = Spectrogram::new(512, 6, data).unwrap();
        let y = istdct_ola(&spec, 5 * 128 + 512).unwrap();
        for (n, &v) in y.samples().iter().enumerate() {
            if !(3 * 128..3 * 128 + 512).contains(&n) {
                assert_eq!(v, 0.0, "sample {n}");
            }
        }
    }

    #[test]
    fn out_len_beyond_coverage_rejected() {
        let spec = Spectrogram::new(512, 2, vec![0.0; 1024]).unwrap();
        assert!(istdct_ola(&spec, 640).is_ok());
        assert!(istdct_ola(&spec, 641).is_err());
    }

    #[test]
    fn hamming_normalizer_never_clamps() {
        let (_, clamped) = istdct_ola_with_diagnostics(&stdct(&noise(9, 2048)).unwrap(), 2048).unwrap();
        assert_eq!(clamped, 0);
    }

    #[test]
    fn delay_constant_is_one_window() {
        assert_eq!(ALGORITHMIC_DELAY, 512);
        assert_eq!(ALGORITHMIC_DELAY as f64 * 1000.0 / SAMPLE_RATE as f64, 32.0);
    }
}
