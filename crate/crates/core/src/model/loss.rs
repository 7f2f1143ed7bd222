use crate::error::{Error, Result};
use crate::stdct::Spectrogram;

/// Stabilizer in the ratio-mask denominator.
pub const MASK_EPS: f64 = 1e-8;

/// Upper bound reported by [`si_snr`] for a perfect estimate.
pub const SI_SNR_CAP_DB: f64 = 120.0;

/// A `(bins, frames)` mask with every value in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpectrogram(Spectrogram);

impl MaskSpectrogram {
    pub fn new(spec: Spectrogram) -> Result<Self> {
        if let Some(v) = spec.data().iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Shape(format!("mask value {v} outside [-1, 1]")));
        }
        Ok(Self(spec))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn as_spectrogram(&self) -> &Spectrogram {
        &self.0
    }
}

/// Clamped DCT-domain ratio mask `clamp(S·X / (X² + ε), −1, 1)`.
pub fn target_mask(s: &Spectrogram, x: &Spectrogram) -> Result<MaskSpectrogram> {
    if s.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "target mask needs equal shapes, got {:?} and {:?}",
            s.shape(),
            x.shape()
        )));
    }
    let data = s
        .data()
        .iter()
        .zip(x.data())
        .map(|(&s, &x)| {
            let (s, x) = (s as f64, x as f64);
            (s * x / (x * x + MASK_EPS)).clamp(-1.0, 1.0) as f32
        })
        .collect();
    MaskSpectrogram::new(Spectrogram::new(s.bins(), s.frames(), data)?)
}

/// The two loss terms and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub l1: f64,
    pub mask_mse: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.l1 + self.mask_mse
    }
}

/// Mean absolute waveform error plus mean squared mask error.
pub fn loss_parts(
    est: &[f32],
    clean: &[f32],
    est_mask: &MaskSpectrogram,
    mask: &MaskSpectrogram,
) -> Result<LossParts> {
    if est.len() != clean.len() {
        return Err(Error::LengthMismatch(est.len(), clean.len()));
    }
    if est_mask.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "mask shapes differ: {:?} vs {:?}",
            est_mask.shape(),
            mask.shape()
        )));
    }
    if est.is_empty() {
        return Err(Error::Undefined("loss over an empty signal".into()));
    }
    let l1 = est
        .iter()
        .zip(clean)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / est.len() as f64;
    let mask_mse = est_mask
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / mask.data().len() as f64;
    Ok(LossParts { l1, mask_mse })
}

pub fn loss_fn(
    est: &[f32],
    clean: &[f32],
    est_mask: &MaskSpectrogram,
    mask: &MaskSpectrogram,
) -> Result<f64> {
    loss_parts(est, clean, est_mask, mask).map(|p| p.total())
}

/// Scale-invariant SNR in dB, capped at [`SI_SNR_CAP_DB`].
pub fn si_snr(est: &[f32], target: &[f32]) -> Result<f64> {
    if est.len() != target.len() {
        return Err(Error::LengthMismatch(est.len(), target.len()));
    }
    let centered = |x: &[f32]| {
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len().max(1) as f64;
        x.iter().map(|&v| v as f64 - mean).collect::<Vec<_>>()
    };
    let (e, s) = (centered(est), centered(target));
    let s_energy: f64 = s.iter().map(|v| v * v).sum();
    if !(s_energy > 0.0) {
        return Err(Error::Undefined("SI-SNR target has zero energy".into()));
    }
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s_energy;
    let proj: f64 = s_energy * alpha * alpha;
    let noise: f64 = e.iter().zip(&s).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if noise == 0.0 {
        return Ok(if proj > 0.0 { SI_SNR_CAP_DB } else { f64::NEG_INFINITY });
    }
    Ok((10.0 * (proj / noise).log10()).min(SI_SNR_CAP_DB))
}
