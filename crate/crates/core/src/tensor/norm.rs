use super::{CausalLayer, FeatureMap, WeightTensor};
use crate::error::{Error, Result};

/// Inference-mode batch normalization with frozen running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    /// `sqrt(var + eps)`
    std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f64) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || var.len() != c {
            return Err(Error::InvalidConfig(format!(
                "batch-norm parameter lengths differ: {c}/{}/{}/{}",
                beta.len(),
                mean.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::InvalidWeights(format!("batch-norm variance {v} < 0")));
        }
        let f = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
        Ok(Self {
            gamma: f(gamma),
            beta: f(beta),
            mean: f(mean),
            std: var.iter().map(|&v| (v as f64 + eps).sqrt()).collect(),
        })
    }

    pub fn from_tensors(
        gamma: &WeightTensor,
        beta: &WeightTensor,
        mean: &WeightTensor,
        var: &WeightTensor,
        eps: f64,
    ) -> Result<Self> {
        Self::new(&gamma.data, &beta.data, &mean.data, &var.data, eps)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn apply_in_place(&self, frame: &mut [f32], freqs: usize) {
        for (c, chan) in frame.chunks_exact_mut(freqs).enumerate() {
            let (g, b, m, s) = (self.gamma[c], self.beta[c], self.mean[c], self.std[c]);
            for v in chan {
                *v = (g * (*v as f64 - m) / s + b) as f32;
            }
        }
    }
}

impl CausalLayer for BatchNorm {
    type State = ();

    fn init_state(&self) {}

    fn in_channels(&self) -> usize {
        self.channels()
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (self.channels(), freqs)
    }

    fn step(&self, _: &mut (), frame: &[f32], freqs: usize) -> Vec<f32> {
        let mut out = frame.to_vec();
        self.apply_in_place(&mut out, freqs);
        out
    }
}

/// `y = γ(x − μ)/√(σ² + ε) + β` per channel.
pub fn batchnorm_eval(
    input: &FeatureMap,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    eps: f64,
) -> Result<FeatureMap> {
    BatchNorm::new(gamma, beta, running_mean, running_var, eps)?.forward(input)
}
