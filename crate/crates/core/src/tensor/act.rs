use super::{CausalLayer, FeatureMap};
use crate::error::{Error, Result};

/// PReLU with one learnable slope per channel.
#[derive(Clone, Debug)]
pub struct Prelu {
    slopes: Vec<f32>,
}

impl Prelu {
    pub fn new(slopes: Vec<f32>) -> Self {
        Self { slopes }
    }

    pub fn apply_in_place(&self, frame: &mut [f32], freqs: usize) {
        for (chan, &a) in frame.chunks_exact_mut(freqs).zip(&self.slopes) {
            for v in chan {
                if *v < 0.0 {
                    *v *= a;
                }
            }
        }
    }
}

impl CausalLayer for Prelu {
    type State = ();

    fn init_state(&self) {}

    fn in_channels(&self) -> usize {
        self.slopes.len()
    }

    fn out_shape(&self, freqs: usize) -> (usize, usize) {
        (self.slopes.len(), freqs)
    }

    fn step(&self, _: &mut (), frame: &[f32], freqs: usize) -> Vec<f32> {
        let mut out = frame.to_vec();
        self.apply_in_place(&mut out, freqs);
        out
    }
}

pub fn prelu(input: &FeatureMap, slopes: &[f32]) -> Result<FeatureMap> {
    if slopes.len() != input.channels() {
        return Err(Error::Shape(format!(
            "{} PReLU slopes for {} channels",
            slopes.len(),
            input.channels()
        )));
    }
    Prelu::new(slopes.to_vec()).forward(input)
}

pub fn tanh_act(input: &FeatureMap) -> FeatureMap {
    let (c, f, t) = input.dims();
    FeatureMap::new(c, f, t, input.data().iter().map(|v| v.tanh()).collect())
        .expect("same dims")
}
