use crate::error::{Error, Result};
use crate::ofif::{fused_frame, stack_with, OfifSpectrum};
use crate::stdct::{istdct_ola, Spectrogram, Stdct, Waveform};
use crate::tensor::{
    BatchNorm, CausalLayer, Conv2dCausal, ConvState, Deconv2dCausal, FeatureMap, Prelu, WeightMap,
    WeightSource,
};
use crate::tfca::{AttentionMode, Tfca, TfcaState};
use crate::tfsm::{TfsmBlock, TfsmState};

use super::loss::MaskSpectrogram;
use super::weights::{tensor_specs, validate};
use super::ModelConfig;

fn slopes(src: &impl WeightSource, name: &str) -> Result<Prelu> {
    Ok(Prelu::new(src.tensor(name)?.data.clone()))
}

fn batchnorm(src: &impl WeightSource, prefix: &str, eps: f64) -> Result<BatchNorm> {
    let t = |s: &str| src.tensor(&format!("{prefix}.bn.{s}"));
    BatchNorm::from_tensors(t("gamma")?, t("beta")?, t("mean")?, t("var")?, eps)
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv: Conv2dCausal,
    bn: BatchNorm,
    act: Prelu,
}

impl EncoderBlock {
    fn step(&self, st: &mut ConvState, x: &[f32], freqs: usize) -> Vec<f32> {
        let fo = self.conv.out_freqs(freqs);
        let mut y = self.conv.step(st, x, freqs);
        self.bn.apply_in_place(&mut y, fo);
        self.act.apply_in_place(&mut y, fo);
        y
    }

    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let fo = self.conv.out_freqs(x.freqs());
        let mut st = ConvState::default();
        x.map_frames(self.conv.cout, fo, |_, fr| self.step(&mut st, fr, x.freqs()))
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    skip: Tfca,
    deconv: Deconv2dCausal,
    bn: BatchNorm,
    /// `None` on the last block, which ends in Tanh instead
    act: Option<Prelu>,
    post: Option<Tfca>,
}

impl DecoderBlock {
    fn finish(&self, y: &mut [f32], fo: usize) {
        self.bn.apply_in_place(y, fo);
        match &self.act {
            Some(p) => p.apply_in_place(y, fo),
            None => y.iter_mut().for_each(|v| *v = v.tanh()),
        }
    }
}

#[derive(Clone, Debug)]
struct DecoderState {
    skip: TfcaState,
    deconv: ConvState,
    post: Option<TfcaState>,
}

/// Everything a streaming run carries between frames.
#[derive(Clone, Debug)]
pub struct NetworkState {
    ofif: TfcaState,
    enc: Vec<ConvState>,
    tfsm: Vec<TfsmState>,
    dec: Vec<DecoderState>,
}

/// Intermediate results of one offline pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// stacked spectra `X̃` (or the plain spectrum when pseudo frames are off)
    pub stacked: FeatureMap,
    /// after the input attention block
    pub fused: FeatureMap,
    /// encoder output before the TFSM stack
    pub bottleneck: FeatureMap,
    pub mask: MaskSpectrogram,
    pub enhanced: Waveform,
}

/// A configured network with validated weights. Immutable; share freely.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    ofif: Tfca,
    enc: Vec<EncoderBlock>,
    tfsm: Vec<TfsmBlock>,
    dec: Vec<DecoderBlock>,
    /// bins entering each encoder block, then the bottleneck
    freqs: Vec<usize>,
}

impl Model {
    pub fn new(config: ModelConfig, w: &WeightMap) -> Result<Self> {
        config.validate()?;
        validate(&config, w)?;
        let cfg = &config;
        let mode = cfg.attention;
        let pad = cfg.pad_f;
        let stride = (cfg.stride[0], cfg.stride[1]);
        let ofif = Tfca::from_weights(w, "ofif.tfca", cfg.input_channels, cfg.k_t, mode)?;
        let enc = (0..cfg.depth())
            .map(|i| {
                let p = format!("enc.{i}");
                Ok(EncoderBlock {
                    conv: Conv2dCausal::from_tensors(
                        w.tensor(&format!("{p}.conv.w"))?,
                        w.tensor(&format!("{p}.conv.b"))?,
                        stride,
                        pad,
                    )?,
                    bn: batchnorm(w, &p, cfg.bn_eps)?,
                    act: slopes(w, &format!("{p}.prelu.a"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tfsm = (0..cfg.tfsm_hidden.len())
            .map(|i| TfsmBlock::from_weights(w, &format!("tfsm.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let n = cfg.depth();
        let dec = (0..n)
            .map(|i| {
                let p = format!("dec.{i}");
                let last = i + 1 == n;
                let cout = cfg.decoder_channels[i];
                Ok(DecoderBlock {
                    skip: Tfca::from_weights(
                        w,
                        &format!("skip.{i}.tfca"),
                        cfg.encoder_channels[n - 1 - i],
                        cfg.k_t,
                        mode,
                    )?,
                    deconv: Deconv2dCausal::from_tensors(
                        w.tensor(&format!("{p}.deconv.w"))?,
                        w.tensor(&format!("{p}.deconv.b"))?,
                        stride,
                        pad,
                        cfg.out_pad_f,
                    )?,
                    bn: batchnorm(w, &p, cfg.bn_eps)?,
                    act: if last { None } else { Some(slopes(w, &format!("{p}.prelu.a"))?) },
                    post: if last {
                        None
                    } else {
                        Some(Tfca::from_weights(w, &format!("{p}.tfca"), cout, cfg.k_t, mode)?)
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            freqs: cfg.encoder_freqs(),
            config,
            ofif,
            enc,
            tfsm,
            dec,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> AttentionMode {
        self.config.attention
    }

    /// Number of trainable scalars (batch-norm running statistics excluded).
    pub fn param_count(&self) -> usize {
        param_breakdown(&self.config).total
    }

    fn with_pseudo(&self) -> bool {
        self.config.input_channels == 4
    }

    /// Stacked spectra of an already frame-aligned signal.
    pub fn stack(&self, x: &[f32]) -> Result<FeatureMap> {
        stack_with(Stdct::standard(), x, self.with_pseudo())
    }

    /// Network pass from the stacked spectra to the `(1, F, T)` mask map,
    /// returning the fused input and the bottleneck on the way.
    fn run_layers(&self, stacked: &FeatureMap) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
        let fused = self.ofif.forward(stacked)?;
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = fused.clone();
        for blk in &self.enc {
            h = blk.forward(&h)?;
            skips.push(h.clone());
        }
        let bottleneck = h.clone();
        for blk in &self.tfsm {
            h = blk.forward(&h)?;
        }
        for blk in &self.dec {
            let skip = blk.skip.forward(&skips.pop().expect("one skip per block"))?;
            let cat = h.concat_channels(&skip)?;
            let fo = blk.deconv.out_freqs(cat.freqs());
            let mut st = ConvState::default();
            h = cat.map_frames(blk.deconv.cout, fo, |_, fr| {
                let mut y = blk.deconv.step(&mut st, fr, cat.freqs());
                blk.finish(&mut y, fo);
                y
            })?;
            if let Some(post) = &blk.post {
                h = post.forward(&h)?;
            }
        }
        Ok((fused, bottleneck, h))
    }

    /// Mask for stacked spectra `(C_in, 512, T)`.
    pub fn mask_map(&self, stacked: &FeatureMap) -> Result<FeatureMap> {
        self.run_layers(stacked).map(|(_, _, m)| m)
    }

    /// Offline enhancement with all intermediates.
    pub fn forward_trace(&self, wave: &Waveform) -> Result<ForwardTrace> {
        let tf = Stdct::standard();
        let len = wave.len();
        if len < tf.frame_len {
            return Err(Error::TooShort {
                len,
                min: tf.frame_len,
            });
        }
        let padded = pad_to_frames(wave.samples(), tf);
        let stacked = self.stack(&padded)?;
        let (fused, bottleneck, m) = self.run_layers(&stacked)?;
        let (bins, frames) = (m.freqs(), m.frames());
        let mut mask = Vec::with_capacity(bins * frames);
        let mut est = Vec::with_capacity(bins * frames);
        for t in 0..frames {
            let x = &stacked.frame(t)[..bins];
            let mf = m.frame(t);
            mask.extend_from_slice(mf);
            est.extend(apply_mask(mf, x));
        }
        let mask = MaskSpectrogram::new(Spectrogram::new(bins, frames, mask)?)?;
        let enhanced = istdct_ola(&Spectrogram::new(bins, frames, est)?, len)?;
        Ok(ForwardTrace {
            stacked,
            fused,
            bottleneck,
            mask,
            enhanced,
        })
    }

    /// Offline enhancement: `(enhanced waveform, mask)`.
    pub fn forward(&self, wave: &Waveform) -> Result<(Waveform, MaskSpectrogram)> {
        self.forward_trace(wave).map(|t| (t.enhanced, t.mask))
    }

    pub fn init_state(&self) -> Result<NetworkState> {
        if self.mode() != AttentionMode::Cumulative {
            return Err(Error::NotStreamable);
        }
        let f = &self.freqs;
        let n = self.enc.len();
        Ok(NetworkState {
            ofif: self.ofif.init_state(f[0]),
            enc: vec![ConvState::default(); n],
            tfsm: self.tfsm.iter().map(|b| b.init_state()).collect(),
            dec: self
                .dec
                .iter()
                .enumerate()
                .map(|(i, b)| DecoderState {
                    skip: b.skip.init_state(f[n - i]),
                    deconv: ConvState::default(),
                    post: b.post.as_ref().map(|p| p.init_state(f[n - 1 - i])),
                })
                .collect(),
        })
    }

    /// One raw `W`-sample frame through the whole network; returns the
    /// masked spectrum column `Ŝ_t` and the mask column.
    pub fn step_frame(&self, st: &mut NetworkState, raw: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let tf = Stdct::standard();
        let x = fused_frame(tf, raw, self.with_pseudo())?;
        let f = &self.freqs;
        let h0 = self.ofif.step(&mut st.ofif, &x, f[0]);
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = h0;
        for (i, (blk, cs)) in self.enc.iter().zip(&mut st.enc).enumerate() {
            h = blk.step(cs, &h, f[i]);
            skips.push(h.clone());
        }
        let fb = *f.last().unwrap();
        for (blk, ts) in self.tfsm.iter().zip(&mut st.tfsm) {
            h = blk.step(ts, &h, fb);
        }
        let n = self.enc.len();
        for (i, (blk, ds)) in self.dec.iter().zip(&mut st.dec).enumerate() {
            let fin = f[n - i];
            let skip = blk.skip.step(&mut ds.skip, &skips.pop().unwrap(), fin);
            h.extend_from_slice(&skip);
            let fo = blk.deconv.out_freqs(fin);
            let mut y = blk.deconv.step(&mut ds.deconv, &h, fin);
            blk.finish(&mut y, fo);
            if let (Some(post), Some(ps)) = (&blk.post, &mut ds.post) {
                y = post.step(ps, &y, fo);
            }
            h = y;
        }
        let est = apply_mask(&h, &x[..f[0]]);
        Ok((est, h))
    }
}

/// `Ŝ = M̂ ⊙ X`.
fn apply_mask(mask: &[f32], x: &[f32]) -> Vec<f32> {
    mask.iter().zip(x).map(|(&m, &x)| m * x).collect()
}

/// Length after zero-padding `len` samples so every sample is covered by a
/// full frame: `W + k·H`, at least `W`.
pub fn padded_len(len: usize, tf: &Stdct) -> usize {
    let w = tf.frame_len;
    w + len.saturating_sub(w).div_ceil(tf.hop) * tf.hop
}

/// Zero-pads `x` to [`padded_len`].
pub fn pad_to_frames(x: &[f32], tf: &Stdct) -> Vec<f32> {
    let mut v = x.to_vec();
    v.resize(padded_len(x.len(), tf), 0.0);
    v
}

/// Parameter totals per top-level module.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub modules: Vec<(&'static str, usize)>,
    pub total: usize,
}

impl std::fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (m, n) in &self.modules {
            writeln!(f, "{m:<14}{n:>10}")?;
        }
        write!(f, "{:<14}{:>10}  ({:.3} M)", "total", self.total, self.total as f64 / 1e6)
    }
}

pub fn param_breakdown(cfg: &ModelConfig) -> ParamBreakdown {
    let mut modules: Vec<(&'static str, usize)> = Vec::new();
    for s in tensor_specs(cfg).iter().filter(|s| s.role.trainable()) {
        match modules.iter_mut().find(|(m, _)| *m == s.module) {
            Some((_, n)) => *n += s.numel(),
            None => modules.push((s.module, s.numel())),
        }
    }
    let total = modules.iter().map(|(_, n)| n).sum();
    ParamBreakdown { modules, total }
}

pub fn param_count(model: &Model) -> usize {
    model.param_count()
}

pub fn build_model(config: ModelConfig, weights: &WeightMap) -> Result<Model> {
    Model::new(config, weights)
}

/// Offline enhancement of `wave`.
pub fn model_forward(model: &Model, wave: &Waveform) -> Result<(Waveform, MaskSpectrogram)> {
    model.forward(wave)
}

/// Network input for `wave` after tail padding.
pub fn ofif_input(model: &Model, wave: &Waveform) -> Result<OfifSpectrum> {
    let padded = pad_to_frames(wave.samples(), Stdct::standard());
    model.stack(&padded).map(OfifSpectrum)
}
