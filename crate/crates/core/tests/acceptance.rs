//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ofif::model::{
    init_weights, loss_fn, param_breakdown, si_snr, target_mask, MaskSpectrogram, Model,
    ModelConfig,
};
use ofif::ofif::make_pseudo_frames;
use ofif::stdct::{istdct_ola, stdct, Spectrogram, Stdct, Waveform, HOP, WINDOW};
use ofif::stream::{enhance_streaming, verify_causality, StreamState};
use ofif::tensor::{FeatureMap, WeightMap, WeightTensor};
use ofif::tfca::{AttentionMode, Axis, Tfca};

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------- 1

fn oracle_tfca(c: usize) -> usize {
    3 * (2 + 1) * 2 + 3 * (c * c + c) + (3 * c * c + c)
}

fn oracle_gru(d: usize, h: usize) -> usize {
    3 * h * d + 3 * h * h + 6 * h
}

fn oracle_params(cfg: &ModelConfig) -> usize {
    let taps = cfg.kernel[0] * cfg.kernel[1];
    let enc = &cfg.encoder_channels;
    let dec = &cfg.decoder_channels;
    let n = enc.len();
    let mut total = oracle_tfca(cfg.input_channels);
    let mut cin = cfg.input_channels;
    for &c in enc {
        // conv w + b, bn gamma + beta, prelu slope
        total += c * cin * taps + c + 2 * c + c;
        cin = c;
    }
    let cb = enc[n - 1];
    for &h in &cfg.tfsm_hidden {
        total += 3 * oracle_gru(cb, h) + (cb * 2 * h + cb) + (cb * h + cb);
    }
    let mut prev = cb;
    for i in 0..n {
        let skip = enc[n - 1 - i];
        total += oracle_tfca(skip);
        let cin = prev + skip;
        let c = dec[i];
        total += cin * c * taps + c + 2 * c;
        if i + 1 < n {
            total += c + oracle_tfca(c);
        }
        prev = c;
    }
    total
}

fn criterion_1() -> Outcome {
    let cfg = ModelConfig::full();
    let bd = param_breakdown(&cfg);
    let w = init_weights(&cfg, 0);
    let built = Model::new(cfg.clone(), &w).expect("full model builds");
    let stored: usize = w
        .iter()
        .filter(|t| !t.name.ends_with(".bn.mean") && !t.name.ends_with(".bn.var"))
        .map(|t| t.numel())
        .sum();
    let oracle = oracle_params(&cfg);
    let target = 2.61e6;
    let (lo, hi) = (target * 0.6, target * 1.4);
    let n = built.param_count();
    let in_band = (lo..=hi).contains(&(n as f64));
    let modules = bd
        .modules
        .iter()
        .map(|(m, c)| format!("{m}={c}"))
        .collect::<Vec<_>>()
        .join(" ");
    pass(
        in_band && n == oracle && n == stored && n == bd.total,
        format!(
            "{n} params ({:.3} M, {:+.1}% vs 2.61 M; oracle {oracle}); {modules}",
            n as f64 / 1e6,
            (n as f64 / target - 1.0) * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let cfg = ModelConfig::full();
    let model = Model::new(cfg.clone(), &init_weights(&cfg, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = noise(&mut rng, 4000);
    let mut st = StreamState::new(&model).unwrap();
    let mut first_emit_at = None;
    let mut lag = 0usize;
    for (i, &s) in x.iter().enumerate() {
        let out = st.push(&model, &[s]).unwrap();
        if !out.is_empty() && first_emit_at.is_none() {
            first_emit_at = Some(i + 1);
        }
        let n_first = st.emitted() - out.len();
        if !out.is_empty() {
            lag = lag.max(st.consumed() - n_first);
        }
    }
    let delay = st.algorithmic_delay();
    st.flush(&model).unwrap();
    let ok = delay == Some(512) && lag == 512 && first_emit_at == Some(512) && st.emitted() == x.len();
    pass(
        ok,
        format!(
            "algorithmic delay {:?} samples ({:.1} ms), per-sample lag {lag}, first emission after {:?} samples",
            delay,
            delay.unwrap_or(0) as f64 / 16.0,
            first_emit_at
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let tf = Stdct::standard();
    let n = WINDOW;
    let b = tf.basis();
    let mut gram_err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
            gram_err = gram_err.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    // independent DCT-II for one frame
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let frame = noise(&mut rng, n);
    let lib = tf.dct_rows(&frame, 1);
    let mut dct_err = 0.0f64;
    for k in 0..n {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let v: f64 = (0..n)
            .map(|i| {
                frame[i] as f64
                    * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
            })
            .sum::<f64>()
            * a;
        dct_err = dct_err.max((v - lib[k] as f64).abs());
    }
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = noise(&mut rng, 16000);
        let w = Waveform::new(x.clone()).unwrap();
        let y = istdct_ola(&stdct(&w).unwrap(), x.len()).unwrap();
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in WINDOW..x.len() - WINDOW {
            num += (y.samples()[i] as f64 - x[i] as f64).powi(2);
            den += (x[i] as f64).powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    pass(
        worst <= 1e-5 && gram_err <= 1e-6 && dct_err <= 1e-5,
        format!("worst interior rel L2 {worst:.2e} over 100 signals; Gram err {gram_err:.2e}; DCT vs direct sum {dct_err:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut checked = 0usize;
    let mut bad = 0usize;
    for _ in 0..20 {
        let len = rng.random_range(2000..20000);
        let x = noise(&mut rng, len);
        let frames = (len - WINDOW) / HOP + 1;
        for t in 0..frames {
            let g = make_pseudo_frames(&x[t * HOP..t * HOP + WINDOW], HOP).unwrap();
            if g.frame(0) != &x[t * HOP..t * HOP + WINDOW] {
                bad += 1;
            }
            for k in 1..4 {
                let known = (4 - k) * HOP;
                let p = g.frame(k);
                let start = (t + k) * HOP;
                // true frame x_{t+k}, possibly running past the signal end
                let truth = &x[start..(start + known).min(x.len())];
                if p[..known] != *truth || p[known..].iter().any(|v| v.to_bits() != 0) {
                    bad += 1;
                }
                checked += 1;
            }
        }
    }
    pass(bad == 0, format!("{checked} pseudo frames over 20 signals, {bad} mismatches"))
}

// ---------------------------------------------------------------- 5

fn random_tfca_weights(rng: &mut ChaCha8Rng, c: usize) -> WeightMap {
    Tfca::tensor_specs("a", c)
        .into_iter()
        .map(|(name, dims)| {
            let n = dims.iter().product();
            WeightTensor::new(name, dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap()
        })
        .collect()
}

fn oracle_time(w: &WeightMap, x: &FeatureMap) -> Vec<Vec<f64>> {
    let (c, f, t) = x.dims();
    let get = |name: &str| w.get(&format!("a.t.{name}")).unwrap().data.clone();
    let (qw, qb, kw, kb) = (get("q.w"), get("q.b"), get("k.w"), get("k.b"));
    let mut q = vec![0.0f64; t];
    let mut k = vec![0.0f64; t];
    for tt in 0..t {
        let mut sum = 0.0f64;
        let mut mx = f64::NEG_INFINITY;
        for ch in 0..c {
            for b in 0..f {
                let v = x.get(ch, b, tt) as f64;
                sum += v;
                mx = mx.max(v);
            }
        }
        let avg = sum / (c * f) as f64;
        q[tt] = qw[0] as f64 * avg + qw[1] as f64 * mx + qb[0] as f64;
        k[tt] = kw[0] as f64 * avg + kw[1] as f64 * mx + kb[0] as f64;
    }
    (0..t)
        .map(|i| {
            let mut row: Vec<f64> = (0..=i).map(|j| q[i] * k[j]).collect();
            softmax_row(&mut row);
            row.resize(t, 0.0);
            row
        })
        .collect()
}

fn softmax_row(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
}

/// Offline frequency- or channel-branch attention by direct loops.
fn oracle_fc(w: &WeightMap, x: &FeatureMap, axis: Axis, k_t: usize) -> Vec<Vec<f64>> {
    let (c, f, t) = x.dims();
    let (keep, red, tag) = match axis {
        Axis::Frequency => (f, c, "f"),
        Axis::Channel => (c, f, "c"),
    };
    let get = |name: &str| w.get(&format!("a.{tag}.{name}")).unwrap().data.clone();
    let (qw, qb, kw, kb) = (get("q.w"), get("q.b"), get("k.w"), get("k.b"));
    let mut q = vec![vec![0.0f64; t]; keep];
    let mut k = vec![vec![0.0f64; t]; keep];
    for i in 0..keep {
        for tt in 0..t {
            let mut sum = 0.0f64;
            let mut mx = f64::NEG_INFINITY;
            for back in 0..k_t {
                if back > tt {
                    mx = mx.max(0.0);
                    continue;
                }
                for r in 0..red {
                    let v = match axis {
                        Axis::Frequency => x.get(r, i, tt - back),
                        Axis::Channel => x.get(i, r, tt - back),
                    } as f64;
                    sum += v;
                    mx = mx.max(v);
                }
            }
            let avg = sum / (k_t * red) as f64;
            q[i][tt] = qw[0] as f64 * avg + qw[1] as f64 * mx + qb[0] as f64;
            k[i][tt] = kw[0] as f64 * avg + kw[1] as f64 * mx + kb[0] as f64;
        }
    }
    (0..keep)
        .map(|i| {
            let mut row: Vec<f64> = (0..keep)
                .map(|j| (0..t).map(|tt| q[i][tt] * k[j][tt]).sum::<f64>() / (t as f64).sqrt())
                .collect();
            softmax_row(&mut row);
            row
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst_t_sum = 0.0f64;
    let mut upper_nonzero = 0usize;
    let mut worst_fc_sum = 0.0f64;
    let mut worst_cum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..50 {
        let c = rng.random_range(1..10);
        let f = rng.random_range(1..40);
        let t = rng.random_range(1..40);
        let w = random_tfca_weights(&mut rng, c);
        let blk = Tfca::from_weights(&w, "a", c, 15, AttentionMode::Offline).unwrap();
        let x = FeatureMap::from_fn(c, f, t, |_, _, _| rng.random_range(-2.0..2.0));
        let at = blk.time_attention(&x).unwrap();
        for i in 0..t {
            worst_t_sum = worst_t_sum.max((at.row(i).iter().sum::<f64>() - 1.0).abs());
            upper_nonzero += at.row(i)[i + 1..].iter().filter(|&&v| v != 0.0).count();
        }
        let ot = oracle_time(&w, &x);
        for i in 0..t {
            for j in 0..t {
                worst_oracle = worst_oracle.max((at.get(i, j) - ot[i][j]).abs());
            }
        }
        for axis in [Axis::Frequency, Axis::Channel] {
            let off = blk.fc_attention_offline(&x, axis).unwrap();
            let cum = blk.fc_attention_cumulative(&x, axis, t - 1).unwrap();
            let oracle = oracle_fc(&w, &x, axis, 15);
            for i in 0..off.rows {
                worst_fc_sum = worst_fc_sum.max((off.row(i).iter().sum::<f64>() - 1.0).abs());
                for j in 0..off.cols {
                    worst_cum = worst_cum.max((off.get(i, j) - cum.get(i, j)).abs());
                    worst_oracle = worst_oracle.max((off.get(i, j) - oracle[i][j]).abs());
                }
            }
        }
    }
    pass(
        upper_nonzero == 0
            && worst_t_sum <= 1e-6
            && worst_fc_sum <= 1e-6
            && worst_cum <= 1e-6
            && worst_oracle <= 1e-6,
        format!(
            "50 inputs: Atten_t upper-triangle nonzeros {upper_nonzero}, row-sum err {worst_t_sum:.1e}; \
             Atten_f/c row-sum err {worst_fc_sum:.1e}; cumulative(T-1) vs offline {worst_cum:.1e}; \
             Atten_t/f/c vs loop oracles {worst_oracle:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let frames = 100;
    let len = WINDOW + (frames - 1) * HOP;
    let cfg = ModelConfig::compact();
    let w = init_weights(&cfg, 6);
    let cum = Model::new(cfg.clone(), &w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut failed = Vec::new();
    let mut latencies_ok = true;
    for trial in 0..100u64 {
        let split = rng.random_range(0..len);
        let r = verify_causality(&cum, 1000 + trial, split, len).unwrap();
        latencies_ok &= r.latency == Some(512);
        if !r.passed {
            failed.push(r.to_string());
        }
    }
    let off = Model::new(cfg.with_attention(AttentionMode::Offline), &w).unwrap();
    let mut offline_failures = 0;
    let mut example = String::new();
    for trial in 0..5u64 {
        let r = verify_causality(&off, 2000 + trial, len / 2 + trial as usize * 97, len).unwrap();
        if !r.passed {
            offline_failures += 1;
            if example.is_empty() {
                example = format!(" (e.g. split {} diverges at {:?})", r.split, r.first_divergence);
            }
        }
    }
    pass(
        failed.is_empty() && latencies_ok && offline_failures > 0,
        format!(
            "cumulative: {}/100 pass at T={frames}; offline: {offline_failures}/5 fail{example}{}",
            100 - failed.len(),
            failed.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let cfg = ModelConfig::compact();
    let model = Model::new(cfg.clone(), &init_weights(&cfg, 7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut mismatches = 0;
    let mut runs = 0;
    for _ in 0..10 {
        let len = rng.random_range(600..6000);
        let x = noise(&mut rng, len);
        let offline = model.forward(&Waveform::new(x.clone()).unwrap()).unwrap().0;
        for chunk in [1, 128, 160, 512, 0] {
            let (y, _) = enhance_streaming(&model, &x, chunk).unwrap();
            runs += 1;
            let same = y.len() == offline.len()
                && y.iter().zip(offline.samples()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                mismatches += 1;
            }
        }
    }
    pass(mismatches == 0, format!("{runs} streamed runs, {mismatches} not bit-identical to offline"))
}

// ---------------------------------------------------------------- 8

fn loop_loss(est: &[f32], s: &[f32], mh: &[f32], m: &[f32]) -> f64 {
    let mut l1 = 0.0;
    for i in 0..est.len() {
        l1 += (est[i] as f64 - s[i] as f64).abs();
    }
    let mut se = 0.0;
    for i in 0..m.len() {
        let d = mh[i] as f64 - m[i] as f64;
        se += d * d;
    }
    l1 / est.len() as f64 + se / m.len() as f64
}

fn loop_si_snr(est: &[f32], s: &[f32]) -> f64 {
    let n = est.len() as f64;
    let me = est.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ms = s.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut dot = 0.0;
    let mut ss = 0.0;
    for i in 0..est.len() {
        dot += (est[i] as f64 - me) * (s[i] as f64 - ms);
        ss += (s[i] as f64 - ms).powi(2);
    }
    let mut pt = 0.0;
    let mut pe = 0.0;
    for i in 0..est.len() {
        let st = dot / ss * (s[i] as f64 - ms);
        let e = est[i] as f64 - me - st;
        pt += st * st;
        pe += e * e;
    }
    (10.0 * (pt / pe).log10()).min(120.0)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let (mut loss_err, mut snr_err, mut scale_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut zero_ok = true;
    for _ in 0..50 {
        let len = rng.random_range(100..4000);
        let bins = rng.random_range(1..64);
        let frames = rng.random_range(1..32);
        let s = noise(&mut rng, len);
        let est: Vec<f32> = s.iter().map(|v| v * 0.7 + rng.random_range(-0.3..0.3)).collect();
        let mk = |rng: &mut ChaCha8Rng| {
            MaskSpectrogram::new(Spectrogram::new(bins, frames, noise(rng, bins * frames)).unwrap()).unwrap()
        };
        let (mh, m) = (mk(&mut rng), mk(&mut rng));
        let l = loss_fn(&est, &s, &mh, &m).unwrap();
        loss_err = loss_err.max((l - loop_loss(&est, &s, mh.data(), m.data())).abs());
        zero_ok &= loss_fn(&s, &s, &m, &m).unwrap() == 0.0;
        let v = si_snr(&est, &s).unwrap();
        snr_err = snr_err.max((v - loop_si_snr(&est, &s)).abs());
        let scale = rng.random_range(0.1..10.0f32);
        let s2: Vec<f32> = s.iter().map(|x| x * scale).collect();
        scale_err = scale_err.max((si_snr(&est, &s2).unwrap() - v).abs());
    }
    let ident = si_snr(&[0.5, -0.25, 1.0], &[0.5, -0.25, 1.0]).unwrap();
    let x = Spectrogram::new(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
    let tm_ok = target_mask(&x, &x).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-6);
    pass(
        loss_err <= 1e-6 && snr_err <= 1e-4 && scale_err <= 1e-4 && zero_ok && ident == 120.0 && tm_ok,
        format!(
            "50 pairs: loss vs oracle {loss_err:.1e}, SI-SNR vs oracle {snr_err:.1e} dB, \
             target rescale drift {scale_err:.1e} dB, loss(s,s)=0 {zero_ok}, SI-SNR(s,s)={ident}"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let cfg = ModelConfig::full();
    let model = Model::new(cfg.clone(), &init_weights(&cfg, 9)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let x = Waveform::new(noise(&mut rng, 16000)).unwrap();
    let tr = model.forward_trace(&x).unwrap();
    let got = (
        tr.stacked.dims(),
        tr.bottleneck.dims(),
        tr.mask.shape(),
        tr.enhanced.len(),
    );
    let want = ((4, 512, 122), (128, 16, 122), (512, 122), 16000);
    pass(
        got == want,
        format!(
            "X~ {:?}, bottleneck {:?}, mask {:?}, output {} samples",
            got.0, got.1, got.2, got.3
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("parameter count vs 2.61 M (+/-40%)", criterion_1, Duration::from_secs(5)),
        ("algorithmic delay == 512 samples", criterion_2, Duration::from_secs(10)),
        ("STDCT round trip and orthonormality", criterion_3, Duration::from_secs(30)),
        ("pseudo-frame support identity", criterion_4, Duration::from_secs(10)),
        ("attention invariants", criterion_5, Duration::from_secs(30)),
        ("end-to-end causality", criterion_6, Duration::from_secs(300)),
        ("streaming == offline, bit-exact", criterion_7, Duration::from_secs(120)),
        ("loss / SI-SNR oracles", criterion_8, Duration::from_secs(10)),
        ("shape pipeline for 1 s input", criterion_9, Duration::from_secs(10)),
    ];
    let mut all = true;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = run();
        let dt = t0.elapsed();
        let ok = out.ok && dt <= *budget;
        all &= ok;
        println!(
            "[{}] criterion {}: {name} ({:.2} s / {} s budget): {}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            dt.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
