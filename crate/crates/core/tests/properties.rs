use std::sync::OnceLock;

use proptest::prelude::*;

use ofif::model::{init_weights, read_weights, write_weights, Model, ModelConfig};
use ofif::stdct::{istdct_ola, stdct, Waveform};
use ofif::stream::StreamState;
use ofif::wav::decode_wav;

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = ModelConfig::compact();
        Model::new(cfg.clone(), &init_weights(&cfg, 11)).unwrap()
    })
}

fn signal(len: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_chunk_partition_gives_the_same_stream(
        len in 520usize..1400,
        seed in any::<u64>(),
        cuts in proptest::collection::vec(1usize..300, 1..12),
    ) {
        let x = signal(len, seed);
        let mut whole = StreamState::new(model()).unwrap();
        let mut reference = whole.push(model(), &x).unwrap();
        reference.extend(whole.flush(model()).unwrap());

        let mut st = StreamState::new(model()).unwrap();
        let mut out = Vec::new();
        let mut pos = 0;
        for c in cuts.iter().cycle() {
            if pos >= x.len() {
                break;
            }
            let end = (pos + c).min(x.len());
            out.extend(st.push(model(), &x[pos..end]).unwrap());
            prop_assert!(st.emitted() <= st.consumed());
            pos = end;
        }
        out.extend(st.flush(model()).unwrap());
        prop_assert_eq!(out.len(), x.len());
        prop_assert!(out.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip_is_linear(len in 1024usize..3000, seed in any::<u64>(), a in -4.0f32..4.0) {
        let x = signal(len, seed);
        let y = signal(len, seed ^ 1);
        let mix: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let run = |v: &[f32]| {
            let spec = stdct(&Waveform::new(v.to_vec()).unwrap()).unwrap();
            let covered = 512 + (spec.frames() - 1) * 128;
            istdct_ola(&spec, covered).unwrap().into_samples()
        };
        let (rx, ry, rm) = (run(&x), run(&y), run(&mix));
        for i in 512..rx.len() - 512 {
            prop_assert!((rm[i] - (a * rx[i] + ry[i])).abs() <= 1e-4);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn weight_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = read_weights(&bytes);
    }

    #[test]
    fn weight_parser_survives_corrupted_files(pos in any::<prop::sample::Index>(), val in any::<u8>(), cut in any::<prop::sample::Index>()) {
        let cfg = ModelConfig::compact();
        let mut bytes = write_weights(&init_weights(&cfg, 2)).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] = val;
        let _ = read_weights(&bytes);
        bytes.truncate(cut.index(bytes.len()));
        prop_assert!(read_weights(&bytes).is_err() || bytes.is_empty());
    }

    #[test]
    fn config_parser_never_panics(text in "\\PC{0,200}") {
        if let Ok(cfg) = ModelConfig::from_json(&text) {
            let _ = cfg.validate();
        }
    }

    #[test]
    fn config_json_round_trips(mode in prop_oneof![Just("offline"), Just("cumulative")], k_t in 1usize..40) {
        let text = format!(r#"{{"k_t": {k_t}, "attention": "{mode}"}}"#);
        let cfg = ModelConfig::from_json(&text).unwrap();
        prop_assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn wav_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
        let mut data = b"RIFF\x00\x00\x00\x00WAVEfmt ".to_vec();
        data.extend(bytes);
        let _ = decode_wav(std::io::Cursor::new(data));
    }
}
