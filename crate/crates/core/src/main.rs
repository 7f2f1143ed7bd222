use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};

use ofif::model::{
    init_weights, load_weights, loss_parts, param_breakdown, save_weights, si_snr, target_mask,
    weights, write_weights, Model, ModelConfig,
};
use ofif::stdct::{stdct, Waveform, ALGORITHMIC_DELAY, WINDOW};
use ofif::stream::{verify_causality, StreamState};
use ofif::tfca::AttentionMode;
use ofif::wav::{read_wav, write_wav};
use ofif::{Error, SAMPLE_RATE};

const EXIT_FAIL: u8 = 1;
const EXIT_AUDIO: u8 = 2;
const EXIT_WEIGHTS: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "ofif", version, about = "Causal DCT-domain speech enhancement")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enhance a file offline
    Enhance(EnhanceArgs),
    /// Enhance a file chunk by chunk through the streaming engine
    Stream(StreamArgs),
    /// Check end-to-end causality on seeded random input pairs
    Verify(VerifyArgs),
    /// Weight file tools
    #[command(subcommand)]
    Weights(WeightsCmd),
    /// SI-SNR and loss terms between an estimate and a reference
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Offline,
    Cumulative,
}

impl From<Mode> for AttentionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Offline => AttentionMode::Offline,
            Mode::Cumulative => AttentionMode::Cumulative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Compact,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::full(),
            Preset::Compact => ModelConfig::compact(),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    weights: PathBuf,
    /// config JSON; defaults to the weights path with a .json extension
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// override the attention mode from the config
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    chunk_ms: u32,
    #[arg(long)]
    report_latency: bool,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["weights", "random_seed"])))]
struct VerifyArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    /// build a seeded random model instead of loading weights
    #[arg(long)]
    random_seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// configuration for --random-seed when --config is absent
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// input length in frames
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(2..))]
    frames: u32,
    /// seed of the first trial's input pair
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum WeightsCmd {
    /// Write a seeded random weight file and its config sidecar
    Init {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
    },
    /// List tensors and shapes
    Inspect { path: PathBuf },
    /// Print the parameter count with a per-module breakdown
    ParamCount {
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// noisy mixture the masks are taken against; defaults to the reference
    #[arg(long)]
    noisy: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Audio(_) | Error::TooShort { .. } => EXIT_AUDIO,
            Error::InvalidWeights(_)
            | Error::MissingTensor(_)
            | Error::UnexpectedTensor(_)
            | Error::TensorShape { .. }
            | Error::Truncated { .. }
            | Error::Malformed { .. }
            | Error::InvalidConfig(_)
            | Error::Json(_) => EXIT_WEIGHTS,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_FAIL,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.msg = format!("{}: {}", path.display(), f.msg);
        f
    }
}

fn load_config(path: &Path) -> Result<ModelConfig, Failure> {
    ModelConfig::load(path).map_err(with_path(path))
}

fn load_model(args: &ModelArgs, mode: Option<Mode>) -> Result<Model, Failure> {
    let cfg_path = args
        .config
        .clone()
        .unwrap_or_else(|| weights::sidecar_path(&args.weights));
    let mut cfg = load_config(&cfg_path)?;
    if let Some(m) = mode {
        cfg.attention = m.into();
    }
    let w = load_weights(&args.weights).map_err(with_path(&args.weights))?;
    let model = Model::new(cfg, &w).map_err(with_path(&args.weights))?;
    debug!("loaded {} ({} params)", args.weights.display(), model.param_count());
    Ok(model)
}

fn read_input(path: &Path) -> Result<Waveform, Failure> {
    read_wav(path).map_err(with_path(path))
}

fn cmd_enhance(a: EnhanceArgs) -> CmdResult {
    let model = load_model(&a.model, a.mode)?;
    let wave = read_input(&a.input)?;
    let t0 = Instant::now();
    let (out, mask) = model.forward(&wave)?;
    let elapsed = t0.elapsed();
    write_wav(&a.output, out.samples()).map_err(with_path(&a.output))?;
    let m = mask.data();
    let mean = m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64;
    let (lo, hi) = m
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (bins, frames) = mask.shape();
    println!("mask: {bins}x{frames} min {lo:.4} max {hi:.4} mean {mean:.4}");
    println!(
        "enhanced {} samples in {:.3} s ({:?} attention)",
        out.len(),
        elapsed.as_secs_f64(),
        model.mode()
    );
    Ok(())
}

fn cmd_stream(a: StreamArgs) -> CmdResult {
    let model = load_model(&a.model, None)?;
    let wave = read_input(&a.input)?;
    let chunk = (a.chunk_ms as usize * SAMPLE_RATE as usize) / 1000;
    let mut st = StreamState::new(&model)?;
    let mut out = Vec::with_capacity(wave.len());
    let t0 = Instant::now();
    for c in wave.samples().chunks(chunk.max(1)) {
        out.extend(st.push(&model, c)?);
    }
    out.extend(st.flush(&model)?);
    info!("streamed {} samples in {:.3} s", out.len(), t0.elapsed().as_secs_f64());
    write_wav(&a.output, &out).map_err(with_path(&a.output))?;
    if a.report_latency {
        match st.algorithmic_delay() {
            Some(d) => println!("algorithmic delay: {:.1} ms", d as f64 * 1000.0 / SAMPLE_RATE as f64),
            None => println!("algorithmic delay: n/a (input shorter than one window)"),
        }
        if let Some(lag) = st.max_emission_lag() {
            println!(
                "max emission lag: {:.1} ms at {} ms chunks",
                lag as f64 * 1000.0 / SAMPLE_RATE as f64,
                a.chunk_ms
            );
        }
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let model = match (&a.weights, a.random_seed) {
        (Some(w), _) => load_model(
            &ModelArgs {
                weights: w.clone(),
                config: a.config.clone(),
            },
            a.mode,
        )?,
        (None, Some(seed)) => {
            let mut cfg = match &a.config {
                Some(p) => load_config(p)?,
                None => a.preset.config(),
            };
            if let Some(m) = a.mode {
                cfg.attention = m.into();
            }
            let w = init_weights(&cfg, seed);
            Model::new(cfg, &w)?
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let len = WINDOW + (a.frames as usize - 1) * ofif::stdct::HOP;
    let mut passed = 0;
    for i in 0..a.trials as u64 {
        let seed = a.seed + i;
        let split = split_for(seed, len);
        let r = verify_causality(&model, seed, split, len)?;
        if r.passed {
            passed += 1;
            info!("{r}");
        } else {
            println!("{r}");
        }
    }
    println!(
        "{passed}/{} trials passed ({:?} attention, delay budget {} samples)",
        a.trials,
        model.mode(),
        ALGORITHMIC_DELAY
    );
    if passed == a.trials {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAIL,
            msg: format!("{} causality trial(s) failed", a.trials - passed),
        })
    }
}

/// Split point for a trial, spread over `[W, len)` by a fixed hash of the seed.
fn split_for(seed: u64, len: usize) -> usize {
    let h = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    WINDOW + (h % (len - WINDOW) as u64) as usize
}

fn cmd_weights(c: WeightsCmd) -> CmdResult {
    match c {
        WeightsCmd::Init {
            seed,
            out,
            config,
            preset,
        } => {
            let cfg = match &config {
                Some(p) => load_config(p)?,
                None => preset.config(),
            };
            let w = init_weights(&cfg, seed);
            save_weights(&w, &out).map_err(with_path(&out))?;
            let side = weights::sidecar_path(&out);
            cfg.save(&side).map_err(with_path(&side))?;
            println!(
                "wrote {} tensors ({} values) to {} and config to {}",
                w.len(),
                w.total_params(),
                out.display(),
                side.display()
            );
        }
        WeightsCmd::Inspect { path } => {
            let w = load_weights(&path).map_err(with_path(&path))?;
            for t in w.iter() {
                println!("{:<32} {:?} {}", t.name, t.dims, t.numel());
            }
            println!("{} tensors, {} values, {} bytes", w.len(), w.total_params(), write_weights(&w)?.len());
        }
        WeightsCmd::ParamCount { path, config } => {
            let side = config.unwrap_or_else(|| weights::sidecar_path(&path));
            let cfg = if side.exists() {
                load_config(&side)?
            } else {
                ModelConfig::full()
            };
            let w = load_weights(&path).map_err(with_path(&path))?;
            weights::validate(&cfg, &w).map_err(with_path(&path))?;
            println!("{}", param_breakdown(&cfg));
        }
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let est = read_input(&a.est)?;
    let reference = read_input(&a.reference)?;
    let noisy = match &a.noisy {
        Some(p) => read_input(p)?,
        None => reference.clone(),
    };
    if est.len() != reference.len() || noisy.len() != reference.len() {
        return Err(Error::LengthMismatch(est.len(), reference.len()).into());
    }
    let snr = si_snr(est.samples(), reference.samples())?;
    println!("si-snr: {snr:.4} dB");
    if reference.len() < WINDOW {
        println!("loss: l1 n/a (signal shorter than one window)");
        return Ok(());
    }
    let x = stdct(&noisy)?;
    let mask = target_mask(&stdct(&reference)?, &x)?;
    let est_mask = target_mask(&stdct(&est)?, &x)?;
    let p = loss_parts(est.samples(), reference.samples(), &est_mask, &mask)?;
    println!(
        "loss: l1 {:.6e} mask_mse {:.6e} total {:.6e}",
        p.l1,
        p.mask_mse,
        p.total()
    );
    Ok(())
}

fn init_logging() {
    let level = match std::env::var("OFIF_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("trace") => log::LevelFilter::Trace,
        _ => log::LevelFilter::Warn,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("usage error");
            eprintln!("ERR:{EXIT_USAGE}: {}", first.trim_start_matches("error: "));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let res = match cli.cmd {
        Cmd::Enhance(a) => cmd_enhance(a),
        Cmd::Stream(a) => cmd_stream(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Weights(c) => cmd_weights(c),
        Cmd::Metrics(a) => cmd_metrics(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ERR:{}: {}", f.code, f.msg.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
