use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfae_autodiff::{ExecMode, Tensor};
use sfae_core::freq::{band_boundaries, band_energy, decompose};
use sfae_core::kv::KeyValues;
use sfae_core::net::{init_params, NetConfig};
use sfae_core::pipeline::enhance;
use sfae_core::rawio::{
    entropy, histogram, load_raw, normalize_pack, save_raw, skewness, synthesize_raw, unpack, write_image, BayerFrame,
    BayerPattern, NoiseParams, NormalizeMode, DEFAULT_BLACK_LEVEL, DEFAULT_WHITE_LEVEL,
};
use sfae_core::train::{
    load_checkpoint, save_checkpoint, sweep, write_metrics_csv, write_sweep_csv, TensorFile, TrainConfig, Trainer,
};
use sfae_core::verify::gradient_suite;

const USAGE_EXIT: u8 = 2;

#[derive(Parser)]
#[command(name = "sfae", version, about = "Spatial-frequency aware RAW enhancement")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a RAW frame into radial frequency band maps.
    Decompose(DecomposeArgs),
    /// Run a checkpoint over a RAW frame.
    Enhance(EnhanceArgs),
    /// Train on synthetic low-light data.
    Train(TrainArgs),
    /// Finite-difference check of every differentiable op and the full network.
    Gradcheck(GradcheckArgs),
    /// Histograms, entropy and skewness for one image or a before/after pair.
    Hist(HistArgs),
    /// Parameter count and forward latency.
    Bench(BenchArgs),
    /// Write a synthetic low-light RAW frame and its sidecar.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=16))]
    bands: u32,
    #[arg(long, default_value_t = 0.5)]
    fmax: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    bands: Option<usize>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long, conflicts_with_all = ["config", "seed", "bands"])]
    resume: Option<PathBuf>,
    /// Train once per listed band count; `--out` is then a directory.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["resume", "bands", "metrics"])]
    sweep: Vec<usize>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Coordinates probed per tensor in the full-network check.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    coords: u32,
}

#[derive(Args)]
struct HistArgs {
    /// RAW frame, or an `.sfae` enhancement dump.
    #[arg(long)]
    input: PathBuf,
    /// Sidecar for a RAW `--input`.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Second image for a side-by-side comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    compare_meta: Option<PathBuf>,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(2..))]
    bins: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=16))]
    bands: u32,
    /// Packed side length.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
    runs: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 0.1)]
    exposure: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write a flat frame at this normalized level instead of a scene.
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    meta: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let result = match cli.command {
        Command::Decompose(a) => cmd_decompose(a, mode),
        Command::Enhance(a) => cmd_enhance(a, mode),
        Command::Train(a) => cmd_train(a, mode),
        Command::Gradcheck(a) => cmd_gradcheck(a, mode),
        Command::Hist(a) => cmd_hist(a),
        Command::Bench(a) => cmd_bench(a, mode),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// The cause chain, dropping links already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.last().is_some_and(|prev| prev.contains(&msg)) {
            out.push(msg);
        }
    }
    out.join(": ")
}

fn usage_error(msg: &str) -> ExitCode {
    let _ = Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, msg)
        .print();
    ExitCode::from(USAGE_EXIT)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Mosaic plane `[2h, 2w]` of a packed `[1, 4, h, w]` tensor.
fn mosaic(packed: &Tensor, pattern: BayerPattern) -> Result<Tensor> {
    let m = unpack(packed, pattern)?;
    let (h, w) = (m.shape()[2], m.shape()[3]);
    Ok(m.reshape(&[h, w])?)
}

fn cmd_decompose(a: DecomposeArgs, mode: ExecMode) -> Result<ExitCode> {
    if !(a.fmax > 0.0 && a.fmax.is_finite()) {
        return Ok(usage_error("--fmax must be positive"));
    }
    let frame = load_raw(&a.input, &a.meta)?;
    let packed = normalize_pack(&frame).tensor;
    let spec = band_boundaries(a.bands as usize, a.fmax)?;
    let maps = decompose(&packed, &spec, mode)?;
    let energy = band_energy(&packed, &spec, mode)?;

    let err = maps
        .sum()
        .data()
        .iter()
        .zip(packed.data())
        .map(|(s, x)| (s - x).abs())
        .fold(0.0, f64::max);

    create_dir(&a.out)?;
    for (i, m) in maps.maps().iter().enumerate() {
        let path = a.out.join(format!("band_{:02}.pgm", i + 1));
        write_image(&mosaic(m, frame.pattern())?, &path, NormalizeMode::MinMax)?;
    }
    let total: f64 = energy.iter().sum();
    let mut csv = String::from("band,energy,fraction\n");
    for (i, e) in energy.iter().enumerate() {
        let frac = if total > 0.0 { e / total } else { 0.0 };
        csv.push_str(&format!("{},{e:e},{frac:e}\n", i + 1));
    }
    write_file(&a.out.join("energy.csv"), csv)?;
    write_file(&a.out.join("reconstruction_error.txt"), format!("{err:e}\n"))?;
    info!("{} bands, reconstruction error {err:e}", spec.n_bands());
    Ok(ExitCode::SUCCESS)
}

fn cmd_enhance(a: EnhanceArgs, mode: ExecMode) -> Result<ExitCode> {
    let frame = load_raw(&a.input, &a.meta)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let packed = normalize_pack(&frame).tensor;
    let out = enhance(&packed, &ckpt.params, &ckpt.net, mode)?;

    create_dir(&a.out)?;
    write_image(
        &mosaic(&out.enhanced, frame.pattern())?,
        &a.out.join("enhanced.pgm"),
        NormalizeMode::Clamp01,
    )?;

    let mut config = KeyValues::default();
    config.insert("kind", "enhanced");
    config.insert("pattern", frame.pattern().as_str());
    ckpt.net.write_kv(&mut config);
    let dump = TensorFile {
        config,
        records: vec![
            ("enhanced".into(), out.enhanced.clone()),
            ("enhanced_orig".into(), out.enhanced_orig),
            ("enhanced_band_sum".into(), out.enhanced_band_sum),
        ],
    };
    dump.save(&a.out.join("enhanced.sfae"))?;

    let c = ckpt.net.in_channels;
    let mut csv = String::from("branch,band,channel,gamma\n");
    for (ch, g) in out.gamma_orig.data().iter().enumerate() {
        csv.push_str(&format!("orig,0,{ch},{g}\n"));
    }
    for (k, g) in out.gamma_freq.data().iter().enumerate() {
        csv.push_str(&format!("freq,{},{},{g}\n", k / c + 1, k % c));
    }
    write_file(&a.out.join("gammas.csv"), csv)?;
    info!("enhanced {}x{} frame", frame.width(), frame.height());
    Ok(ExitCode::SUCCESS)
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(TrainConfig::parse_file_text(&text).with_context(|| format!("in {}", path.display()))?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn cmd_sweep(a: TrainArgs, mode: ExecMode) -> Result<ExitCode> {
    let mut cfg = load_train_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    for &n in &a.sweep {
        TrainConfig { n_bands: n, ..cfg.clone() }.validate()?;
    }
    create_dir(&a.out)?;
    let mut failure = None;
    let runs = sweep(&cfg, &a.sweep, mode, |r| {
        info!(
            "N = {:2}: l1 {:.5} -> {:.5}, entropy {:.3} -> {:.3} bits",
            r.n_bands, r.before.l1, r.after.l1, r.before.raw_entropy, r.after.enhanced_entropy
        );
        let mut buf = Vec::new();
        let written = write_metrics_csv(&r.log, &mut buf)
            .map_err(anyhow::Error::from)
            .and_then(|_| write_file(&a.out.join(format!("metrics_n{:02}.csv", r.n_bands)), buf))
            .and_then(|_| Ok(save_checkpoint(&r.checkpoint, &a.out.join(format!("checkpoint_n{:02}.sfae", r.n_bands)))?));
        if let Err(e) = written {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut buf = Vec::new();
    write_sweep_csv(&runs, &mut buf)?;
    write_file(&a.out.join("sweep.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs, mode: ExecMode) -> Result<ExitCode> {
    if !a.sweep.is_empty() {
        return cmd_sweep(a, mode);
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if let Some(steps) = a.steps {
                ckpt.train.steps = steps;
            }
            Trainer::resume(ckpt, mode)?
        }
        None => {
            let mut cfg = load_train_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            if let Some(n) = a.bands {
                cfg.n_bands = n;
            }
            Trainer::new(cfg, mode)?
        }
    };
    let cfg = trainer.config().clone();
    info!(
        "training seed {} for {} steps, N = {}, {} images at {}x{}",
        cfg.seed,
        cfg.steps,
        cfg.n_bands,
        cfg.dataset_size,
        cfg.image_size,
        cfg.image_size
    );
    let before = trainer.evaluate()?;
    let log = trainer.run(|m| {
        if m.step % 25 == 0 || m.step == cfg.steps {
            info!("step {:4} loss {:.5} l1 {:.5} H {:.3}", m.step, m.loss, m.l1, m.entropy_bits);
        }
    })?;
    let after = trainer.evaluate()?;
    save_checkpoint(&trainer.checkpoint(), &a.out)?;
    if let Some(path) = &a.metrics {
        let mut buf = Vec::new();
        write_metrics_csv(&log, &mut buf)?;
        write_file(path, buf)?;
    }
    println!("l1 {:.6} -> {:.6}", before.l1, after.l1);
    println!("entropy_bits {:.4} -> {:.4}", before.raw_entropy, after.enhanced_entropy);
    println!("abs_skewness {:.4} -> {:.4}", before.raw_abs_skewness, after.enhanced_abs_skewness);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs, mode: ExecMode) -> Result<ExitCode> {
    let start = Instant::now();
    let suite = gradient_suite(a.seed, a.coords as usize, mode)?;
    let width = suite.iter().map(|e| e.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for e in &suite {
        let status = if e.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!e.passed());
        println!(
            "{:<width$}  {status:<4}  max_rel_err {:.3e}  checked {:4}  excluded {}",
            e.name,
            e.report.max_rel_err,
            e.report.checked,
            e.report.excluded.len()
        );
    }
    println!(
        "{} checks, {failed} failed, {:.1}s",
        suite.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// A `[1, C, H, W]` image in `[0, 1]`: packed RAW, or the `enhanced` record of a dump.
fn load_image(path: &Path, meta: Option<&Path>) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "sfae") {
        let file = TensorFile::load(path)?;
        return match file.get("enhanced") {
            Some(t) => Ok(t.clone()),
            None => bail!("{} has no `enhanced` record", path.display()),
        };
    }
    let Some(meta) = meta else {
        bail!("{} needs a metadata sidecar", path.display());
    };
    Ok(normalize_pack(&load_raw(path, meta)?).tensor)
}

fn cmd_hist(a: HistArgs) -> Result<ExitCode> {
    let raw_input = |p: &Path| !p.extension().is_some_and(|e| e == "sfae");
    if raw_input(&a.input) && a.meta.is_none() {
        return Ok(usage_error("a RAW --input needs --meta"));
    }
    if let Some(c) = &a.compare {
        if raw_input(c) && a.compare_meta.is_none() {
            return Ok(usage_error("a RAW --compare needs --compare-meta"));
        }
    }
    let mut images = vec![("input", load_image(&a.input, a.meta.as_deref())?)];
    if let Some(c) = &a.compare {
        images.push(("compare", load_image(c, a.compare_meta.as_deref())?));
    }

    create_dir(&a.out)?;
    let mut summary = String::from("image,entropy_bits,skewness\n");
    let mut entropies = Vec::new();
    for (name, img) in &images {
        let hist = histogram(img, a.bins as usize)?;
        let mut buf = Vec::new();
        hist.write_csv(&mut buf)?;
        write_file(&a.out.join(format!("hist_{name}.csv")), buf)?;
        let h = entropy(&hist.pooled())?;
        let clamped: Vec<f64> = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let s = skewness(&clamped);
        summary.push_str(&format!("{name},{h},{s}\n"));
        println!("{name:<8} entropy {h:.4} bits  skewness {s:.4}");
        entropies.push(h);
    }
    if let [h0, h1] = entropies[..] {
        summary.push_str(&format!("delta_entropy_bits,{},\n", h1 - h0));
        println!("delta entropy {:+.4} bits", h1 - h0);
    }
    write_file(&a.out.join("summary.csv"), summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs, mode: ExecMode) -> Result<ExitCode> {
    let cfg = NetConfig {
        n_bands: a.bands as usize,
        height: a.size,
        width: a.size,
        ..NetConfig::default()
    };
    cfg.validate()?;
    let params = init_params(&cfg, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let input = Tensor::from_fn(&[1, cfg.in_channels, a.size, a.size], |_| rng.random_range(0.01..1.0));

    enhance(&input, &params, &cfg, mode)?;
    let start = Instant::now();
    for _ in 0..a.runs {
        enhance(&input, &params, &cfg, mode)?;
    }
    let mean = start.elapsed().as_secs_f64() / a.runs as f64;
    println!("parameters {}", params.param_count());
    println!(
        "forward latency {:.3} ms mean over {} runs ({}x{}x{}x{}, N = {})",
        mean * 1e3,
        a.runs,
        1,
        cfg.in_channels,
        a.size,
        a.size,
        cfg.n_bands
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let frame = match a.constant {
        Some(level) => {
            if !(0.0..=1.0).contains(&level) {
                return Ok(usage_error("--constant must lie in [0, 1]"));
            }
            let (black, white) = (DEFAULT_BLACK_LEVEL, DEFAULT_WHITE_LEVEL);
            let v = black as f64 + level * (white - black) as f64;
            let samples = vec![v.round() as u16; a.width * a.height];
            BayerFrame::new(a.width, a.height, samples, BayerPattern::Rggb, black, white)?
        }
        None => synthesize_raw(a.seed, a.width, a.height, a.exposure, NoiseParams::default())?.0,
    };
    save_raw(&frame, &a.out, &a.meta)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "wrote {} ({}x{})", a.out.display(), a.width, a.height)?;
    Ok(ExitCode::SUCCESS)
}
