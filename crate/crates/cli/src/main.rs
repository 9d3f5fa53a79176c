use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use phaserep::estimation::write_cost_trace;
use phaserep::model::write_params;
use phaserep::pipeline::{
    estimate_onsets, format_onset_errors_csv, format_sweep_csv, separate, sigma_sweep, OnsetErrorRow, OnsetMethod,
    SeparationConfig, SeparationMethod, DEFAULT_SIGMAS,
};
use phaserep::synth::{generate_dataset, DatasetConfig, DatasetKind, DatasetTruth, ModelBuiltConfig};
use phaserep::wav::write_wav;

mod config;
mod items;

use config::{Overrides, Settings, OUT_DIR_ENV};
use items::{items_in_dir, Item, OnsetSource, Sidecar};

#[derive(Parser, Debug)]
#[command(name = "phaserep", version, about = "Onset phase recovery and separation of repeated notes")]
struct Cli {
    /// Key-value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $PHASEREP_OUT_DIR, then ./phaserep-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    sample_rate: Option<f64>,
    #[arg(long, global = true)]
    window_length: Option<usize>,
    #[arg(long, global = true)]
    hop: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a batch of mixtures with JSON truth.
    Synth(SynthArgs),
    /// Estimate onset phases with oracle magnitudes.
    Estimate(EstimateArgs),
    /// Separate mixtures and score them against the truth.
    Separate(SeparateArgs),
    /// Sweep sigma and methods over a directory of items.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
struct EstimationFlags {
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// first_onset, matched_filter or random:SEED
    #[arg(long)]
    init: Option<String>,
    /// Return the lowest-cost iterate instead of the last one.
    #[arg(long)]
    keep_best: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// A, B, C, or model for model-built onset matrices.
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sources of a model-built item.
    #[arg(long, default_value_t = 2)]
    sources: usize,
    /// Frequency bins of a model-built item.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Onsets of a model-built item.
    #[arg(long, default_value_t = 3)]
    onsets: usize,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum EstimateMethod {
    Strict,
    Relaxed,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Mixture WAVs or their sidecars.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "relaxed")]
    method: EstimateMethod,
    /// oracle, auto, or a file with one frame index per line.
    #[arg(long, default_value = "oracle")]
    onsets: OnsetSource,
    #[command(flatten)]
    est: EstimationFlags,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SeparateMethod {
    Repu,
    Wiener,
}

#[derive(Args, Debug)]
struct SeparateArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "repu")]
    method: SeparateMethod,
    /// Expected number of sources; a different count in the truth is an error.
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long, default_value = "oracle")]
    onsets: OnsetSource,
    #[command(flatten)]
    est: EstimationFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory of items written by `synth`.
    dir: PathBuf,
    /// Comma-separated sigma grid.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[command(flatten)]
    est: EstimationFlags,
}

fn settings(cli: &Cli, est: Option<&EstimationFlags>) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        s.apply_file(&text).with_context(|| format!("in {}", path.display()))?;
    }
    let est = est.map(|e| (e.sigma, e.iters, e.init.clone(), e.keep_best));
    let (sigma, iterations, init, keep_best) = est.unwrap_or_default();
    s.apply_overrides(&Overrides {
        sample_rate: cli.sample_rate,
        window_length: cli.window_length,
        hop: cli.hop,
        iterations,
        sigma,
        init,
        keep_best,
        out_dir: cli.out.clone(),
    })?;
    Ok(s)
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s.resolve_out_dir(std::env::var(OUT_DIR_ENV).ok());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(s: &Settings, args: &SynthArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be positive");
    }
    let dir = out_dir(s)?;
    let name = |i: usize| dir.join(format!("item_{i:03}"));
    if args.dataset.eq_ignore_ascii_case("model") {
        let config = ModelBuiltConfig::new(args.sources, args.bins, args.onsets);
        for i in 0..args.count {
            let seed = args.seed + i as u64;
            // generated once so a bad configuration fails before anything is written
            phaserep::synth::make_model_built(&config, seed)?;
            Sidecar::ModelBuilt { config, seed }.write(&name(i).with_extension("json"))?;
        }
        return Ok(());
    }
    let kind: DatasetKind = args.dataset.parse()?;
    let cfg = DatasetConfig::new(kind);
    let stft = s.stft(s.sample_rate)?;
    let mut batch = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = args.seed + i as u64;
        let d = generate_dataset(&cfg, &stft, seed)?;
        let truth = DatasetTruth::new(&cfg, seed, &stft, &d);
        batch.push((d.mixture, truth));
    }
    for (i, (mixture, truth)) in batch.into_iter().enumerate() {
        write_wav(name(i).with_extension("wav"), &mixture, s.sample_rate)?;
        Sidecar::Dataset(truth).write(&name(i).with_extension("json"))?;
    }
    Ok(())
}

fn cmd_estimate(s: &Settings, args: &EstimateArgs) -> Result<()> {
    let method = match args.method {
        EstimateMethod::Strict => OnsetMethod::Strict,
        EstimateMethod::Relaxed => OnsetMethod::Relaxed,
    };
    if method == OnsetMethod::Strict && s.sigma_set {
        log::warn!("sigma is ignored by the strict estimator");
    }
    let cfg = s.estimation()?;
    let items = args.inputs.iter().map(|p| Item::load(p)).collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::with_capacity(items.len());
    let mut rows = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let problem = item.onset_problem(s, &args.onsets)?;
        let est = estimate_onsets(&problem, method, &cfg)?;
        rows.push(OnsetErrorRow {
            dataset: item.sidecar.dataset_name().to_string(),
            item: i,
            method,
            sigma: if method == OnsetMethod::Strict { f64::NAN } else { cfg.sigma },
            error: est.error,
        });
        outputs.push(est.estimation.expect("model-based methods return their parameters"));
    }
    let dir = out_dir(s)?;
    for (item, result) in items.iter().zip(&outputs) {
        let base = format!("{}.{}", item.stem, method.name());
        write_params(dir.join(format!("{base}.params")), &result.params)?;
        write_cost_trace(dir.join(format!("{base}.trace.csv")), &result.cost_trace)?;
    }
    write(&dir.join("onset_errors.csv"), &format_onset_errors_csv(&rows))
}

fn cmd_separate(s: &Settings, args: &SeparateArgs) -> Result<()> {
    let method = match args.method {
        SeparateMethod::Repu => SeparationMethod::Repu,
        SeparateMethod::Wiener => SeparationMethod::Wiener,
    };
    let cfg = SeparationConfig {
        estimation: s.estimation()?,
        ..SeparationConfig::default()
    };
    let items = args.inputs.iter().map(|p| Item::load(p)).collect::<Result<Vec<_>>>()?;
    if let Some(k) = args.sources {
        if let Some(bad) = items.iter().find(|it| it.sidecar.num_sources() != k) {
            bail!(
                "{}: truth has {} sources but {k} were requested",
                bad.stem,
                bad.sidecar.num_sources()
            );
        }
    }
    let mut results = Vec::with_capacity(items.len());
    for item in &items {
        let problem = item.separation_problem(s, &args.onsets)?;
        let rate = problem.mixture.config().sample_rate;
        results.push((separate(&problem, method, &cfg)?, rate));
    }
    let dir = out_dir(s)?;
    let mut csv = String::from("item,dataset,method,source,sdr,sir,sar\n");
    for (item, (out, rate)) in items.iter().zip(&results) {
        for (k, (signal, sc)) in out.estimates.iter().zip(&out.scores.per_source).enumerate() {
            let path = dir.join(format!("{}.{}.src{k}.wav", item.stem, method.name()));
            write_wav(path, signal, *rate)?;
            let _ = writeln!(
                csv,
                "{},{},{},{k},{:.6},{:.6},{:.6}",
                item.stem,
                item.sidecar.dataset_name(),
                method.name(),
                sc.sdr,
                sc.sir,
                sc.sar
            );
        }
    }
    write(&dir.join(format!("scores.{}.csv", method.name())), &csv)
}

fn cmd_bench(s: &Settings, args: &BenchArgs) -> Result<()> {
    let items = items_in_dir(&args.dir)?;
    let problems = items
        .iter()
        .map(|it| it.onset_problem(s, &OnsetSource::Oracle))
        .collect::<Result<Vec<_>>>()?;
    let sigmas = args.sigmas.clone().unwrap_or_else(|| DEFAULT_SIGMAS.to_vec());
    let rows = sigma_sweep(&problems, &sigmas, &s.estimation()?)?;
    let csv = format_sweep_csv(&rows);
    write(&out_dir(s)?.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let usage = !matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) && !e.to_string().contains("Usage:");
        let _ = e.print();
        if usage {
            eprintln!("\n{}", Cli::command().render_usage());
        }
        std::process::exit(e.exit_code());
    });
    match &cli.command {
        Command::Synth(a) => cmd_synth(&settings(&cli, None)?, a),
        Command::Estimate(a) => cmd_estimate(&settings(&cli, Some(&a.est))?, a),
        Command::Separate(a) => cmd_separate(&settings(&cli, Some(&a.est))?, a),
        Command::Bench(a) => cmd_bench(&settings(&cli, Some(&a.est))?, a),
    }
}
