//! Command-line front end: `run` a single experiment, `sweep` a parameter
//! grid, or `synth` a block-structured interaction stream to play with.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamrec::config::{parse_grid_axis, ExperimentConfig};
use streamrec::error::Result;
use streamrec::experiment;
use streamrec::synthetic::{self, SyntheticConfig};

#[derive(Parser)]
#[command(
    name = "streamrec",
    version,
    about = "Streaming recommender with reservoir-based incremental training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.jsonl / summary.json / resolved_config.
    Run(RunArgs),
    /// Run the cartesian product of --grid axes, one subdirectory per point.
    Sweep(SweepArgs),
    /// Generate a synthetic interaction stream as CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set sampler.delta=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep only this many randomly chosen users after activity filtering.
    #[arg(long, value_name = "N")]
    sample_users: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for assignment in &self.set {
            let (key, value) = assignment.split_once('=').ok_or_else(|| {
                streamrec::error::Error::config(format!(
                    "--set expects KEY=VALUE, got `{assignment}`"
                ))
            })?;
            config.apply_set(key, value)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.sample_users {
            config.dataset.sample_users = Some(n);
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (defaults to the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output root; each grid point writes to a subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid axis, e.g. --grid model.n_experts=2,4,8 (repeatable).
    #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Where to write the CSV stream.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticConfig::default().n_users)]
    users: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().n_items)]
    items: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().n_blocks)]
    blocks: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().n_interactions)]
    interactions: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().in_block_weight)]
    in_block_weight: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().cross_block_weight)]
    cross_block_weight: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().zipf_exponent)]
    zipf_exponent: f64,
    /// Fraction of the stream after which preferences rotate one block.
    #[arg(long)]
    drift_at: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = args.config.load()?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let artifacts = experiment::run_experiment(&config, &out_dir)?;
    let s = &artifacts.summary;
    println!(
        "hr@{k}={hr:.4} ndcg@{k}={ndcg:.4} evaluated={n} skipped={skipped} chunks={chunks} -> {dir}",
        k = config.eval.k,
        hr = s.hr,
        ndcg = s.ndcg,
        n = s.n_evaluated,
        skipped = s.n_skipped,
        chunks = s.test_chunks,
        dir = out_dir.display(),
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let config = args.config.load()?;
    let out_root = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}-sweep", config.output.dir)));
    let axes = args
        .grid
        .iter()
        .map(|axis| parse_grid_axis(axis))
        .collect::<Result<Vec<_>>>()?;
    let report = experiment::sweep(&config, &axes, &out_root)?;
    for record in &report.runs {
        match (record.hr, record.ndcg) {
            (Some(hr), Some(ndcg)) => {
                println!("{dir}: hr={hr:.4} ndcg={ndcg:.4}", dir = record.dir)
            }
            _ => println!("{dir}: FAILED ({status})", dir = record.dir, status = record.status),
        }
    }
    println!(
        "{ok}/{total} runs succeeded -> {root}",
        ok = report.runs.len() - report.n_failed,
        total = report.runs.len(),
        root = out_root.display(),
    );
    if report.n_failed > 0 {
        return Err(streamrec::error::Error::config(format!(
            "{} sweep run(s) failed; see {}",
            report.n_failed,
            out_root.join("sweep.json").display()
        )));
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        n_users: args.users,
        n_items: args.items,
        n_blocks: args.blocks,
        n_interactions: args.interactions,
        in_block_weight: args.in_block_weight,
        cross_block_weight: args.cross_block_weight,
        zipf_exponent: args.zipf_exponent,
        drift_at: args.drift_at,
        seed: args.seed,
    };
    let stream = synthetic::generate(&config)?;
    let file = std::fs::File::create(&args.out)?;
    let mut writer = std::io::BufWriter::new(file);
    synthetic::write_csv(&mut writer, &stream)?;
    use std::io::Write;
    writer.flush()?;
    println!(
        "wrote {n} interactions ({users} users, {items} items) -> {path}",
        n = stream.len(),
        users = args.users,
        items = args.items,
        path = args.out.display(),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
