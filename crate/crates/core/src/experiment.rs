//! End-to-end experiment execution: ingest a dataset, run the prequential
//! evaluation loop, and leave three artifacts in the output directory —
//! `metrics.jsonl` (one record per test chunk, written as the run
//! progresses), `summary.json` (aggregate metrics and dataset counts) and
//! `resolved_config` (the exact configuration, re-feedable for a bitwise
//! identical rerun).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GridAxis};
use crate::dwmoe::DwmoeModel;
use crate::error::{Error, Result};
use crate::eval::{PrequentialOutcome, PrequentialRun, UserHistory};
use crate::ingest::{
    binarize, chronological_split, filter_min_interactions, parse_interactions_file, sample_users,
    Dataset,
};
use crate::sampling::Reservoir;
use crate::train::Trainer;

/// Distinct randomness streams derived from the experiment seed, so that
/// e.g. changing the number of negatives cannot silently shift model
/// initialization.
mod seed_tag {
    pub const MODEL: u64 = 1;
    pub const TRAINER: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const SAMPLE_USERS: u64 = 4;
}

/// splitmix64 of `base + tag` — cheap, well-mixed, and stable across runs.
fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the configured ingest pipeline: parse, activity-filter, optional
/// user subsample, binarize.
pub fn ingest_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    if config.dataset.path.is_empty() {
        return Err(Error::config("dataset.path is not set"));
    }
    let rated = parse_interactions_file(Path::new(&config.dataset.path), &config.dataset.delimiter)?;
    let rated = filter_min_interactions(rated, config.dataset.min_user_interactions);
    let rated = match config.dataset.sample_users {
        Some(n) => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, seed_tag::SAMPLE_USERS));
            sample_users(rated, n, &mut rng)
        }
        None => rated,
    };
    Ok(binarize(rated))
}

/// Everything a finished run reports, plus the dataset shape it ran on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub outcome: PrequentialOutcome,
    pub summary: RunSummary,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub hr: f64,
    pub ndcg: f64,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub pretrain_chunks: usize,
    pub test_chunks: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let dataset = ingest_dataset(config)?;
    let n_users = dataset.user_ids.len();
    let n_items = dataset.item_ids.len();
    if n_users == 0 || n_items == 0 {
        return Err(Error::config("dataset is empty after filtering"));
    }
    let (train, test) = chronological_split(&dataset.interactions, config.stream.train_fraction)?;
    let history = UserHistory::from_interactions(&dataset.interactions);

    let mut model_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, seed_tag::MODEL));
    let mut model = DwmoeModel::new(config.model.resolve(n_users, n_items), &mut model_rng)?;
    let mut trainer = Trainer::new(
        &model,
        config.train.clone(),
        derive_seed(config.seed, seed_tag::TRAINER),
    )?;
    let mut reservoir = Reservoir::new(config.sampler.reservoir_capacity);
    let sampler = config.sampler_config();

    fs::create_dir_all(out_dir)?;
    let metrics_file = File::create(out_dir.join("metrics.jsonl"))?;
    let mut metrics_writer = BufWriter::new(metrics_file);
    let mut write_error: Option<Error> = None;

    let run = PrequentialRun {
        model: &mut model,
        trainer: &mut trainer,
        reservoir: &mut reservoir,
        sampler: &sampler,
        eval: &config.eval,
        history: &history,
        s_r: config.stream.s_r,
        eval_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, seed_tag::EVAL)),
    };
    let outcome = run.run(train, test, |record| {
        if write_error.is_some() {
            return;
        }
        let result = serde_json::to_string(record)
            .map_err(|e| Error::config(format!("metrics record serialization failed: {e}")))
            .and_then(|line| writeln!(metrics_writer, "{line}").map_err(Error::from));
        if let Err(e) = result {
            write_error = Some(e);
        }
    })?;
    metrics_writer.flush()?;
    if let Some(e) = write_error {
        return Err(e);
    }

    let summary = RunSummary {
        hr: outcome.summary.hr,
        ndcg: outcome.summary.ndcg,
        n_evaluated: outcome.summary.n_evaluated,
        n_skipped: outcome.summary.n_skipped,
        pretrain_chunks: outcome.pretrain_chunks,
        test_chunks: outcome.chunks.len(),
        n_users,
        n_items,
        n_interactions: dataset.interactions.len(),
        n_train: train.len(),
        n_test: test.len(),
        seed: config.seed,
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::config(format!("summary serialization failed: {e}")))?;
    fs::write(out_dir.join("summary.json"), summary_json + "\n")?;

    let mut resolved = config.clone();
    resolved.output.dir = out_dir.display().to_string();
    fs::write(out_dir.join("resolved_config"), resolved.to_toml()?)?;

    if config.output.save_model {
        let mut snapshot = BufWriter::new(File::create(out_dir.join("model.snapshot"))?);
        model.save(&mut snapshot)?;
        snapshot.flush()?;
    }

    Ok(RunArtifacts { outcome, summary })
}

/// One grid point's fate inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunRecord {
    pub dir: String,
    pub overrides: BTreeMap<String, String>,
    /// `"ok"` or the error message that stopped this point.
    pub status: String,
    pub hr: Option<f64>,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<SweepRunRecord>,
    pub n_failed: usize,
}

/// Runs the template once per grid point (the cartesian product of the
/// axes), each into its own subdirectory. Failures are recorded and the
/// sweep continues; an empty grid degenerates to a single template run.
pub fn sweep(
    template: &ExperimentConfig,
    axes: &[GridAxis],
    out_root: &Path,
) -> Result<SweepReport> {
    fs::create_dir_all(out_root)?;
    let points = crate::config::grid_points(axes);
    let mut runs = Vec::with_capacity(points.len());
    let mut n_failed = 0;

    for (index, point) in points.iter().enumerate() {
        let dir_name = point_dir_name(index, point);
        let out_dir = out_root.join(&dir_name);
        let overrides: BTreeMap<String, String> = point.iter().cloned().collect();

        let attempt = (|| -> Result<RunArtifacts> {
            let mut config = template.clone();
            for (key, value) in point {
                config.apply_set(key, value)?;
            }
            run_experiment(&config, &out_dir)
        })();

        let record = match attempt {
            Ok(artifacts) => SweepRunRecord {
                dir: dir_name,
                overrides,
                status: "ok".to_string(),
                hr: Some(artifacts.summary.hr),
                ndcg: Some(artifacts.summary.ndcg),
            },
            Err(e) => {
                n_failed += 1;
                SweepRunRecord {
                    dir: dir_name,
                    overrides,
                    status: e.to_string(),
                    hr: None,
                    ndcg: None,
                }
            }
        };
        runs.push(record);
    }

    let report = SweepReport { runs, n_failed };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::config(format!("sweep report serialization failed: {e}")))?;
    fs::write(out_root.join("sweep.json"), json + "\n")?;
    Ok(report)
}

/// `run-012-n_experts=8-s_r=256`, with path-hostile characters replaced.
fn point_dir_name(index: usize, point: &[(String, String)]) -> String {
    let mut name = format!("run-{index:03}");
    for (key, value) in point {
        let short_key = key.rsplit('.').next().unwrap_or(key);
        let clean_value: String = value
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        name.push_str(&format!("-{short_key}={clean_value}"));
    }
    name
}
