//! `pll train`: seeded trials with JSON-lines results.
//!
//! Trials use consecutive seeds from --seed. Results are appended to --out
//! as one JSON line per trial followed by a closing experiment line; in the
//! default single-job mode each trial line is flushed as soon as the trial
//! finishes, so an interrupted sweep loses at most the in-flight trial.
//! With --jobs > 1 trials run in parallel and the lines are written
//! together at the end, in seed order.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use pll_core::io::{
    save_model, split_partial, standardize_partial, standardize_supervised, FeatureStats,
    SplitSpec,
};
use pll_core::train::{train_cc, train_rc, train_supervised, TrainLog, TrialSummary};
use pll_core::types::{Method, ModelSpec, PartialDataset, RunConfig, SupervisedDataset};
use pll_core::{io::load_partial_csv, io::load_supervised_csv, Error, Model, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Rc,
    Cc,
    Supervised,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelArg {
    Linear,
    Mlp,
}

#[derive(clap::Args)]
pub struct Args {
    /// Partial-label CSV produced by `pll generate`
    #[arg(long, value_name = "CSV")]
    data: PathBuf,

    /// Supervised CSV scored as the test set each epoch
    #[arg(long, value_name = "CSV")]
    test: Option<PathBuf>,

    #[arg(long, value_enum)]
    method: MethodArg,

    /// Number of trials; trial t uses seed --seed + t
    #[arg(long, default_value_t = 5)]
    trials: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 250)]
    epochs: usize,

    #[arg(long, default_value_t = 256)]
    batch_size: usize,

    #[arg(long = "lr", default_value_t = 1e-3)]
    learning_rate: f64,

    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,

    #[arg(long, value_enum, default_value_t = ModelArg::Linear)]
    model: ModelArg,

    /// Hidden width when --model mlp
    #[arg(long, default_value_t = pll_core::types::DEFAULT_MLP_HIDDEN)]
    hidden: usize,

    /// Fraction of training data held out for validation scoring
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,

    /// Results JSON-lines file (appended, never truncated)
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,

    /// Directory receiving one epoch-log JSON-lines file per trial
    #[arg(long, value_name = "DIR")]
    epoch_log: Option<PathBuf>,

    /// Also score the training instances against their hidden true labels
    #[arg(long)]
    transductive: bool,

    /// Hold out this fraction of --data per trial as the test split
    /// (reshuffled with the trial seed; requires the "true" column)
    #[arg(long, value_name = "FRACTION", conflicts_with = "test")]
    resplit: Option<f64>,

    /// Pick lr and weight decay from {1e-6,...,1e-1} x {1e-6,...,1e-1} by
    /// validation score before running the trials
    #[arg(long)]
    grid: bool,

    /// Run up to this many trials in parallel (1 = fully sequential)
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Save the base-seed trial's model checkpoint here
    #[arg(long, value_name = "FILE")]
    save_model: Option<PathBuf>,

    /// Standardize features with statistics fitted on the training split
    #[arg(long)]
    standardize: bool,
}

/// Closing record of a sweep: per-trial metrics with their mean and sample
/// standard deviation, recomputable from `trials` within 1e-12.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub dataset: String,
    pub trials: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config: RunConfig,
    pub wall_time_seconds: f64,
}

impl ExperimentResult {
    pub fn new(
        method: Method,
        dataset: String,
        trials: Vec<f64>,
        config: RunConfig,
        wall_time_seconds: f64,
    ) -> Self {
        let mean = trials.iter().sum::<f64>() / trials.len() as f64;
        let std = if trials.len() < 2 {
            0.0
        } else {
            (trials.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
                / (trials.len() - 1) as f64)
                .sqrt()
        };
        ExperimentResult {
            method,
            dataset,
            trials,
            mean,
            std,
            config,
            wall_time_seconds,
        }
    }
}

struct TrialOutput {
    summary: TrialSummary,
    metric: f64,
    log: TrainLog,
    model: Model,
}

pub fn run(args: Args) -> Result<i32> {
    let started = Instant::now();
    let data = load_partial_csv(&args.data)?;
    let test = args
        .test
        .as_ref()
        .map(|p| load_supervised_csv_checked(p, &data))
        .transpose()?;

    let method = match args.method {
        MethodArg::Rc => Method::Rc,
        MethodArg::Cc => Method::Cc,
        MethodArg::Supervised => Method::Supervised,
    };
    if (method == Method::Supervised || args.resplit.is_some()) && data.hidden_labels().is_none() {
        return Err(Error::Parse {
            path: args.data.display().to_string(),
            line: 0,
            msg: "no \"true\" column: supervised training and --resplit need hidden labels"
                .into(),
        });
    }
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }

    let mut cfg = RunConfig {
        seed: args.seed,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        weight_decay: args.weight_decay,
        model: match args.model {
            ModelArg::Linear => ModelSpec::Linear,
            ModelArg::Mlp => ModelSpec::Mlp {
                hidden: args.hidden,
            },
        },
        method,
        trials: args.trials,
        validation_fraction: args.validation_fraction,
    };
    cfg.validate()?;

    if args.grid {
        let (lr, wd) = grid_search(&data, test.as_ref(), &args, &cfg)?;
        println!("grid selected lr={lr:e} weight_decay={wd:e}");
        cfg.learning_rate = lr;
        cfg.weight_decay = wd;
    }

    if let Some(dir) = &args.epoch_log {
        std::fs::create_dir_all(dir)?;
    }

    let seeds: Vec<u64> = (0..args.trials as u64).map(|t| args.seed + t).collect();
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)?;

    let mut outputs: Vec<TrialOutput> = Vec::with_capacity(seeds.len());
    if args.jobs <= 1 {
        for &seed in &seeds {
            let output = run_trial(&data, test.as_ref(), &args, &cfg, seed)?;
            append_line(&mut out, &output.summary)?;
            println!("trial seed={seed} metric={:.6}", output.metric);
            outputs.push(output);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        let results: Vec<Result<TrialOutput>> = pool.install(|| {
            use rayon::prelude::*;
            seeds
                .par_iter()
                .map(|&seed| run_trial(&data, test.as_ref(), &args, &cfg, seed))
                .collect()
        });
        for result in results {
            let output = result?;
            append_line(&mut out, &output.summary)?;
            println!(
                "trial seed={} metric={:.6}",
                output.summary.seed, output.metric
            );
            outputs.push(output);
        }
    }

    for output in &outputs {
        if let Some(dir) = &args.epoch_log {
            let name = format!("{}_seed{}.jsonl", cfg.method, output.summary.seed);
            std::fs::write(dir.join(name), output.log.to_jsonl())?;
        }
        if let (Some(path), true) = (&args.save_model, output.summary.seed == args.seed) {
            save_model(&output.model, path)?;
        }
    }

    let metrics: Vec<f64> = outputs.iter().map(|o| o.metric).collect();
    let result = ExperimentResult::new(
        cfg.method,
        args.data.display().to_string(),
        metrics,
        cfg.clone(),
        started.elapsed().as_secs_f64(),
    );
    append_line(&mut out, &result)?;
    println!(
        "{} on {}: mean {:.4} std {:.4} over {} trials ({:.1}s)",
        result.method,
        result.dataset,
        result.mean,
        result.std,
        result.trials.len(),
        result.wall_time_seconds
    );
    Ok(0)
}

fn load_supervised_csv_checked(
    path: &PathBuf,
    data: &PartialDataset,
) -> Result<SupervisedDataset> {
    // Pin k to the training data's label space so a test file whose largest
    // label happens to be small still lines up.
    let test = load_supervised_csv(path, Some(data.k()))?;
    if test.d() != data.d() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!(
                "test data has {} features, training data has {}",
                test.d(),
                data.d()
            ),
        });
    }
    Ok(test)
}

fn append_line(out: &mut std::fs::File, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)
        .map_err(|e| Error::Config(format!("cannot serialize result: {e}")))?;
    writeln!(out, "{line}")?;
    out.flush()?;
    Ok(())
}

/// One trial: optional per-trial resplit, optional standardization, train,
/// and metric extraction.
fn run_trial(
    data: &PartialDataset,
    test: Option<&SupervisedDataset>,
    args: &Args,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TrialOutput> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;

    // Per-trial resplit: the heldout rows become a supervised test set.
    let (train_data, resplit_test) = match args.resplit {
        Some(fraction) => {
            let (train, held) = split_partial(data, &SplitSpec { fraction, seed })?;
            let labels = held
                .hidden_labels()
                .expect("checked before trials started")
                .to_vec();
            let test = SupervisedDataset::new(held.features().clone(), labels, held.k())?;
            (train, Some(test))
        }
        None => (data.clone(), None),
    };
    let mut trial_test: Option<SupervisedDataset> = match (&resplit_test, test) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(t)) => Some(t.clone()),
        (None, None) => None,
    };

    let train_data = if args.standardize {
        let stats = FeatureStats::fit(train_data.features())?;
        if let Some(t) = trial_test.take() {
            trial_test = Some(standardize_supervised(&t, &stats)?);
        }
        standardize_partial(&train_data, &stats)?
    } else {
        train_data
    };

    let test_ref = trial_test.as_ref();
    let (model, log) = match cfg.method {
        Method::Rc => train_rc(&train_data, test_ref, &cfg, args.transductive)?,
        Method::Cc => train_cc(&train_data, test_ref, &cfg, args.transductive)?,
        Method::Supervised => train_supervised(&train_data, test_ref, &cfg, args.transductive)?,
    };

    let metric = trial_metric(&log, test_ref.is_some(), &cfg, args)?;
    let summary = TrialSummary {
        method: cfg.method,
        seed,
        final_metric: Some(metric),
        transductive: log.final_transductive(),
        config: cfg,
    };
    Ok(TrialOutput {
        summary,
        metric,
        log,
        model,
    })
}

/// The reported metric is the last-10-epoch average of, in order of
/// preference: test accuracy, validation score, transductive accuracy.
fn trial_metric(log: &TrainLog, has_test: bool, cfg: &RunConfig, args: &Args) -> Result<f64> {
    if has_test {
        if let Some(m) = log.final_metric() {
            return Ok(m);
        }
    }
    if cfg.validation_fraction > 0.0 {
        if let Some(m) = validation_tail_mean(log) {
            return Ok(m);
        }
    }
    if args.transductive {
        if let Some(m) = log.final_transductive() {
            return Ok(m);
        }
    }
    Err(Error::Config(
        "no metric source: provide --test or --resplit, keep --validation-fraction above 0, \
         or pass --transductive on data with a \"true\" column"
            .into(),
    ))
}

fn validation_tail_mean(log: &TrainLog) -> Option<f64> {
    let records = log.records();
    let tail = records.len().min(10);
    if tail == 0 {
        return None;
    }
    let slice = &records[records.len() - tail..];
    let mut sum = 0.0;
    for r in slice {
        sum += r.validation_score?;
    }
    Some(sum / tail as f64)
}

const GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Single-trial sweep over the lr/wd grid at the base seed, scored by the
/// validation tail mean.
fn grid_search(
    data: &PartialDataset,
    test: Option<&SupervisedDataset>,
    args: &Args,
    cfg: &RunConfig,
) -> Result<(f64, f64)> {
    if cfg.validation_fraction <= 0.0 {
        return Err(Error::Config(
            "--grid needs --validation-fraction above 0 to score candidates".into(),
        ));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for lr in GRID {
        for wd in GRID {
            let mut candidate = cfg.clone();
            candidate.learning_rate = lr;
            candidate.weight_decay = wd;
            let output = run_trial(data, test, args, &candidate, args.seed)?;
            let score = validation_tail_mean(&output.log).ok_or_else(|| {
                Error::Config("grid search produced no validation scores".into())
            })?;
            log::info!("grid lr={lr:e} wd={wd:e} validation={score:.6}");
            let better = match best {
                Some((_, _, s)) => score > s,
                None => true,
            };
            if better {
                best = Some((lr, wd, score));
            }
        }
    }
    let (lr, wd, score) = best.expect("grid is non-empty");
    log::info!("grid best lr={lr:e} wd={wd:e} validation={score:.6}");
    Ok((lr, wd))
}
