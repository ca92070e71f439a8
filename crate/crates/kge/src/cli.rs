//! Command-line surface: `train`, `eval`, `analyze`, `sample`, and
//! `gradcheck`, configured through flat `key = value` files with
//! command-line overrides.
//!
//! Exit statuses: 0 on success, 1 on pipeline errors, 2 on configuration
//! errors. Every command validates its full configuration before writing
//! anything, and train/eval runs always leave a `config.resolved` snapshot
//! that reproduces the run.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{self, SplitRole, TripleSet, TypeMap, Vocab};
use crate::error::{Error, Result};
use crate::eval::{self, DirectionMode};
use crate::gradcheck::{self, GradCheckOptions};
use crate::model;
use crate::objective::LossConfig;
use crate::optim::{self, AdamConfig, DataBundle, TrainConfig};
use crate::sampler::{build_filter, SamplerState};

/// Fully resolved run configuration: defaults, then the config file, then
/// command-line overrides, with `KGE_SEED` as a seed fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_file: Option<PathBuf>,
    pub valid_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub types_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub sample_output: Option<PathBuf>,
    pub runs: Vec<PathBuf>,
    pub relations: Vec<String>,
    pub dim: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub alpha: f64,
    pub l2_lambda: f64,
    pub neg_cats: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub eval_cadence: usize,
    pub clip_factor: f64,
    pub fraction: f64,
    pub candidates: usize,
    pub directions: DirectionMode,
    pub val_queries: usize,
    pub deterministic: bool,
    pub write_ranks: bool,
    pub alpha_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub gc_seeds: usize,
    pub gc_dims: Vec<usize>,
    pub gc_step: f64,
    pub gc_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_file: None,
            valid_file: None,
            test_file: None,
            types_file: None,
            checkpoint: None,
            output_dir: None,
            sample_output: None,
            runs: Vec::new(),
            relations: Vec::new(),
            dim: 100,
            seed: 42,
            init_scale: 0.1,
            alpha: 0.0,
            l2_lambda: 0.0,
            neg_cats: 4,
            epochs: 100,
            batch_size: 512,
            negatives: 10,
            learning_rate: 0.001,
            patience: 3,
            eval_cadence: 5,
            clip_factor: 3.0,
            fraction: 1.0,
            candidates: 1000,
            directions: DirectionMode::Both,
            val_queries: 2000,
            deterministic: false,
            write_ranks: true,
            alpha_grid: Vec::new(),
            lambda_grid: Vec::new(),
            gc_seeds: 20,
            gc_dims: vec![2, 5],
            gc_step: 1e-5,
            gc_tol: 1e-5,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("key `{key}`: cannot parse `{value}`"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected a boolean, got `{value}`"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| parse_value(key, item.trim()))
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_file" => self.train_file = Some(PathBuf::from(value)),
            "valid_file" => self.valid_file = Some(PathBuf::from(value)),
            "test_file" => self.test_file = Some(PathBuf::from(value)),
            "types_file" => self.types_file = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "sample_output" => self.sample_output = Some(PathBuf::from(value)),
            "runs" => {
                self.runs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| PathBuf::from(s.trim()))
                    .collect()
            }
            "relations" => {
                self.relations = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().to_string())
                    .collect()
            }
            "dim" => self.dim = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "init_scale" => self.init_scale = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "l2_lambda" => self.l2_lambda = parse_value(key, value)?,
            "neg_cats" => self.neg_cats = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "negatives" => self.negatives = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "eval_cadence" => self.eval_cadence = parse_value(key, value)?,
            "clip_factor" => self.clip_factor = parse_value(key, value)?,
            "fraction" => self.fraction = parse_value(key, value)?,
            "candidates" => self.candidates = parse_value(key, value)?,
            "directions" => self.directions = value.parse()?,
            "val_queries" => self.val_queries = parse_value(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "write_ranks" => self.write_ranks = parse_bool(key, value)?,
            "alpha_grid" => self.alpha_grid = parse_list(key, value)?,
            "lambda_grid" => self.lambda_grid = parse_list(key, value)?,
            "gc_seeds" => self.gc_seeds = parse_value(key, value)?,
            "gc_dims" => self.gc_dims = parse_list(key, value)?,
            "gc_step" => self.gc_step = parse_value(key, value)?,
            "gc_tol" => self.gc_tol = parse_value(key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Loads assignments from a flat `key = value` file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, line) in contents.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "expected `key = value`".to_string(),
                });
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serializes every setting as a reloadable `key = value` snapshot.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let mut path = |key: &str, value: &Option<PathBuf>| {
            if let Some(p) = value {
                let _ = writeln!(out, "{key} = {}", p.display());
            }
        };
        path("train_file", &self.train_file);
        path("valid_file", &self.valid_file);
        path("test_file", &self.test_file);
        path("types_file", &self.types_file);
        path("checkpoint", &self.checkpoint);
        path("output_dir", &self.output_dir);
        path("sample_output", &self.sample_output);
        if !self.runs.is_empty() {
            let joined: Vec<String> = self.runs.iter().map(|p| p.display().to_string()).collect();
            let _ = writeln!(out, "runs = {}", joined.join(","));
        }
        if !self.relations.is_empty() {
            let _ = writeln!(out, "relations = {}", self.relations.join(","));
        }
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "init_scale = {}", self.init_scale);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "l2_lambda = {}", self.l2_lambda);
        let _ = writeln!(out, "neg_cats = {}", self.neg_cats);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "negatives = {}", self.negatives);
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "patience = {}", self.patience);
        let _ = writeln!(out, "eval_cadence = {}", self.eval_cadence);
        let _ = writeln!(out, "clip_factor = {}", self.clip_factor);
        let _ = writeln!(out, "fraction = {}", self.fraction);
        let _ = writeln!(out, "candidates = {}", self.candidates);
        let directions = match self.directions {
            DirectionMode::Target => "target",
            DirectionMode::Source => "source",
            DirectionMode::Both => "both",
        };
        let _ = writeln!(out, "directions = {directions}");
        let _ = writeln!(out, "val_queries = {}", self.val_queries);
        let _ = writeln!(out, "deterministic = {}", self.deterministic);
        let _ = writeln!(out, "write_ranks = {}", self.write_ranks);
        if !self.alpha_grid.is_empty() {
            let joined: Vec<String> = self.alpha_grid.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "alpha_grid = {}", joined.join(","));
        }
        if !self.lambda_grid.is_empty() {
            let joined: Vec<String> = self.lambda_grid.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "lambda_grid = {}", joined.join(","));
        }
        let _ = writeln!(out, "gc_seeds = {}", self.gc_seeds);
        let joined: Vec<String> = self.gc_dims.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "gc_dims = {}", joined.join(","));
        let _ = writeln!(out, "gc_step = {}", self.gc_step);
        let _ = writeln!(out, "gc_tol = {}", self.gc_tol);
        out
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            negatives_per_positive: self.negatives,
            loss: LossConfig {
                alpha: self.alpha,
                l2_lambda: self.l2_lambda,
                neg_cats_per_positive: self.neg_cats,
                ..LossConfig::default()
            },
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            patience: self.patience,
            eval_cadence: self.eval_cadence,
            clip_factor: self.clip_factor,
            seed: self.seed,
            data_fraction: self.fraction,
            dim: self.dim,
            init_scale: self.init_scale,
            eval_candidates: self.candidates,
            val_queries: self.val_queries,
            deterministic: self.deterministic,
        }
    }
}

/// Command-line overrides mirroring the config-file keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    #[arg(long)]
    pub valid_file: Option<PathBuf>,
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[arg(long)]
    pub types_file: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub sample_output: Option<PathBuf>,
    /// Comma-separated run directories (analyze).
    #[arg(long)]
    pub runs: Option<String>,
    /// Comma-separated relation names to restrict per-relation tables.
    #[arg(long)]
    pub relations: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    #[arg(long)]
    pub neg_cats: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_cadence: Option<usize>,
    #[arg(long)]
    pub clip_factor: Option<f64>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    /// `target`, `source`, or `both`.
    #[arg(long)]
    pub directions: Option<String>,
    #[arg(long)]
    pub val_queries: Option<usize>,
    /// Forces single-threaded, bit-stable execution.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub write_ranks: Option<bool>,
    /// Comma-separated α grid; triggers a grid search before training.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    /// Comma-separated λ grid for the grid search.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Gradient-check instances (gradcheck).
    #[arg(long = "seeds")]
    pub gc_seeds: Option<usize>,
    #[arg(long = "step")]
    pub gc_step: Option<f64>,
    #[arg(long = "tolerance")]
    pub gc_tol: Option<f64>,
}

impl Overrides {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out: Vec<(&'static str, String)> = Vec::new();
        let mut push_path = |key: &'static str, value: &Option<PathBuf>| {
            if let Some(p) = value {
                out.push((key, p.display().to_string()));
            }
        };
        push_path("train_file", &self.train_file);
        push_path("valid_file", &self.valid_file);
        push_path("test_file", &self.test_file);
        push_path("types_file", &self.types_file);
        push_path("checkpoint", &self.checkpoint);
        push_path("output_dir", &self.output_dir);
        push_path("sample_output", &self.sample_output);
        macro_rules! push_opt {
            ($key:literal, $field:expr) => {
                if let Some(v) = &$field {
                    out.push(($key, v.to_string()));
                }
            };
        }
        push_opt!("runs", self.runs);
        push_opt!("relations", self.relations);
        push_opt!("dim", self.dim);
        push_opt!("seed", self.seed);
        push_opt!("init_scale", self.init_scale);
        push_opt!("alpha", self.alpha);
        push_opt!("l2_lambda", self.l2_lambda);
        push_opt!("neg_cats", self.neg_cats);
        push_opt!("epochs", self.epochs);
        push_opt!("batch_size", self.batch_size);
        push_opt!("negatives", self.negatives);
        push_opt!("learning_rate", self.learning_rate);
        push_opt!("patience", self.patience);
        push_opt!("eval_cadence", self.eval_cadence);
        push_opt!("clip_factor", self.clip_factor);
        push_opt!("fraction", self.fraction);
        push_opt!("candidates", self.candidates);
        push_opt!("directions", self.directions);
        push_opt!("val_queries", self.val_queries);
        push_opt!("deterministic", self.deterministic);
        push_opt!("write_ranks", self.write_ranks);
        push_opt!("alpha_grid", self.alpha_grid);
        push_opt!("lambda_grid", self.lambda_grid);
        push_opt!("gc_seeds", self.gc_seeds);
        push_opt!("gc_step", self.gc_step);
        push_opt!("gc_tol", self.gc_tol);
        out
    }
}

/// Resolves defaults, `KGE_SEED`, the config file, and overrides, in
/// ascending precedence.
pub fn resolve_config(overrides: &Overrides) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Ok(seed) = std::env::var("KGE_SEED") {
        config.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("KGE_SEED is not an integer: `{seed}`")))?;
    }
    if let Some(path) = &overrides.config {
        config.apply_file(path)?;
    }
    for (key, value) in overrides.entries() {
        config.apply(key, &value)?;
    }
    Ok(config)
}

#[derive(Debug, Parser)]
#[command(name = "kge", version, about = "Bilinear knowledge-graph embeddings with a type regularizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best checkpoint.
    Train(Overrides),
    /// Rank test triples against sampled candidates and report metrics.
    Eval(Overrides),
    /// Frequency-bucket, per-relation, and sweep tables from finished runs.
    Analyze(Overrides),
    /// Deterministically subsample a triple file.
    Sample(Overrides),
    /// Verify analytic gradients against finite differences.
    Gradcheck(Overrides),
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))?;
    Ok(path)
}

fn require_exists(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = require(path, key)?;
    if !path.is_file() {
        return Err(Error::Config(format!(
            "`{key}` = {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Loads vocabulary and splits in the canonical order (train, valid,
/// test, types) so the vocabulary hash is stable across commands.
fn load_bundle(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
    types: Option<&Path>,
) -> Result<(Vocab, DataBundle)> {
    let mut vocab = Vocab::new();
    let train = corpus::load_triples(train, &mut vocab, SplitRole::Train)?;
    let valid = match valid {
        Some(path) => corpus::load_triples(path, &mut vocab, SplitRole::Valid)?,
        None => TripleSet::new(SplitRole::Valid),
    };
    let test = match test {
        Some(path) => corpus::load_triples(path, &mut vocab, SplitRole::Test)?,
        None => TripleSet::new(SplitRole::Test),
    };
    let typemap = match types {
        Some(path) => corpus::load_type_map(path, &mut vocab)?.0,
        None => TypeMap::new(),
    };
    Ok((
        vocab,
        DataBundle {
            train,
            valid,
            test,
            typemap,
        },
    ))
}

fn write_snapshot(config: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("config.resolved");
    fs::write(&path, config.to_snapshot()).map_err(|e| Error::io(path, e))
}

/// `train`: fit a model, optionally after an (α, λ) grid search, and
/// write `checkpoint.kge`, `trainlog.jsonl`, and `config.resolved`.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let train_path = require_exists(&config.train_file, "train_file")?;
    let valid_path = require_exists(&config.valid_file, "valid_file")?;
    let test_path = match &config.test_file {
        Some(_) => Some(require_exists(&config.test_file, "test_file")?),
        None => None,
    };
    let needs_types = config.alpha > 0.0 || config.alpha_grid.iter().any(|&a| a > 0.0);
    let types_path = match &config.types_file {
        Some(_) => Some(require_exists(&config.types_file, "types_file")?),
        None if needs_types => {
            return Err(Error::Config(
                "alpha > 0 requires `types_file`".to_string(),
            ))
        }
        None => None,
    };
    let out_dir = require(&config.output_dir, "output_dir")?;
    let mut train_config = config.train_config();
    train_config.validate()?;
    if config.alpha_grid.is_empty() != config.lambda_grid.is_empty() {
        return Err(Error::Config(
            "alpha_grid and lambda_grid must be given together".to_string(),
        ));
    }

    write_snapshot(config, &out_dir)?;
    let (vocab, data) = load_bundle(
        &train_path,
        Some(valid_path.as_path()),
        test_path.as_deref(),
        types_path.as_deref(),
    )?;
    log::info!(
        "loaded {} train / {} valid / {} test triples, {} entities ({} categories), {} relations",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        vocab.num_entities(),
        vocab.num_categories(),
        vocab.num_relations()
    );

    if !config.alpha_grid.is_empty() {
        let result = optim::grid_search(
            &train_config,
            &config.alpha_grid,
            &config.lambda_grid,
            &data,
            &vocab,
        )?;
        println!("alpha\tlambda\tval_mrr");
        for point in &result.table {
            println!(
                "{}\t{}\t{}",
                point.alpha,
                point.l2_lambda,
                point
                    .validation_mrr
                    .map_or("-".to_string(), |m| format!("{m:.4}"))
            );
        }
        println!(
            "grid best: alpha = {}, lambda = {} (val MRR {:.4})",
            result.best_alpha, result.best_l2_lambda, result.best_mrr
        );
        train_config.loss.alpha = result.best_alpha;
        train_config.loss.l2_lambda = result.best_l2_lambda;
    }

    let (params, log) = optim::train(&train_config, &data, &vocab)?;
    model::save_checkpoint(&params, vocab.stable_hash(), out_dir.join("checkpoint.kge"))?;
    log.write_jsonl(out_dir.join("trainlog.jsonl"))?;
    match (log.best_epoch, log.best_validation_mrr) {
        (Some(epoch), Some(mrr)) => {
            println!(
                "trained {} epochs on {} triples; best validation MRR {:.4} at epoch {}{}",
                log.epochs.len(),
                log.triples_used,
                mrr,
                epoch,
                if log.stopped_early { " (early stop)" } else { "" }
            );
        }
        _ => println!(
            "trained {} epochs on {} triples (no validation evaluations ran)",
            log.epochs.len(),
            log.triples_used
        ),
    }
    Ok(())
}

/// `eval`: rank the test split with a trained checkpoint and write
/// `eval.json` (and `ranks.csv`).
pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let checkpoint = require_exists(&config.checkpoint, "checkpoint")?;
    let train_path = require_exists(&config.train_file, "train_file")?;
    let valid_path = require_exists(&config.valid_file, "valid_file")?;
    let test_path = require_exists(&config.test_file, "test_file")?;
    let types_path = match &config.types_file {
        Some(_) => Some(require_exists(&config.types_file, "types_file")?),
        None => None,
    };
    let out_dir = require(&config.output_dir, "output_dir")?;

    let (vocab, data) = load_bundle(
        &train_path,
        Some(valid_path.as_path()),
        Some(test_path.as_path()),
        types_path.as_deref(),
    )?;
    let params = model::load_checkpoint(&checkpoint, vocab.stable_hash())?;
    let filter = build_filter(&data.train, &data.valid, &data.test);
    let state = SamplerState::new(&vocab, &data.typemap, config.seed);
    let mut report = eval::evaluate(
        &params,
        &data.test,
        &filter,
        &vocab,
        &state,
        config.directions,
        config.candidates,
        !config.deterministic,
    )?;
    report.attach_buckets(&corpus::build_freq_index(&data.train));
    report.validate()?;

    write_snapshot(config, &out_dir)?;
    let json = serde_json::to_string_pretty(&report)?;
    let eval_path = out_dir.join("eval.json");
    fs::write(&eval_path, json).map_err(|e| Error::io(eval_path, e))?;
    if config.write_ranks {
        eval::write_ranks_csv(&report.results, &vocab, out_dir.join("ranks.csv"))?;
    }
    println!("MRR      {:.4}", report.mrr);
    println!("Hits@1   {:.4}", report.hits1);
    println!("Hits@3   {:.4}", report.hits3);
    println!("Hits@10  {:.4}", report.hits10);
    println!("queries  {}", report.query_count);
    Ok(())
}

fn read_key_from_snapshot(path: &Path, key: &str) -> Result<Option<String>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in contents.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == key {
                return Ok(Some(v.trim().to_string()));
            }
        }
    }
    Ok(None)
}

/// `analyze`: frequency-bucket and per-relation tables for each run, plus
/// fraction/α sweep summaries when several runs are given.
pub fn cmd_analyze(config: &RunConfig) -> Result<()> {
    let train_path = require_exists(&config.train_file, "train_file")?;
    if config.runs.is_empty() {
        return Err(Error::Config(
            "`runs` must list at least one run directory".to_string(),
        ));
    }
    for run in &config.runs {
        if !run.join("ranks.csv").is_file() {
            return Err(Error::Config(format!(
                "run directory {} has no ranks.csv",
                run.display()
            )));
        }
    }
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("analysis"));

    let mut vocab = Vocab::new();
    let train = corpus::load_triples(&train_path, &mut vocab, SplitRole::Train)?;
    let freq = corpus::build_freq_index(&train);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    struct SweepRow {
        run: String,
        fraction: Option<f64>,
        alpha: Option<f64>,
        mrr: f64,
        hits10: f64,
    }
    let mut sweep_rows: Vec<SweepRow> = Vec::new();
    let mut seen_names = BTreeSet::new();
    for run in &config.runs {
        let results = eval::read_ranks_csv(run.join("ranks.csv"), &mut vocab)?;
        let buckets = eval::bucket_report(&results, &freq);
        let run_name = run
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "run".to_string());
        let run_name = if seen_names.insert(run_name.clone()) {
            run_name
        } else {
            format!("{run_name}-{}", seen_names.len())
        };
        eval::write_bucket_csv(
            &buckets.by_entity_frequency,
            out_dir.join(format!("{run_name}_entity_buckets.csv")),
        )?;
        eval::write_bucket_csv(
            &buckets.by_relation_frequency,
            out_dir.join(format!("{run_name}_relation_buckets.csv")),
        )?;
        let relations = if config.relations.is_empty() {
            None
        } else {
            Some(config.relations.as_slice())
        };
        let table = eval::relation_report(&results, &vocab, relations)?;
        eval::write_relation_csv(&table.rows, out_dir.join(format!("{run_name}_relations.csv")))?;
        for name in &table.missing {
            println!("note: relation `{name}` absent from {run_name}");
        }

        // sweep inputs, when the run kept its snapshot and report
        let snapshot = run.join("config.resolved");
        let eval_json = run.join("eval.json");
        if snapshot.is_file() && eval_json.is_file() {
            let fraction = read_key_from_snapshot(&snapshot, "fraction")?
                .and_then(|v| v.parse::<f64>().ok());
            let alpha = read_key_from_snapshot(&snapshot, "alpha")?
                .and_then(|v| v.parse::<f64>().ok());
            let contents = fs::read_to_string(&eval_json).map_err(|e| Error::io(&eval_json, e))?;
            let report: eval::EvalReport = serde_json::from_str(&contents)?;
            sweep_rows.push(SweepRow {
                run: run_name,
                fraction,
                alpha,
                mrr: report.mrr,
                hits10: report.hits10,
            });
        }
    }

    if sweep_rows.len() > 1 {
        use std::io::Write as _;
        let sweep_path = out_dir.join("sweep.csv");
        let file = fs::File::create(&sweep_path).map_err(|e| Error::io(&sweep_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "run,fraction,alpha,mrr,hits10").map_err(|e| Error::io(&sweep_path, e))?;
        println!("run\tfraction\talpha\tMRR\tHits@10");
        sweep_rows.sort_by(|a, b| {
            a.fraction
                .partial_cmp(&b.fraction)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.alpha.partial_cmp(&b.alpha).unwrap_or(std::cmp::Ordering::Equal))
        });
        for row in &sweep_rows {
            let fraction = row.fraction.map_or("-".to_string(), |f| f.to_string());
            let alpha = row.alpha.map_or("-".to_string(), |a| a.to_string());
            writeln!(out, "{},{fraction},{alpha},{},{}", row.run, row.mrr, row.hits10)
                .map_err(|e| Error::io(&sweep_path, e))?;
            println!("{}\t{fraction}\t{alpha}\t{:.4}\t{:.4}", row.run, row.mrr, row.hits10);
        }
    }
    println!("analysis written to {}", out_dir.display());
    Ok(())
}

/// `sample`: deterministic subsample of a triple file.
pub fn cmd_sample(config: &RunConfig) -> Result<()> {
    let input = require_exists(&config.train_file, "train_file")?;
    let output = require(&config.sample_output, "sample_output")?;
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must lie in (0, 1], got {}",
            config.fraction
        )));
    }
    let mut vocab = Vocab::new();
    let set = corpus::load_triples(&input, &mut vocab, SplitRole::Train)?;
    let sampled = corpus::subsample(&set, config.fraction, config.seed)?;
    corpus::save_triples(&sampled, &vocab, &output)?;
    println!(
        "sampled {} of {} triples into {}",
        sampled.len(),
        set.len(),
        output.display()
    );
    Ok(())
}

/// `gradcheck`: finite-difference verification of the objective.
pub fn cmd_gradcheck(config: &RunConfig) -> Result<()> {
    let mut options = GradCheckOptions {
        instances: config.gc_seeds,
        step: config.gc_step,
        rel_tol: config.gc_tol,
        base_seed: config.seed,
        ..GradCheckOptions::default()
    };
    // --dim and --alpha narrow the default sweeps
    if config.dim != RunConfig::default().dim {
        options.dims = vec![config.dim];
    } else {
        options.dims = config.gc_dims.clone();
    }
    if config.alpha != RunConfig::default().alpha {
        options.alphas = vec![config.alpha];
    }
    let summary = gradcheck::run(&options)?;
    println!(
        "checked {} instances (resampled {}): max rel err {:.3e}, max abs err {:.3e}",
        summary.instances, summary.resampled, summary.max_rel_error, summary.max_abs_error
    );
    if !summary.passed() {
        for failure in summary.failures.iter().take(10) {
            eprintln!("gradcheck failure: {failure}");
        }
        return Err(Error::NonFinite(format!(
            "{} gradient coordinates outside tolerance",
            summary.failures.len()
        )));
    }
    println!("all gradients within tolerance");
    Ok(())
}

type CommandFn = fn(&RunConfig) -> Result<()>;

/// Dispatches a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let (overrides, run): (&Overrides, CommandFn) = match &cli.command {
        Command::Train(o) => (o, cmd_train),
        Command::Eval(o) => (o, cmd_eval),
        Command::Analyze(o) => (o, cmd_analyze),
        Command::Sample(o) => (o, cmd_sample),
        Command::Gradcheck(o) => (o, cmd_gradcheck),
    };
    let config = resolve_config(overrides)?;
    run(&config)
}

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
