//! Training: Adam with median-based gradient clipping, shuffled
//! mini-batch epochs, unit-norm projection after every update, early
//! stopping on validation MRR, and fully seeded execution.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{subsample, TripleSet, TypeMap, Vocab};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DirectionMode};
use crate::kernel::{Matrix, Vector};
use crate::model::{GradientBuffer, ModelParams};
use crate::objective::{
    combined_objective_with, draw_type_negatives, CatNegatives, LossConfig, Query, QueryBatch,
};
use crate::sampler::{build_filter, derive_seed, SamplerState};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First- and second-moment accumulators shaped like the parameters.
/// Moment updates touch only the blocks present in a gradient buffer, so
/// sparse batches stay cheap; the fixed point for touched blocks is the
/// usual dense Adam recurrence.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    entity_m: Vec<Vector>,
    entity_v: Vec<Vector>,
    relation_m: Vec<Matrix>,
    relation_v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            entity_m: vec![Vector::zeros(params.dim()); params.num_entities()],
            entity_v: vec![Vector::zeros(params.dim()); params.num_entities()],
            relation_m: vec![Matrix::zeros(params.dim()); params.num_relations()],
            relation_v: vec![Matrix::zeros(params.dim()); params.num_relations()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn entity_moments(&self, index: usize) -> (&Vector, &Vector) {
        (&self.entity_m[index], &self.entity_v[index])
    }

    /// One bias-corrected Adam update over the blocks present in `grads`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &GradientBuffer) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let update = |values: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((value, grad), (m, v)) in
                values.iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *value -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        };
        for (&index, grad) in &grads.entities {
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient for entity block {index}")));
            }
            update(
                &mut params.entity_mut(index).0,
                &mut self.entity_m[index].0,
                &mut self.entity_v[index].0,
                grad.as_slice(),
            );
        }
        for (&index, grad) in &grads.relations {
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient for relation block {index}"
                )));
            }
            update(
                params.relation_mut(index).as_mut_slice(),
                self.relation_m[index].as_mut_slice(),
                self.relation_v[index].as_mut_slice(),
                grad.as_slice(),
            );
        }
        Ok(())
    }
}

/// Rescales exploding gradients against the median of recent gradient
/// norms: with a window median `M` and factor `c`, a gradient whose global
/// norm exceeds `c·M` is scaled down to exactly `c·M`. Clipping never
/// changes the gradient's direction and stays off for the first nine
/// steps while the window warms up.
#[derive(Debug, Clone)]
pub struct MedianClipper {
    window: VecDeque<f64>,
    capacity: usize,
    warmup: usize,
    factor: f64,
}

impl MedianClipper {
    pub fn new(factor: f64) -> Self {
        MedianClipper {
            window: VecDeque::with_capacity(100),
            capacity: 100,
            warmup: 10,
            factor,
        }
    }

    fn median(&self) -> f64 {
        let mut sorted: Vec<f64> = self.window.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("norms are finite"));
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    }

    /// Records the pre-clip norm and rescales in place when it exceeds the
    /// threshold. Returns whether clipping fired.
    pub fn clip(&mut self, grads: &mut GradientBuffer) -> bool {
        let norm = grads.global_norm();
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(norm);
        if self.window.len() < self.warmup {
            return false;
        }
        let threshold = self.factor * self.median();
        if norm > threshold && norm > 0.0 {
            grads.scale(threshold / norm);
            true
        } else {
            false
        }
    }
}

/// Everything the training loop needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Corrupted negatives per positive triple.
    pub negatives_per_positive: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Epochs between validation evaluations.
    pub eval_cadence: usize,
    /// Median-clipping factor `c`.
    pub clip_factor: f64,
    pub seed: u64,
    /// Fraction of the training split actually used.
    pub data_fraction: f64,
    pub dim: usize,
    pub init_scale: f64,
    /// Candidates per validation query.
    pub eval_candidates: usize,
    /// Size of the fixed validation query subsample (0 = full split).
    pub val_queries: usize,
    /// Forces single-chunk, single-thread gradient accumulation.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 512,
            negatives_per_positive: 10,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            patience: 3,
            eval_cadence: 5,
            clip_factor: 3.0,
            seed: 42,
            data_fraction: 1.0,
            dim: 100,
            init_scale: 0.1,
            eval_candidates: 1000,
            val_queries: 2000,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, value: usize| {
            if value == 0 {
                Err(Error::InvalidArgument(format!("{name} must be ≥ 1")))
            } else {
                Ok(())
            }
        };
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        positive("negatives_per_positive", self.negatives_per_positive)?;
        positive("patience", self.patience)?;
        positive("eval_cadence", self.eval_cadence)?;
        positive("dim", self.dim)?;
        positive("eval_candidates", self.eval_candidates)?;
        if self.clip_factor.is_nan() || self.clip_factor <= 0.0 {
            return Err(Error::InvalidArgument("clip_factor must be > 0".to_string()));
        }
        if self.data_fraction.is_nan() || self.data_fraction <= 0.0 || self.data_fraction > 1.0 {
            return Err(Error::InvalidArgument(
                "data_fraction must lie in (0, 1]".to_string(),
            ));
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(Error::InvalidArgument("init_scale must be > 0".to_string()));
        }
        self.loss.validate()
    }
}

/// One epoch's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_batch_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_mrr: Option<f64>,
    pub clip_events: usize,
    pub max_norm_deviation: f64,
    pub wall_time_secs: f64,
}

/// Full training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Training triples actually used after subsampling.
    pub triples_used: usize,
    pub best_validation_mrr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Writes one JSON object per epoch record.
    pub fn write_jsonl(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write as _;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for record in &self.epochs {
            let line = serde_json::to_string(record)?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// The splits and type assignments a training run consumes.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
    pub typemap: TypeMap,
}

/// Batch objective evaluated over fixed-size query chunks that can fan
/// out across threads; chunk merge order is fixed, so results do not
/// depend on thread scheduling. A chunk size covering the whole batch
/// reproduces the serial computation bit for bit.
fn batch_objective(
    params: &ModelParams,
    batch: &QueryBatch,
    typemap: &TypeMap,
    type_negatives: &[CatNegatives],
    category_relation: Option<usize>,
    config: &LossConfig,
    chunk_size: usize,
) -> Result<(f64, GradientBuffer)> {
    let hinge_config = LossConfig {
        l2_lambda: 0.0,
        ..config.clone()
    };
    let chunk_size = chunk_size.max(1);
    let chunks: Vec<(usize, usize)> = (0..batch.len())
        .step_by(chunk_size)
        .map(|start| (start, (start + chunk_size).min(batch.len())))
        .collect();
    let pieces: Vec<(f64, GradientBuffer)> = if chunks.len() > 1 {
        chunks
            .par_iter()
            .map(|&(start, end)| {
                let sub = QueryBatch {
                    queries: batch.queries[start..end].to_vec(),
                };
                let negs: &[CatNegatives] = if type_negatives.is_empty() {
                    &[]
                } else {
                    &type_negatives[start..end]
                };
                combined_objective_with(params, &sub, typemap, negs, category_relation, &hinge_config)
            })
            .collect::<Result<_>>()?
    } else {
        vec![combined_objective_with(
            params,
            batch,
            typemap,
            type_negatives,
            category_relation,
            &hinge_config,
        )?]
    };
    let mut total = 0.0;
    let mut grads = GradientBuffer::new(params.dim());
    for (loss, piece) in &pieces {
        total += loss;
        grads.merge(piece);
    }
    if config.l2_lambda > 0.0 {
        total += config.l2_lambda * params.squared_norm();
        let factor = 2.0 * config.l2_lambda;
        for entity in 0..params.num_entities() {
            grads
                .entity_entry(entity)
                .add_scaled(factor, params.entity(entity));
        }
        for relation in 0..params.num_relations() {
            grads
                .relation_entry(relation)
                .add_scaled(factor, params.relation(relation));
        }
    }
    Ok((total, grads))
}

/// Trains with a caller-supplied validation evaluator (the test seam for
/// early-stopping behavior). The evaluator receives the current
/// parameters and the epoch number and returns a validation MRR.
pub fn train_with_evaluator(
    config: &TrainConfig,
    data: &DataBundle,
    vocab: &Vocab,
    mut validate: impl FnMut(&ModelParams, usize) -> Result<f64>,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".to_string()));
    }
    if config.loss.alpha > 0.0 && vocab.category_relation().is_none() {
        return Err(Error::Config(
            "alpha > 0 requires a loaded type file (no category relation registered)".to_string(),
        ));
    }

    let train_set = if config.data_fraction < 1.0 {
        subsample(&data.train, config.data_fraction, config.seed ^ 0x5eed)?
    } else {
        data.train.clone()
    };
    let filter = build_filter(&data.train, &data.valid, &data.test);
    let mut params = ModelParams::init(
        vocab.num_entities(),
        vocab.num_relations(),
        config.dim,
        config.seed,
        config.init_scale,
    );
    let mut adam = AdamState::new(&params, config.adam);
    let mut clipper = MedianClipper::new(config.clip_factor);
    let mut sampler = SamplerState::new(vocab, &data.typemap, config.seed.wrapping_add(1));
    let chunk_size = if config.deterministic { usize::MAX } else { 64 };

    let mut log = TrainLog {
        triples_used: train_set.len(),
        ..TrainLog::default()
    };
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut evals_since_best = 0usize;

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut epoch_rng = ChaCha8Rng::from_seed(derive_seed(config.seed, 0x1000_0000 + epoch as u64));
        order.shuffle(&mut epoch_rng);

        let mut clip_events = 0usize;
        let mut objective_sum = 0.0;
        let mut batches = 0usize;
        let mut max_deviation: f64 = 0.0;

        for chunk in order.chunks(config.batch_size) {
            let mut queries = Vec::with_capacity(chunk.len());
            for &index in chunk {
                let positive = train_set.as_slice()[index];
                let negatives = sampler.corrupt_training(
                    &positive,
                    &data.typemap,
                    &filter,
                    config.negatives_per_positive,
                )?;
                let mut negative_targets = Vec::new();
                let mut negative_sources = Vec::new();
                for negative in negatives {
                    if negative.source == positive.source {
                        negative_targets.push(negative.target);
                    } else {
                        negative_sources.push(negative.source);
                    }
                }
                queries.push(Query {
                    positive,
                    negative_targets,
                    negative_sources,
                });
            }
            let batch = QueryBatch { queries };
            let type_negatives = if config.loss.alpha > 0.0 {
                draw_type_negatives(
                    &batch,
                    &data.typemap,
                    config.loss.neg_cats_per_positive,
                    &mut sampler,
                )
            } else {
                Vec::new()
            };
            let (objective, mut grads) = batch_objective(
                &params,
                &batch,
                &data.typemap,
                &type_negatives,
                vocab.category_relation(),
                &config.loss,
                chunk_size.min(batch.len()),
            )?;
            if !objective.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at epoch {epoch}, batch {batches}"
                )));
            }
            if clipper.clip(&mut grads) {
                clip_events += 1;
            }
            adam.apply(&mut params, &grads)?;
            params.project_entity_norms()?;
            max_deviation = max_deviation.max(params.max_norm_deviation());
            objective_sum += objective;
            batches += 1;
        }

        let mut record = EpochRecord {
            epoch,
            mean_batch_objective: objective_sum / batches.max(1) as f64,
            validation_mrr: None,
            clip_events,
            max_norm_deviation: max_deviation,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };

        if epoch % config.eval_cadence == 0 {
            let mrr = validate(&params, epoch)?;
            record.validation_mrr = Some(mrr);
            let improved = best.as_ref().is_none_or(|(b, _, _)| mrr > *b);
            if improved {
                best = Some((mrr, epoch, params.clone()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
            }
            log.epochs.push(record);
            if evals_since_best >= config.patience {
                log.stopped_early = true;
                break 'epochs;
            }
            continue;
        }
        log.epochs.push(record);
    }

    if let Some((mrr, epoch, best_params)) = best {
        log.best_validation_mrr = Some(mrr);
        log.best_epoch = Some(epoch);
        Ok((best_params, log))
    } else {
        Ok((params, log))
    }
}

/// A fixed validation subset of roughly `max_queries` ranking queries
/// (half that many triples, both directions each).
fn validation_subset(valid: &TripleSet, max_queries: usize, seed: u64) -> Result<TripleSet> {
    if max_queries == 0 || valid.len() * 2 <= max_queries {
        return Ok(valid.clone());
    }
    let triples_wanted = (max_queries / 2).max(1);
    let fraction = triples_wanted as f64 / valid.len() as f64;
    subsample(valid, fraction.min(1.0), seed)
}

/// Full training run with validation-MRR early stopping. Returns the
/// parameters from the best validation checkpoint together with the log.
pub fn train(config: &TrainConfig, data: &DataBundle, vocab: &Vocab) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let filter = build_filter(&data.train, &data.valid, &data.test);
    let val_set = validation_subset(&data.valid, config.val_queries, config.seed ^ 0xa11d)?;
    let eval_state = SamplerState::new(vocab, &data.typemap, config.seed.wrapping_add(2));
    let candidates = config.eval_candidates;
    let parallel = !config.deterministic;
    train_with_evaluator(config, data, vocab, |params, _epoch| {
        if val_set.is_empty() {
            return Ok(0.0);
        }
        let report = evaluate(
            params,
            &val_set,
            &filter,
            vocab,
            &eval_state,
            DirectionMode::Both,
            candidates,
            parallel,
        )?;
        Ok(report.mrr)
    })
}

/// One grid-search cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub l2_lambda: f64,
    pub validation_mrr: Option<f64>,
}

/// Grid-search outcome: the best (α, λ) pair by validation MRR plus the
/// full result table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best_alpha: f64,
    pub best_l2_lambda: f64,
    pub best_mrr: f64,
    pub table: Vec<GridPoint>,
}

/// Trains one model per (α, λ) grid point with a shared seed and returns
/// the pair maximizing validation MRR.
pub fn grid_search(
    template: &TrainConfig,
    alpha_grid: &[f64],
    lambda_grid: &[f64],
    data: &DataBundle,
    vocab: &Vocab,
) -> Result<GridSearchResult> {
    if alpha_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("grids must be nonempty".to_string()));
    }
    let mut table = Vec::with_capacity(alpha_grid.len() * lambda_grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in alpha_grid {
        for &lambda in lambda_grid {
            let mut config = template.clone();
            config.loss.alpha = alpha;
            config.loss.l2_lambda = lambda;
            let (_, log) = train(&config, data, vocab)?;
            let mrr = log.best_validation_mrr;
            table.push(GridPoint {
                alpha,
                l2_lambda: lambda,
                validation_mrr: mrr,
            });
            if let Some(mrr) = mrr {
                if best.is_none_or(|(b, _, _)| mrr > b) {
                    best = Some((mrr, alpha, lambda));
                }
            }
        }
    }
    let (best_mrr, best_alpha, best_l2_lambda) = best.ok_or_else(|| {
        Error::Config("no grid point produced a validation evaluation".to_string())
    })?;
    Ok(GridSearchResult {
        best_alpha,
        best_l2_lambda,
        best_mrr,
        table,
    })
}
