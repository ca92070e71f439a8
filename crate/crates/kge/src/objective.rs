//! The training objective: a max-margin ranking loss over corrupted
//! triples, an optional entity-type regularizer of the same max-margin
//! shape over category assignments, and an L2 penalty.
//!
//! Every term has the form `max(0, 1 − σ(sc) + σ(sc'))` where `sc` is the
//! bilinear score of a true statement and `sc'` the score of a corrupted
//! one. Gradients are exact subgradients: a term contributes
//! `−σ'(sc)·∂sc/∂θ + σ'(sc')·∂sc'/∂θ` while the hinge is active and
//! nothing otherwise (the kink itself is assigned subgradient zero).

use std::collections::BTreeMap;

use crate::corpus::{Triple, TypeMap};
use crate::error::{Error, Result};
use crate::model::{GradientBuffer, ModelParams};
use crate::sampler::SamplerState;

/// The margin enforced between squashed positive and negative scores.
/// Fixed by the loss definition, not a tuning knob.
pub const MARGIN: f64 = 1.0;

/// Weights and counts describing the combined objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Strength of the type regularizer (`0` disables it).
    pub alpha: f64,
    /// Coefficient of the squared-norm penalty on all parameters.
    pub l2_lambda: f64,
    /// Hinge margin; fixed at 1 and kept here for the record.
    pub margin: f64,
    /// Negative categories drawn per (entity, correct category) pair.
    pub neg_cats_per_positive: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.0,
            l2_lambda: 0.0,
            margin: MARGIN,
            neg_cats_per_positive: 4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be a finite value ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.l2_lambda < 0.0 || !self.l2_lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "l2_lambda must be a finite value ≥ 0, got {}",
                self.l2_lambda
            )));
        }
        Ok(())
    }
}

/// One positive triple with its corrupted negatives. Targets in
/// `negative_targets` replace the positive's target; sources in
/// `negative_sources` replace its source.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub positive: Triple,
    pub negative_targets: Vec<usize>,
    pub negative_sources: Vec<usize>,
}

impl Query {
    fn validate(&self) -> Result<()> {
        if self.negative_targets.is_empty() && self.negative_sources.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "query on triple ({}, {}, {}) has no negatives",
                self.positive.source, self.positive.relation, self.positive.target
            )));
        }
        if self.negative_targets.contains(&self.positive.target)
            || self.negative_sources.contains(&self.positive.source)
        {
            return Err(Error::InvalidArgument(
                "a negative equals the positive entity in the corrupted slot".to_string(),
            ));
        }
        Ok(())
    }
}

/// A mini-batch of ranking queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryBatch {
    pub queries: Vec<Query>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Negative-category draws for one query, keyed by
/// `(entity, correct category)`. When source and target coincide the two
/// sides share one set of lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatNegatives {
    lists: BTreeMap<(usize, usize), Vec<usize>>,
}

impl CatNegatives {
    pub fn insert(&mut self, entity: usize, correct: usize, negatives: Vec<usize>) {
        self.lists.insert((entity, correct), negatives);
    }

    pub fn get(&self, entity: usize, correct: usize) -> &[usize] {
        self.lists
            .get(&(entity, correct))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Overflow-safe logistic function, clamped to the open interval (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let value = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    value.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// σ'(x) expressed through the already-computed σ(x).
fn sigmoid_deriv(sig: f64) -> f64 {
    sig * (1.0 - sig)
}

/// The hinge `max(0, 1 − pos_sig + neg_sig)` contrasting a correct
/// statement against a corrupted one.
pub fn max_margin(pos_sig: f64, neg_sig: f64) -> f64 {
    (MARGIN - pos_sig + neg_sig).max(0.0)
}

/// Accumulates one hinge term. Returns the term's loss contribution and
/// adds the negative-side gradient; the positive-side weight is summed by
/// the caller so the positive triple's gradient is applied once.
fn hinge_term(
    params: &ModelParams,
    pos_sig: f64,
    neg: Triple,
    grads: &mut GradientBuffer,
    pos_weight: &mut f64,
) -> Result<f64> {
    let neg_score = params.score(neg.source, neg.relation, neg.target)?;
    let neg_sig = sigmoid(neg_score);
    let value = MARGIN - pos_sig + neg_sig;
    if value <= 0.0 {
        return Ok(0.0);
    }
    *pos_weight -= sigmoid_deriv(pos_sig);
    params.accumulate_score_grads(
        neg.source,
        neg.relation,
        neg.target,
        sigmoid_deriv(neg_sig),
        grads,
    )?;
    Ok(value)
}

/// Max-margin ranking loss over a batch of corrupted queries, with exact
/// subgradients.
pub fn relation_loss(params: &ModelParams, batch: &QueryBatch) -> Result<(f64, GradientBuffer)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "relation loss over an empty batch".to_string(),
        ));
    }
    let mut total = 0.0;
    let mut grads = GradientBuffer::new(params.dim());
    for query in &batch.queries {
        query.validate()?;
        let positive = query.positive;
        let pos_score = params.score(positive.source, positive.relation, positive.target)?;
        let pos_sig = sigmoid(pos_score);
        let mut pos_weight = 0.0;
        for &neg_target in &query.negative_targets {
            total += hinge_term(
                params,
                pos_sig,
                Triple::new(positive.source, positive.relation, neg_target),
                &mut grads,
                &mut pos_weight,
            )?;
        }
        for &neg_source in &query.negative_sources {
            total += hinge_term(
                params,
                pos_sig,
                Triple::new(neg_source, positive.relation, positive.target),
                &mut grads,
                &mut pos_weight,
            )?;
        }
        if pos_weight != 0.0 {
            params.accumulate_score_grads(
                positive.source,
                positive.relation,
                positive.target,
                pos_weight,
                &mut grads,
            )?;
        }
    }
    Ok((total, grads))
}

fn entity_type_terms(
    params: &ModelParams,
    entity: usize,
    typemap: &TypeMap,
    neg_cats: &CatNegatives,
    category_relation: usize,
    total: &mut f64,
    grads: &mut GradientBuffer,
) -> Result<()> {
    let Some(correct_cats) = typemap.categories_of(entity) else {
        return Ok(());
    };
    for &correct in correct_cats {
        let negatives = neg_cats.get(entity, correct);
        if negatives.is_empty() {
            continue;
        }
        let pos_score = params.score(entity, category_relation, correct)?;
        let pos_sig = sigmoid(pos_score);
        let mut pos_weight = 0.0;
        for &neg in negatives {
            if correct_cats.contains(&neg) {
                return Err(Error::InvalidArgument(format!(
                    "category {neg} offered as a negative but belongs to entity {entity}'s correct set"
                )));
            }
            *total += hinge_term(
                params,
                pos_sig,
                Triple::new(entity, category_relation, neg),
                grads,
                &mut pos_weight,
            )?;
        }
        if pos_weight != 0.0 {
            params.accumulate_score_grads(entity, category_relation, correct, pos_weight, grads)?;
        }
    }
    Ok(())
}

/// The type regularizer for one query: entities should score their correct
/// categories above sampled false ones through the category relation. The
/// source and target sums are both included; typeless entities contribute
/// nothing.
pub fn type_reg_loss(
    params: &ModelParams,
    source: usize,
    target: usize,
    typemap: &TypeMap,
    neg_cats: &CatNegatives,
    category_relation: usize,
) -> Result<(f64, GradientBuffer)> {
    let mut total = 0.0;
    let mut grads = GradientBuffer::new(params.dim());
    entity_type_terms(
        params,
        source,
        typemap,
        neg_cats,
        category_relation,
        &mut total,
        &mut grads,
    )?;
    entity_type_terms(
        params,
        target,
        typemap,
        neg_cats,
        category_relation,
        &mut total,
        &mut grads,
    )?;
    Ok((total, grads))
}

/// Draws fresh negative categories for every query in a batch: one list
/// per (entity, correct category) pair, for the source and target of each
/// query. Draw order is deterministic given the sampler's stream.
pub fn draw_type_negatives(
    batch: &QueryBatch,
    typemap: &TypeMap,
    per_positive: usize,
    state: &mut SamplerState,
) -> Vec<CatNegatives> {
    let mut out = Vec::with_capacity(batch.len());
    for query in &batch.queries {
        let mut negs = CatNegatives::default();
        let positive = query.positive;
        let mut entities = vec![positive.source];
        if positive.target != positive.source {
            entities.push(positive.target);
        }
        for entity in entities {
            if let Some(correct_cats) = typemap.categories_of(entity) {
                for &correct in correct_cats {
                    let drawn = state.sample_negative_categories(entity, typemap, per_positive);
                    negs.insert(entity, correct, drawn);
                }
            }
        }
        out.push(negs);
    }
    out
}

/// The full objective for fixed, caller-supplied negative categories:
/// ranking loss, plus `alpha` times the per-query type regularizer, plus
/// `l2_lambda` times the squared norm of every parameter.
///
/// `type_negatives` must be parallel to the batch when `alpha > 0`; pass
/// an empty slice when `alpha == 0`.
pub fn combined_objective_with(
    params: &ModelParams,
    batch: &QueryBatch,
    typemap: &TypeMap,
    type_negatives: &[CatNegatives],
    category_relation: Option<usize>,
    config: &LossConfig,
) -> Result<(f64, GradientBuffer)> {
    config.validate()?;
    let (mut total, mut grads) = relation_loss(params, batch)?;
    if config.alpha > 0.0 {
        let r_cat = category_relation.ok_or_else(|| {
            Error::InvalidArgument(
                "type regularizer enabled but no category relation is registered".to_string(),
            )
        })?;
        if type_negatives.len() != batch.len() {
            return Err(Error::InvalidArgument(format!(
                "{} negative-category sets for a batch of {} queries",
                type_negatives.len(),
                batch.len()
            )));
        }
        for (query, negs) in batch.queries.iter().zip(type_negatives) {
            let (reg, reg_grads) = type_reg_loss(
                params,
                query.positive.source,
                query.positive.target,
                typemap,
                negs,
                r_cat,
            )?;
            total += config.alpha * reg;
            grads.merge_scaled(config.alpha, &reg_grads);
        }
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

/// As [`combined_objective_with`], drawing the negative categories from
/// the sampler.
pub fn combined_objective(
    params: &ModelParams,
    batch: &QueryBatch,
    typemap: &TypeMap,
    config: &LossConfig,
    state: &mut SamplerState,
) -> Result<(f64, GradientBuffer)> {
    let type_negatives = if config.alpha > 0.0 {
        draw_type_negatives(batch, typemap, config.neg_cats_per_positive, state)
    } else {
        Vec::new()
    };
    combined_objective_with(
        params,
        batch,
        typemap,
        &type_negatives,
        state.category_relation(),
        config,
    )
}

/// Pre-max hinge values `1 − σ(sc) + σ(sc')` for every term of the
/// objective, in evaluation order. Used by the gradient-check harness to
/// detect instances with terms near the non-differentiable kink.
pub fn hinge_margins(
    params: &ModelParams,
    batch: &QueryBatch,
    typemap: &TypeMap,
    type_negatives: &[CatNegatives],
    category_relation: Option<usize>,
) -> Result<Vec<f64>> {
    let mut margins = Vec::new();
    let mut push_pair = |pos: Triple, neg: Triple| -> Result<()> {
        let pos_sig = sigmoid(params.score(pos.source, pos.relation, pos.target)?);
        let neg_sig = sigmoid(params.score(neg.source, neg.relation, neg.target)?);
        margins.push(MARGIN - pos_sig + neg_sig);
        Ok(())
    };
    for (index, query) in batch.queries.iter().enumerate() {
        let positive = query.positive;
        for &neg in &query.negative_targets {
            push_pair(
                positive,
                Triple::new(positive.source, positive.relation, neg),
            )?;
        }
        for &neg in &query.negative_sources {
            push_pair(
                positive,
                Triple::new(neg, positive.relation, positive.target),
            )?;
        }
        let (Some(negs), Some(r_cat)) = (type_negatives.get(index), category_relation) else {
            continue;
        };
        let mut entities = vec![positive.source];
        if positive.target != positive.source {
            entities.push(positive.target);
        }
        for entity in entities {
            if let Some(correct_cats) = typemap.categories_of(entity) {
                for &correct in correct_cats {
                    for &neg in negs.get(entity, correct) {
                        push_pair(
                            Triple::new(entity, r_cat, correct),
                            Triple::new(entity, r_cat, neg),
                        )?;
                    }
                }
            }
        }
    }
    Ok(margins)
}
