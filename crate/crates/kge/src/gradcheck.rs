//! Finite-difference verification of the combined objective's gradients
//! on randomly generated toy instances.
//!
//! Each instance builds a small typed graph, draws a query batch with
//! fixed negatives, and compares every analytic partial derivative
//! against central differences. Instances whose hinge terms land near the
//! non-differentiable kink are regenerated, since no subgradient can match
//! a finite difference straddling the kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Triple, TypeMap};
use crate::error::{Error, Result};
use crate::model::{GradientBuffer, ModelParams};
use crate::objective::{
    combined_objective_with, hinge_margins, CatNegatives, LossConfig, Query, QueryBatch,
};
use crate::sampler::derive_seed;

/// Harness settings.
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Number of random instances.
    pub instances: usize,
    /// Embedding dimensions cycled across instances.
    pub dims: Vec<usize>,
    /// Regularizer strengths cycled across instances.
    pub alphas: Vec<f64>,
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance.
    pub rel_tol: f64,
    /// Absolute tolerance near zero.
    pub abs_tol: f64,
    pub base_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            instances: 20,
            dims: vec![2, 5],
            alphas: vec![0.0, 1.0],
            step: 1e-5,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            base_seed: 20_240_901,
        }
    }
}

/// Aggregate harness outcome.
#[derive(Debug, Clone, Default)]
pub struct GradCheckSummary {
    pub instances: usize,
    /// Largest relative error over coordinates with healthy gradient
    /// magnitude (≥ 1e-3).
    pub max_rel_error: f64,
    /// Largest absolute error over near-zero coordinates.
    pub max_abs_error: f64,
    /// Instances regenerated because a hinge term sat near its kink.
    pub resampled: usize,
    /// Human-readable descriptions of failing parameter blocks.
    pub failures: Vec<String>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// One generated toy instance: five ordinary entities, three categories,
/// two ordinary relations plus the category relation.
struct Instance {
    params: ModelParams,
    typemap: TypeMap,
    batch: QueryBatch,
    type_negatives: Vec<CatNegatives>,
    config: LossConfig,
}

const ORDINARY: usize = 5;
const CATEGORIES: usize = 3;
const CATEGORY_RELATION: usize = 2;

fn generate(seed: u64, dim: usize, alpha: f64) -> Instance {
    let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, 0x9c));
    let mut params = ModelParams::init(ORDINARY + CATEGORIES, 3, dim, seed, 0.8);
    if seed.is_multiple_of(3) {
        // occasionally blow one relation up so some hinges saturate and
        // the inactive-side subgradient (zero) gets exercised too
        params.relation_mut(0).scale(6.0);
    }

    let mut typemap = TypeMap::new();
    for entity in 0..ORDINARY {
        let first = ORDINARY + rng.gen_range(0..CATEGORIES);
        typemap.insert(entity, first);
        if rng.gen_bool(0.4) {
            let second = ORDINARY + rng.gen_range(0..CATEGORIES);
            typemap.insert(entity, second);
        }
    }

    let mut queries = Vec::new();
    for _ in 0..2 {
        let source = rng.gen_range(0..ORDINARY);
        let target = rng.gen_range(0..ORDINARY);
        let relation = rng.gen_range(0..2);
        let mut negative_targets = Vec::new();
        while negative_targets.len() < 2 {
            let candidate = rng.gen_range(0..ORDINARY);
            if candidate != target && !negative_targets.contains(&candidate) {
                negative_targets.push(candidate);
            }
        }
        let mut negative_sources = Vec::new();
        if rng.gen_bool(0.5) {
            loop {
                let candidate = rng.gen_range(0..ORDINARY);
                if candidate != source {
                    negative_sources.push(candidate);
                    break;
                }
            }
        }
        queries.push(Query {
            positive: Triple::new(source, relation, target),
            negative_targets,
            negative_sources,
        });
    }
    let batch = QueryBatch { queries };

    let mut type_negatives = Vec::new();
    for query in &batch.queries {
        let mut negs = CatNegatives::default();
        for entity in [query.positive.source, query.positive.target] {
            if let Some(correct_cats) = typemap.categories_of(entity) {
                let correct_cats = correct_cats.clone();
                for &correct in &correct_cats {
                    let complement: Vec<usize> = (ORDINARY..ORDINARY + CATEGORIES)
                        .filter(|c| !correct_cats.contains(c))
                        .collect();
                    let take = complement.len().min(2);
                    let mut drawn = Vec::new();
                    while drawn.len() < take {
                        let candidate = complement[rng.gen_range(0..complement.len())];
                        if !drawn.contains(&candidate) {
                            drawn.push(candidate);
                        }
                    }
                    negs.insert(entity, correct, drawn);
                }
            }
        }
        type_negatives.push(negs);
    }

    let config = LossConfig {
        alpha,
        l2_lambda: if seed.is_multiple_of(2) { 0.0 } else { 0.01 },
        ..LossConfig::default()
    };
    Instance {
        params,
        typemap,
        batch,
        type_negatives,
        config,
    }
}

/// Distance from any hinge kink below which an instance is regenerated.
/// Parameter perturbations of `step` move a margin by far less than this.
const KINK_EXCLUSION: f64 = 1e-4;

fn instance_is_clean(instance: &Instance) -> Result<bool> {
    let margins = hinge_margins(
        &instance.params,
        &instance.batch,
        &instance.typemap,
        &instance.type_negatives,
        Some(CATEGORY_RELATION),
    )?;
    Ok(margins.iter().all(|m| m.abs() > KINK_EXCLUSION))
}

fn objective_value(instance: &Instance, params: &ModelParams) -> Result<f64> {
    Ok(combined_objective_with(
        params,
        &instance.batch,
        &instance.typemap,
        &instance.type_negatives,
        Some(CATEGORY_RELATION),
        &instance.config,
    )?
    .0)
}

struct CoordCheck<'a> {
    summary: &'a mut GradCheckSummary,
    options: &'a GradCheckOptions,
}

impl CoordCheck<'_> {
    fn check(&mut self, block: &str, coord: String, analytic: f64, fd: f64) {
        let err = (analytic - fd).abs();
        let denom = analytic.abs().max(fd.abs());
        if denom >= 1e-3 {
            self.summary.max_rel_error = self.summary.max_rel_error.max(err / denom);
        } else {
            self.summary.max_abs_error = self.summary.max_abs_error.max(err);
        }
        if err > self.options.abs_tol.max(self.options.rel_tol * denom) {
            self.summary.failures.push(format!(
                "{block} {coord}: analytic {analytic:.3e} vs finite difference {fd:.3e} (err {err:.3e})"
            ));
        }
    }
}

/// Runs the suite and reports the worst errors together with any failing
/// parameter blocks.
pub fn run(options: &GradCheckOptions) -> Result<GradCheckSummary> {
    if options.instances == 0 || options.dims.is_empty() || options.alphas.is_empty() {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one instance, dimension, and alpha".to_string(),
        ));
    }
    let mut summary = GradCheckSummary::default();
    for index in 0..options.instances {
        let dim = options.dims[index % options.dims.len()];
        let alpha = options.alphas[(index / options.dims.len()) % options.alphas.len()];
        let mut seed = options
            .base_seed
            .wrapping_add(index as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut instance = generate(seed, dim, alpha);
        let mut attempts = 0;
        while !instance_is_clean(&instance)? {
            attempts += 1;
            summary.resampled += 1;
            if attempts > 50 {
                return Err(Error::SamplingExhausted(
                    "could not generate an instance clear of hinge kinks".to_string(),
                ));
            }
            seed = seed.wrapping_add(0x1_0000);
            instance = generate(seed, dim, alpha);
        }
        summary.instances += 1;

        let (_, grads) = combined_objective_with(
            &instance.params,
            &instance.batch,
            &instance.typemap,
            &instance.type_negatives,
            Some(CATEGORY_RELATION),
            &instance.config,
        )?;
        check_instance(&instance, &grads, options, &mut summary)?;
    }
    Ok(summary)
}

fn check_instance(
    instance: &Instance,
    grads: &GradientBuffer,
    options: &GradCheckOptions,
    summary: &mut GradCheckSummary,
) -> Result<()> {
    let params = &instance.params;
    let step = options.step;
    let zero_vec = crate::kernel::Vector::zeros(params.dim());
    let zero_mat = crate::kernel::Matrix::zeros(params.dim());
    let mut checker = CoordCheck { summary, options };
    for entity in 0..params.num_entities() {
        let analytic = grads.entities.get(&entity).unwrap_or(&zero_vec);
        for i in 0..params.dim() {
            let mut plus = params.clone();
            plus.entity_mut(entity).0[i] += step;
            let mut minus = params.clone();
            minus.entity_mut(entity).0[i] -= step;
            let fd = (objective_value(instance, &plus)? - objective_value(instance, &minus)?)
                / (2.0 * step);
            checker.check(
                &format!("entity {entity}"),
                format!("[{i}]"),
                analytic.0[i],
                fd,
            );
        }
    }
    for relation in 0..params.num_relations() {
        let analytic = grads.relations.get(&relation).unwrap_or(&zero_mat);
        for i in 0..params.dim() {
            for j in 0..params.dim() {
                let base = params.relation(relation).get(i, j);
                let mut plus = params.clone();
                plus.relation_mut(relation).set(i, j, base + step);
                let mut minus = params.clone();
                minus.relation_mut(relation).set(i, j, base - step);
                let fd = (objective_value(instance, &plus)?
                    - objective_value(instance, &minus)?)
                    / (2.0 * step);
                checker.check(
                    &format!("relation {relation}"),
                    format!("[{i},{j}]"),
                    analytic.get(i, j),
                    fd,
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let options = GradCheckOptions {
            instances: 6,
            ..GradCheckOptions::default()
        };
        let summary = run(&options).unwrap();
        assert!(summary.passed(), "failures: {:?}", summary.failures);
        assert!(summary.max_rel_error <= 1e-5);
        assert!(summary.max_abs_error <= 1e-8);
    }

    #[test]
    fn alpha_one_exercises_type_terms() {
        let options = GradCheckOptions {
            instances: 4,
            alphas: vec![1.0],
            ..GradCheckOptions::default()
        };
        let summary = run(&options).unwrap();
        assert!(summary.passed(), "failures: {:?}", summary.failures);
    }

    #[test]
    fn rejects_degenerate_options() {
        let options = GradCheckOptions {
            instances: 0,
            ..GradCheckOptions::default()
        };
        assert!(run(&options).is_err());
    }
}
