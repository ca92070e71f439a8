//! Negative sampling: type-constrained corruption of training triples,
//! negative categories for the regularizer, and filtered candidate draws
//! for ranking evaluation.
//!
//! Every sampled item is checked against the positive filter so that no
//! known true triple is ever presented as a negative.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Triple, TripleSet, TypeMap, Vocab};
use crate::error::{Error, Result};

/// Hashed membership over every known positive triple.
#[derive(Debug, Clone, Default)]
pub struct PositiveFilter {
    set: HashSet<Triple>,
}

impl PositiveFilter {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.set.contains(triple)
    }
}

/// Union of the train, validation, and test splits.
pub fn build_filter(train: &TripleSet, valid: &TripleSet, test: &TripleSet) -> PositiveFilter {
    let mut set = HashSet::with_capacity(train.len() + valid.len() + test.len());
    for split in [train, valid, test] {
        set.extend(split.iter().copied());
    }
    PositiveFilter { set }
}

/// Derives an independent stream seed from a base seed and an index, so
/// per-query and per-worker streams never alias.
pub fn derive_seed(base: u64, index: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&base.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    seed[16..24].copy_from_slice(&0x6b67_655f_7374_7265u64.to_le_bytes());
    seed
}

/// Which slot of a triple an evaluation query leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Predict the target of `(s, r, ?)`.
    Target,
    /// Predict the source of `(?, r, t)`.
    Source,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Target => "target",
            Direction::Source => "source",
        })
    }
}

/// A ranking query: a test triple with one slot held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalQuery {
    pub triple: Triple,
    pub direction: Direction,
}

impl EvalQuery {
    /// The entity the model is asked to recover.
    pub fn gold(&self) -> usize {
        match self.direction {
            Direction::Target => self.triple.target,
            Direction::Source => self.triple.source,
        }
    }

    /// The triple completed by a candidate entity in the open slot.
    pub fn completed_with(&self, candidate: usize) -> Triple {
        match self.direction {
            Direction::Target => {
                Triple::new(self.triple.source, self.triple.relation, candidate)
            }
            Direction::Source => {
                Triple::new(candidate, self.triple.relation, self.triple.target)
            }
        }
    }
}

/// Candidate entities for one evaluation query. `shortfall` counts how far
/// the draw fell short of the requested size because the legal pool was
/// smaller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDraw {
    pub candidates: Vec<usize>,
    pub shortfall: usize,
}

/// Seeded sampling state: a deterministic generator plus per-category
/// entity pools for type-constrained corruption.
#[derive(Debug, Clone)]
pub struct SamplerState {
    rng: ChaCha8Rng,
    base_seed: u64,
    /// category → entities bearing that category, ascending.
    pools: BTreeMap<usize, Vec<usize>>,
    num_plain_entities: usize,
    category_offset: usize,
    num_categories: usize,
    category_relation: Option<usize>,
    /// Draws that fell back to uniform sampling after the typed pool was
    /// exhausted or absent.
    pub fallback_draws: usize,
}

/// Attempts per requested negative before the typed pool is declared
/// exhausted (and again before uniform fallback gives up).
const RETRIES_PER_NEGATIVE: usize = 100;

impl SamplerState {
    pub fn new(vocab: &Vocab, typemap: &TypeMap, seed: u64) -> Self {
        let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (entity, cats) in typemap.iter() {
            for &cat in cats {
                pools.entry(cat).or_default().push(entity);
            }
        }
        for pool in pools.values_mut() {
            pool.sort_unstable();
            pool.dedup();
        }
        SamplerState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            base_seed: seed,
            pools,
            num_plain_entities: vocab.num_plain_entities(),
            category_offset: vocab.category_offset(),
            num_categories: vocab.num_categories(),
            category_relation: vocab.category_relation(),
            fallback_draws: 0,
        }
    }

    /// A derived state for a parallel worker; streams never overlap with
    /// the parent or with other workers.
    pub fn for_worker(&self, worker: u64) -> Self {
        let mut child = self.clone();
        child.rng = ChaCha8Rng::from_seed(derive_seed(self.base_seed, worker.wrapping_add(1)));
        child.fallback_draws = 0;
        child
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn category_relation(&self) -> Option<usize> {
        self.category_relation
    }

    fn uniform_plain_entity(&mut self) -> usize {
        self.rng.gen_range(0..self.num_plain_entities)
    }

    /// Draws one candidate replacement sharing at least one category with
    /// `entity`, or `None` when the entity is typeless.
    fn typed_candidate(&mut self, entity: usize, typemap: &TypeMap) -> Option<usize> {
        let cats = typemap.categories_of(entity)?;
        if cats.is_empty() {
            return None;
        }
        let pick = self.rng.gen_range(0..cats.len());
        let cat = *cats.iter().nth(pick).expect("index in range");
        let pool = self.pools.get(&cat)?;
        if pool.is_empty() {
            return None;
        }
        Some(pool[self.rng.gen_range(0..pool.len())])
    }

    /// One typed-then-uniform search for a negative in a fixed slot.
    /// `used` carries the negatives already drawn in this call when
    /// duplicates are still being avoided.
    fn draw_for_slot(
        &mut self,
        triple: &Triple,
        typemap: &TypeMap,
        filter: &PositiveFilter,
        corrupt_target: bool,
        used: Option<&HashSet<Triple>>,
    ) -> Option<Triple> {
        let replaced = if corrupt_target {
            triple.target
        } else {
            triple.source
        };
        let build = |candidate: usize| {
            if corrupt_target {
                Triple::new(triple.source, triple.relation, candidate)
            } else {
                Triple::new(candidate, triple.relation, triple.target)
            }
        };
        let accept = |candidate: usize| {
            let negative = build(candidate);
            candidate != replaced
                && !filter.contains(&negative)
                && used.is_none_or(|u| !u.contains(&negative))
        };
        if typemap.has_types(replaced) {
            for _ in 0..RETRIES_PER_NEGATIVE {
                if let Some(candidate) = self.typed_candidate(replaced, typemap) {
                    if accept(candidate) {
                        return Some(build(candidate));
                    }
                }
            }
        }
        self.fallback_draws += 1;
        for _ in 0..RETRIES_PER_NEGATIVE {
            let candidate = self.uniform_plain_entity();
            if accept(candidate) {
                return Some(build(candidate));
            }
        }
        None
    }

    /// Produces `k` corrupted versions of a training triple. Each negative
    /// corrupts the source or the target (chosen uniformly), preferring
    /// replacements that share a category with the replaced entity and
    /// falling back to uniform sampling when the typed pool is exhausted.
    /// No returned triple is a known positive or repeats the positive
    /// entity in the corrupted slot; negatives within one call are kept
    /// distinct wherever the legal pools allow it (the other slot is tried
    /// before a duplicate is accepted). Fails only when no admissible
    /// negative exists at all.
    pub fn corrupt_training(
        &mut self,
        triple: &Triple,
        typemap: &TypeMap,
        filter: &PositiveFilter,
        k: usize,
    ) -> Result<Vec<Triple>> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "corruption count k must be ≥ 1".to_string(),
            ));
        }
        let mut negatives = Vec::with_capacity(k);
        let mut used: HashSet<Triple> = HashSet::with_capacity(k);
        for _ in 0..k {
            let first_slot = self.rng.gen_bool(0.5);
            let mut found = None;
            'search: for respect_used in [true, false] {
                for corrupt_target in [first_slot, !first_slot] {
                    let dedup = respect_used.then_some(&used);
                    if let Some(negative) =
                        self.draw_for_slot(triple, typemap, filter, corrupt_target, dedup)
                    {
                        found = Some(negative);
                        break 'search;
                    }
                }
            }
            let Some(negative) = found else {
                return Err(Error::SamplingExhausted(format!(
                    "no admissible negative for triple ({}, {}, {})",
                    triple.source, triple.relation, triple.target
                )));
            };
            used.insert(negative);
            negatives.push(negative);
        }
        Ok(negatives)
    }

    /// Draws up to `m` distinct categories outside the entity's correct
    /// set, uniformly. Returns the whole complement when it has at most
    /// `m` members, and an empty list for typeless entities.
    pub fn sample_negative_categories(
        &mut self,
        entity: usize,
        typemap: &TypeMap,
        m: usize,
    ) -> Vec<usize> {
        let Some(correct) = typemap.categories_of(entity) else {
            return Vec::new();
        };
        if correct.is_empty() || self.num_categories == 0 {
            return Vec::new();
        }
        let universe_start = self.category_offset;
        let universe_end = self.category_offset + self.num_categories;
        let complement_size = self.num_categories - correct.len();
        if complement_size == 0 {
            return Vec::new();
        }
        if complement_size <= m {
            let mut all: Vec<usize> = (universe_start..universe_end)
                .filter(|c| !correct.contains(c))
                .collect();
            // put the exhaustive complement in a seed-determined order too
            for i in (1..all.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                all.swap(i, j);
            }
            return all;
        }
        let mut drawn = Vec::with_capacity(m);
        let mut seen = HashSet::with_capacity(m);
        while drawn.len() < m {
            let candidate = self.rng.gen_range(universe_start..universe_end);
            if correct.contains(&candidate) || !seen.insert(candidate) {
                continue;
            }
            drawn.push(candidate);
        }
        drawn
    }
}

/// Draws up to `n` distinct candidate entities for one evaluation query,
/// uniformly from the ordinary (non-category) entity set, excluding the
/// gold entity and any entity that completes a filtered positive. Draws
/// are seeded per query so reports are reproducible and parallelizable.
pub fn eval_candidates(
    query: &EvalQuery,
    vocab: &Vocab,
    filter: &PositiveFilter,
    state: &SamplerState,
    query_index: u64,
    n: usize,
) -> Result<CandidateDraw> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "candidate count must be ≥ 1".to_string(),
        ));
    }
    let pool = vocab.num_plain_entities();
    if pool == 0 {
        return Err(Error::InvalidArgument(
            "vocabulary has no ordinary entities".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::from_seed(derive_seed(state.base_seed(), query_index));
    let gold = query.gold();
    let legal = |candidate: usize| {
        candidate != gold && !filter.contains(&query.completed_with(candidate))
    };

    let mut candidates = Vec::with_capacity(n.min(pool));
    let mut seen = HashSet::with_capacity(n.min(pool));
    // rejection sampling first; fall back to exhaustive enumeration when
    // the legal pool is evidently small
    let attempt_budget = n.saturating_mul(50).max(1000);
    let mut attempts = 0;
    while candidates.len() < n && attempts < attempt_budget {
        attempts += 1;
        let candidate = rng.gen_range(0..pool);
        if !seen.insert(candidate) || !legal(candidate) {
            continue;
        }
        candidates.push(candidate);
    }
    if candidates.len() < n {
        let all_legal: Vec<usize> = (0..pool).filter(|&c| legal(c)).collect();
        if all_legal.len() <= n {
            let mut all = all_legal;
            for i in (1..all.len()).rev() {
                let j = rng.gen_range(0..=i);
                all.swap(i, j);
            }
            let shortfall = n - all.len();
            if shortfall > 0 {
                log::warn!(
                    "query {query_index}: only {} legal candidates for a request of {n}",
                    all.len()
                );
            }
            return Ok(CandidateDraw {
                candidates: all,
                shortfall,
            });
        }
        // legal pool is large after all; finish by sampling the remainder
        // from the enumerated pool without replacement
        let mut remaining: Vec<usize> = all_legal
            .into_iter()
            .filter(|c| !seen.contains(c))
            .collect();
        while candidates.len() < n {
            let pick = rng.gen_range(0..remaining.len());
            candidates.push(remaining.swap_remove(pick));
        }
    }
    Ok(CandidateDraw {
        candidates,
        shortfall: 0,
    })
}
