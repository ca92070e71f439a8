//! Filtered ranking evaluation: MRR and Hits@{1,3,10} over sampled
//! candidate sets, with per-relation and frequency-bucket breakdowns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{oom_bucket, Bucket, FreqIndex, Triple, TripleSet, Vocab};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sampler::{eval_candidates, Direction, EvalQuery, PositiveFilter, SamplerState};

/// Which query sets to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionMode {
    Target,
    Source,
    Both,
}

impl DirectionMode {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            DirectionMode::Target => &[Direction::Target],
            DirectionMode::Source => &[Direction::Source],
            DirectionMode::Both => &[Direction::Target, Direction::Source],
        }
    }
}

impl std::str::FromStr for DirectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(DirectionMode::Target),
            "source" => Ok(DirectionMode::Source),
            "both" => Ok(DirectionMode::Both),
            other => Err(Error::InvalidArgument(format!(
                "directions must be target, source, or both; got `{other}`"
            ))),
        }
    }
}

/// The outcome of one ranking query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub triple: Triple,
    pub direction: Direction,
    /// Mean-tie rank: `1 + |higher| + |ties|/2`.
    pub rank: f64,
    pub candidate_count: usize,
}

impl QueryResult {
    pub fn gold(&self) -> usize {
        match self.direction {
            Direction::Target => self.triple.target,
            Direction::Source => self.triple.source,
        }
    }
}

/// Aggregate ranking metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

/// MRR and Hits@K over a rank sequence. A fractional tie rank counts as a
/// hit iff it is ≤ K.
pub fn aggregate_metrics(ranks: impl IntoIterator<Item = f64>) -> Metrics {
    let mut mrr = 0.0;
    let mut hits = [0usize; 3];
    let mut count = 0usize;
    for rank in ranks {
        mrr += 1.0 / rank;
        for (slot, k) in hits.iter_mut().zip([1.0, 3.0, 10.0]) {
            if rank <= k {
                *slot += 1;
            }
        }
        count += 1;
    }
    let denom = count.max(1) as f64;
    Metrics {
        mrr: mrr / denom,
        hits1: hits[0] as f64 / denom,
        hits3: hits[1] as f64 / denom,
        hits10: hits[2] as f64 / denom,
        count,
    }
}

/// Per-relation metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub relation: String,
    pub mrr: f64,
    pub hits10: f64,
    pub count: usize,
}

/// Per-relation MRR table, with relations requested but absent from the
/// results listed separately.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationReport {
    pub rows: Vec<RelationRow>,
    pub missing: Vec<String>,
}

/// Metrics for one frequency bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub mrr: f64,
    pub hits10: f64,
    pub count: usize,
}

/// Query results grouped by the order of magnitude of training frequency,
/// once by the query's relation and once by the gold entity.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub by_relation_frequency: Vec<BucketRow>,
    pub by_entity_frequency: Vec<BucketRow>,
}

/// Full evaluation output. Per-query results are carried in memory for
/// breakdown reports but serialized separately (as CSV), not in the JSON
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
    pub directions: DirectionMode,
    pub candidates_per_query: usize,
    pub per_relation: Vec<RelationRow>,
    /// Frequency-bucket breakdowns, filled in when a training-split
    /// frequency index is attached (see [`EvalReport::attach_buckets`]).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_frequency_buckets: Vec<BucketRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relation_frequency_buckets: Vec<BucketRow>,
    #[serde(skip)]
    pub results: Vec<QueryResult>,
}

impl EvalReport {
    /// Computes the frequency-bucket breakdowns against a training-split
    /// frequency index.
    pub fn attach_buckets(&mut self, freq: &FreqIndex) {
        let buckets = bucket_report(&self.results, freq);
        self.entity_frequency_buckets = buckets.by_entity_frequency;
        self.relation_frequency_buckets = buckets.by_relation_frequency;
    }

    /// Rechecks the metric orderings before the report is written out.
    pub fn validate(&self) -> Result<()> {
        let ordered = self.hits1 <= self.hits3 + 1e-12
            && self.hits3 <= self.hits10 + 1e-12
            && self.hits10 <= 1.0 + 1e-12
            && self.mrr > 0.0
            && self.mrr <= 1.0 + 1e-12
            && self.mrr + 1e-12 >= self.hits1;
        if !ordered {
            return Err(Error::NonFinite(format!(
                "inconsistent metrics: mrr={} hits1={} hits3={} hits10={}",
                self.mrr, self.hits1, self.hits3, self.hits10
            )));
        }
        Ok(())
    }
}

/// Rank of the gold entity among scored candidates, with the mean-rank
/// tie convention: `1 + |higher scores| + |equal scores| / 2`. An empty
/// candidate list yields rank 1 with a warning.
pub fn rank_of_gold(
    params: &ModelParams,
    query: &EvalQuery,
    candidates: &[usize],
) -> Result<f64> {
    let gold = query.gold();
    let gold_score = params.score(
        query.triple.source,
        query.triple.relation,
        query.triple.target,
    )?;
    if candidates.is_empty() {
        log::warn!("ranking against an empty candidate list; rank defaults to 1");
        return Ok(1.0);
    }
    let mut higher = 0usize;
    let mut ties = 0usize;
    for &candidate in candidates {
        if candidate == gold {
            return Err(Error::InvalidArgument(
                "gold entity appears in the candidate list".to_string(),
            ));
        }
        let completed = query.completed_with(candidate);
        let score = params.score(completed.source, completed.relation, completed.target)?;
        if score > gold_score {
            higher += 1;
        } else if score == gold_score {
            ties += 1;
        }
    }
    Ok(1.0 + higher as f64 + ties as f64 / 2.0)
}

#[allow(clippy::too_many_arguments)]
fn run_query(
    params: &ModelParams,
    vocab: &Vocab,
    filter: &PositiveFilter,
    state: &SamplerState,
    query: EvalQuery,
    query_index: u64,
    candidates_per_query: usize,
) -> Result<QueryResult> {
    let draw = eval_candidates(&query, vocab, filter, state, query_index, candidates_per_query)?;
    for &candidate in &draw.candidates {
        // sampler contract, re-asserted per query
        if filter.contains(&query.completed_with(candidate)) {
            return Err(Error::InvalidArgument(format!(
                "candidate {candidate} completes a filtered positive for query {query_index}"
            )));
        }
    }
    let rank = rank_of_gold(params, &query, &draw.candidates)?;
    debug_assert!(rank >= 1.0 && rank <= draw.candidates.len() as f64 + 1.0);
    Ok(QueryResult {
        triple: query.triple,
        direction: query.direction,
        rank,
        candidate_count: draw.candidates.len(),
    })
}

/// Ranks every test triple in the requested directions against freshly
/// drawn filtered candidates. Per-query draws are seeded by the sampler's
/// base seed and the query index, so serial and parallel runs agree
/// exactly.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &ModelParams,
    test: &TripleSet,
    filter: &PositiveFilter,
    vocab: &Vocab,
    state: &SamplerState,
    mode: DirectionMode,
    candidates_per_query: usize,
    parallel: bool,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation over an empty triple set".to_string(),
        ));
    }
    let mut queries = Vec::with_capacity(test.len() * mode.directions().len());
    for (index, &triple) in test.iter().enumerate() {
        for &direction in mode.directions() {
            // indices are direction-stable so single-direction runs share
            // candidate draws with `both` runs
            let offset = match direction {
                Direction::Target => 0,
                Direction::Source => 1,
            };
            let query_index = (2 * index + offset) as u64;
            queries.push((EvalQuery { triple, direction }, query_index));
        }
    }
    let results: Vec<QueryResult> = if parallel {
        queries
            .par_iter()
            .map(|(query, index)| {
                run_query(params, vocab, filter, state, *query, *index, candidates_per_query)
            })
            .collect::<Result<_>>()?
    } else {
        queries
            .iter()
            .map(|(query, index)| {
                run_query(params, vocab, filter, state, *query, *index, candidates_per_query)
            })
            .collect::<Result<_>>()?
    };
    let metrics = aggregate_metrics(results.iter().map(|r| r.rank));
    let per_relation = relation_report(&results, vocab, None)?.rows;
    Ok(EvalReport {
        mrr: metrics.mrr,
        hits1: metrics.hits1,
        hits3: metrics.hits3,
        hits10: metrics.hits10,
        query_count: metrics.count,
        directions: mode,
        candidates_per_query,
        per_relation,
        entity_frequency_buckets: Vec::new(),
        relation_frequency_buckets: Vec::new(),
        results,
    })
}

/// Groups results by the order of magnitude of (a) the query relation's
/// training frequency and (b) the gold entity's training frequency.
pub fn bucket_report(results: &[QueryResult], freq: &FreqIndex) -> BucketReport {
    let mut by_relation: BTreeMap<Bucket, Vec<f64>> = BTreeMap::new();
    let mut by_entity: BTreeMap<Bucket, Vec<f64>> = BTreeMap::new();
    for result in results {
        by_relation
            .entry(oom_bucket(freq.relation_count(result.triple.relation)))
            .or_default()
            .push(result.rank);
        by_entity
            .entry(oom_bucket(freq.entity_count(result.gold())))
            .or_default()
            .push(result.rank);
    }
    let rows = |groups: BTreeMap<Bucket, Vec<f64>>| {
        groups
            .into_iter()
            .map(|(bucket, ranks)| {
                let metrics = aggregate_metrics(ranks);
                BucketRow {
                    bucket,
                    mrr: metrics.mrr,
                    hits10: metrics.hits10,
                    count: metrics.count,
                }
            })
            .collect()
    };
    BucketReport {
        by_relation_frequency: rows(by_relation),
        by_entity_frequency: rows(by_entity),
    }
}

/// Per-relation MRR over the queries whose relation matches. With a
/// relation list given, rows follow the list order and relations absent
/// from the results are reported in `missing`; otherwise all relations
/// present are returned, largest query count first.
pub fn relation_report(
    results: &[QueryResult],
    vocab: &Vocab,
    relations: Option<&[String]>,
) -> Result<RelationReport> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for result in results {
        groups
            .entry(result.triple.relation)
            .or_default()
            .push(result.rank);
    }
    let row = |relation: usize, ranks: Vec<f64>| -> Result<RelationRow> {
        let name = vocab
            .relation_name(relation)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("relation index {relation} not in vocabulary"))
            })?
            .to_string();
        let metrics = aggregate_metrics(ranks);
        Ok(RelationRow {
            relation: name,
            mrr: metrics.mrr,
            hits10: metrics.hits10,
            count: metrics.count,
        })
    };
    match relations {
        Some(names) => {
            let mut rows = Vec::new();
            let mut missing = Vec::new();
            for name in names {
                let relation = vocab.relation_id(name).ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown relation name `{name}`"))
                })?;
                match groups.remove(&relation) {
                    Some(ranks) => rows.push(row(relation, ranks)?),
                    None => {
                        log::warn!("relation `{name}` has no queries in the results; row omitted");
                        missing.push(name.clone());
                    }
                }
            }
            Ok(RelationReport { rows, missing })
        }
        None => {
            let mut rows = groups
                .into_iter()
                .map(|(relation, ranks)| row(relation, ranks))
                .collect::<Result<Vec<_>>>()?;
            rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.relation.cmp(&b.relation)));
            Ok(RelationReport {
                rows,
                missing: Vec::new(),
            })
        }
    }
}

/// Writes per-query ranks as `query_id,source,relation,target,direction,rank`.
pub fn write_ranks_csv(
    results: &[QueryResult],
    vocab: &Vocab,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "query_id,source,relation,target,direction,rank").map_err(|e| Error::io(path, e))?;
    for (id, result) in results.iter().enumerate() {
        let name = |entity: usize| vocab.entity_name(entity).unwrap_or("?");
        let relation = vocab.relation_name(result.triple.relation).unwrap_or("?");
        writeln!(
            out,
            "{id},{},{relation},{},{},{}",
            name(result.triple.source),
            name(result.triple.target),
            result.direction,
            result.rank
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a ranks CSV back, interning any names the vocabulary has not
/// seen (they keep zero training frequency, which is what bucket reports
/// need).
pub fn read_ranks_csv(path: impl AsRef<Path>, vocab: &mut Vocab) -> Result<Vec<QueryResult>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err("expected 6 comma-separated fields"));
        }
        let source = vocab.intern_entity(fields[1])?;
        let relation = vocab.intern_relation(fields[2]);
        let target = vocab.intern_entity(fields[3])?;
        let direction = match fields[4] {
            "target" => Direction::Target,
            "source" => Direction::Source,
            _ => return Err(parse_err("direction must be `target` or `source`")),
        };
        let rank: f64 = fields[5]
            .parse()
            .map_err(|_| parse_err("rank is not a number"))?;
        results.push(QueryResult {
            triple: Triple::new(source, relation, target),
            direction,
            rank,
            candidate_count: 0,
        });
    }
    Ok(results)
}

/// Writes one bucket table as `bucket,count,mrr,hits10` rows.
pub fn write_bucket_csv(rows: &[BucketRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "bucket,count,mrr,hits10").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(out, "{},{},{},{}", row.bucket, row.count, row.mrr, row.hits10)
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a per-relation table as `relation,count,mrr,hits10` rows.
pub fn write_relation_csv(rows: &[RelationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "relation,count,mrr,hits10").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.relation, row.count, row.mrr, row.hits10
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
