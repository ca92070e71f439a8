//! Acceptance suite: every criterion runs as its own test and prints one
//! pass line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kge::cli::{cmd_eval, cmd_train, RunConfig};
use kge::corpus::{load_triples, load_type_map, SplitRole, Triple, TripleSet, TypeMap, Vocab};
use kge::eval::{aggregate_metrics, evaluate, rank_of_gold, DirectionMode};
use kge::gradcheck::{run as run_gradcheck, GradCheckOptions};
use kge::model::ModelParams;
use kge::objective::{
    combined_objective_with, relation_loss, CatNegatives, LossConfig, Query, QueryBatch,
};
use kge::optim::{train, AdamConfig, DataBundle, TrainConfig};
use kge::sampler::{build_filter, eval_candidates, Direction, EvalQuery, SamplerState};

use common::{generate_typed_kg, KgFiles, KgSpec};

fn pass(name: &str) {
    println!("ACCEPTANCE PASS: {name}");
}

fn load_bundle(files: &KgFiles) -> (Vocab, DataBundle) {
    let mut vocab = Vocab::new();
    let train = load_triples(&files.train, &mut vocab, SplitRole::Train).unwrap();
    let valid = load_triples(&files.valid, &mut vocab, SplitRole::Valid).unwrap();
    let test = load_triples(&files.test, &mut vocab, SplitRole::Test).unwrap();
    let (typemap, _) = load_type_map(&files.types, &mut vocab).unwrap();
    (
        vocab,
        DataBundle {
            train,
            valid,
            test,
            typemap,
        },
    )
}

/// Gradient exactness: 20 random toy instances (d ∈ {2, 5}, 8 entities,
/// 2 relations plus the category relation, α ∈ {0, 1}); every analytic
/// gradient matches central finite differences at relative tolerance 1e-5
/// (absolute 1e-8 near zero), hinge-boundary terms excluded by
/// construction.
#[test]
fn acceptance_gradient_exactness() {
    let options = GradCheckOptions::default();
    assert_eq!(options.instances, 20);
    assert_eq!(options.dims, vec![2, 5]);
    assert_eq!(options.alphas, vec![0.0, 1.0]);
    assert_eq!(options.rel_tol, 1e-5);
    assert_eq!(options.abs_tol, 1e-8);
    let summary = run_gradcheck(&options).unwrap();
    assert_eq!(summary.instances, 20);
    assert!(
        summary.passed(),
        "gradient check failures: {:?}",
        summary.failures
    );
    pass("gradient exactness (20 instances, rel tol 1e-5)");
}

/// Sort-based rank oracle with the mean-tie convention.
fn oracle_rank(candidate_scores: &[f64], gold_score: f64) -> f64 {
    let mut scores = candidate_scores.to_vec();
    scores.push(gold_score);
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let positions: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == gold_score)
        .map(|(i, _)| i + 1)
        .collect();
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// Ranking oracle equivalence: over 100 seeded random graphs (≤ 50
/// entities) with the full legal candidate set, rank_of_gold, MRR, and
/// Hits@{1,3,10} match the brute-force oracle exactly.
#[test]
fn acceptance_ranking_oracle_equivalence() {
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial);
        let num_entities = rng.gen_range(10..=50);
        let num_relations = rng.gen_range(1..=3);
        let mut vocab = Vocab::new();
        for e in 0..num_entities {
            vocab.intern_entity(&format!("e{e}")).unwrap();
        }
        for r in 0..num_relations {
            vocab.intern_relation(&format!("r{r}"));
        }
        let params = ModelParams::init(num_entities, num_relations, 6, trial, 0.5);

        let mut random_set = |role: SplitRole, count: usize| {
            let mut set = TripleSet::new(role);
            for _ in 0..count {
                set.insert(Triple::new(
                    rng.gen_range(0..num_entities),
                    rng.gen_range(0..num_relations),
                    rng.gen_range(0..num_entities),
                ));
            }
            set
        };
        let train = random_set(SplitRole::Train, num_entities * 3);
        let valid = random_set(SplitRole::Valid, num_entities / 2);
        let test = random_set(SplitRole::Test, 8);
        let filter = build_filter(&train, &valid, &test);
        let state = SamplerState::new(&vocab, &TypeMap::new(), trial);

        let mut system_ranks = Vec::new();
        let mut oracle_ranks = Vec::new();
        for (index, &triple) in test.iter().enumerate() {
            for (offset, direction) in [Direction::Target, Direction::Source]
                .into_iter()
                .enumerate()
            {
                let query = EvalQuery { triple, direction };
                let gold = match direction {
                    Direction::Target => triple.target,
                    Direction::Source => triple.source,
                };
                // the full legal candidate set, enumerated independently
                let legal: BTreeSet<usize> = (0..num_entities)
                    .filter(|&c| c != gold && !filter.contains(&query.completed_with(c)))
                    .collect();
                let draw = eval_candidates(
                    &query,
                    &vocab,
                    &filter,
                    &state,
                    (2 * index + offset) as u64,
                    num_entities + 10,
                )
                .unwrap();
                let drawn: BTreeSet<usize> = draw.candidates.iter().copied().collect();
                assert_eq!(drawn, legal, "candidate draw is not the full legal set");

                let rank = rank_of_gold(&params, &query, &draw.candidates).unwrap();
                let gold_score = params
                    .score(triple.source, triple.relation, triple.target)
                    .unwrap();
                let scores: Vec<f64> = draw
                    .candidates
                    .iter()
                    .map(|&c| {
                        let t = query.completed_with(c);
                        params.score(t.source, t.relation, t.target).unwrap()
                    })
                    .collect();
                let expected = oracle_rank(&scores, gold_score);
                assert_eq!(rank, expected, "rank mismatch on trial {trial}");
                system_ranks.push(rank);
                oracle_ranks.push(expected);
            }
        }
        let system = aggregate_metrics(system_ranks.iter().copied());
        // independent metric arithmetic over the oracle's ranks
        let n = oracle_ranks.len() as f64;
        let mrr: f64 = oracle_ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let hits = |k: f64| oracle_ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        assert_eq!(system.mrr, mrr);
        assert_eq!(system.hits1, hits(1.0));
        assert_eq!(system.hits3, hits(3.0));
        assert_eq!(system.hits10, hits(10.0));
    }
    pass("ranking oracle equivalence (100 trials, exact)");
}

/// α = 1 decomposition: with fixed shared negatives, the combined
/// objective equals the ranking loss on the relation triples plus the
/// ranking loss on the corresponding category triples, within 1e-10.
#[test]
fn acceptance_alpha_one_decomposition() {
    // 6 ordinary entities, 4 categories, 2 ordinary relations + r_cat = 2
    let params = ModelParams::init(10, 3, 5, 77, 0.6);
    let r_cat = 2usize;
    let mut typemap = TypeMap::new();
    typemap.insert(0, 6);
    typemap.insert(0, 7);
    typemap.insert(1, 8);
    typemap.insert(2, 9);
    typemap.insert(3, 6);

    let batch = QueryBatch {
        queries: vec![
            Query {
                positive: Triple::new(0, 0, 1),
                negative_targets: vec![2, 3, 4],
                negative_sources: vec![5],
            },
            Query {
                positive: Triple::new(2, 1, 3),
                negative_targets: vec![0, 5],
                negative_sources: vec![],
            },
            Query {
                positive: Triple::new(1, 0, 1),
                negative_targets: vec![4],
                negative_sources: vec![0],
            },
        ],
    };
    // fixed shared negative categories
    let mut type_negatives = Vec::new();
    for query in &batch.queries {
        let mut negs = CatNegatives::default();
        for entity in [query.positive.source, query.positive.target] {
            if let Some(cats) = typemap.categories_of(entity) {
                let correct = cats.clone();
                for &cat in &correct {
                    let complement: Vec<usize> =
                        (6..10).filter(|c| !correct.contains(c)).collect();
                    negs.insert(entity, cat, complement);
                }
            }
        }
        type_negatives.push(negs);
    }

    let config = LossConfig {
        alpha: 1.0,
        ..LossConfig::default()
    };
    let (combined, _) = combined_objective_with(
        &params,
        &batch,
        &typemap,
        &type_negatives,
        Some(r_cat),
        &config,
    )
    .unwrap();

    // the same regularizer terms restated as ranking queries over the
    // category relation (one extra slice of the factorized tensor); the
    // source and target sums both contribute, so a self-loop query lists
    // its entity's category queries twice
    let mut category_queries = Vec::new();
    for (query, negs) in batch.queries.iter().zip(&type_negatives) {
        for entity in [query.positive.source, query.positive.target] {
            if let Some(cats) = typemap.categories_of(entity) {
                for &correct in cats {
                    let negatives = negs.get(entity, correct);
                    if !negatives.is_empty() {
                        category_queries.push(Query {
                            positive: Triple::new(entity, r_cat, correct),
                            negative_targets: negatives.to_vec(),
                            negative_sources: vec![],
                        });
                    }
                }
            }
        }
    }
    let (relation_part, _) = relation_loss(&params, &batch).unwrap();
    let (category_part, _) = relation_loss(
        &params,
        &QueryBatch {
            queries: category_queries,
        },
    )
    .unwrap();
    let difference = (combined - (relation_part + category_part)).abs();
    assert!(
        difference <= 1e-10,
        "decomposition off by {difference:e} (combined {combined}, parts {})",
        relation_part + category_part
    );
    pass("alpha = 1 decomposition (within 1e-10)");
}

/// Filter soundness: 10,000 sampled training negatives and 1,000
/// evaluation candidate draws never produce a filtered positive.
#[test]
fn acceptance_filter_soundness() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_typed_kg(dir.path(), &KgSpec::small());
    let (vocab, data) = load_bundle(&files);
    let filter = build_filter(&data.train, &data.valid, &data.test);

    let mut state = SamplerState::new(&vocab, &data.typemap, 13);
    let mut training_negatives = 0usize;
    'outer: loop {
        for positive in data.train.iter() {
            let negatives = state
                .corrupt_training(positive, &data.typemap, &filter, 5)
                .unwrap();
            for negative in negatives {
                assert!(
                    !filter.contains(&negative),
                    "sampled training negative is a filtered positive"
                );
                training_negatives += 1;
                if training_negatives >= 10_000 {
                    break 'outer;
                }
            }
        }
    }

    let eval_state = SamplerState::new(&vocab, &data.typemap, 14);
    let mut draws = 0usize;
    'eval: loop {
        for (index, &triple) in data.test.iter().enumerate() {
            for (offset, direction) in [Direction::Target, Direction::Source]
                .into_iter()
                .enumerate()
            {
                let query = EvalQuery { triple, direction };
                let draw = eval_candidates(
                    &query,
                    &vocab,
                    &filter,
                    &eval_state,
                    (1000 * draws + 2 * index + offset) as u64,
                    50,
                )
                .unwrap();
                for &candidate in &draw.candidates {
                    assert!(
                        !filter.contains(&query.completed_with(candidate)),
                        "evaluation candidate completes a filtered positive"
                    );
                }
                draws += 1;
                if draws >= 1_000 {
                    break 'eval;
                }
            }
        }
    }
    pass("filter soundness (10,000 training negatives + 1,000 eval draws)");
}

/// Unit-norm maintenance: over a 20-epoch toy run, the largest entity-norm
/// deviation observed after any optimizer step stays within 1e-6.
#[test]
fn acceptance_unit_norm_maintenance() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_typed_kg(dir.path(), &KgSpec::small());
    let (vocab, data) = load_bundle(&files);
    let config = TrainConfig {
        epochs: 20,
        batch_size: 32,
        negatives_per_positive: 4,
        loss: LossConfig {
            alpha: 0.5,
            l2_lambda: 1e-4,
            ..LossConfig::default()
        },
        adam: AdamConfig {
            learning_rate: 0.02,
            ..AdamConfig::default()
        },
        eval_cadence: 50, // no early stopping inside the 20 epochs
        dim: 8,
        seed: 5,
        val_queries: 0,
        deterministic: true,
        ..TrainConfig::default()
    };
    let (_, log) = train(&config, &data, &vocab).unwrap();
    assert_eq!(log.epochs.len(), 20);
    let worst = log
        .epochs
        .iter()
        .map(|r| r.max_norm_deviation)
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-6, "worst per-step norm deviation {worst:e}");
    pass("unit-norm maintenance (20 epochs, deviation ≤ 1e-6)");
}

/// Toy-KG type-signal experiment: on a synthetic strongly-typed graph
/// (200 entities in 8 types, 10 type-pure relations, 2000/200/200 split),
/// the tuned type regularizer beats the α = 0 baseline by ≥ 0.02 mean
/// test MRR over 5 seeds at d = 16.
#[test]
fn acceptance_type_signal_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_typed_kg(dir.path(), &KgSpec::experiment());
    let (vocab, data) = load_bundle(&files);
    let filter = build_filter(&data.train, &data.valid, &data.test);
    // one shared candidate stream so every model ranks the same draws
    let eval_state = SamplerState::new(&vocab, &data.typemap, 31_337);

    let base = TrainConfig {
        epochs: 150,
        batch_size: 128,
        negatives_per_positive: 1,
        loss: LossConfig {
            l2_lambda: 1e-3,
            neg_cats_per_positive: 7,
            ..LossConfig::default()
        },
        adam: AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        },
        patience: 5,
        eval_cadence: 10,
        dim: 16,
        val_queries: 0,
        eval_candidates: 1000,
        deterministic: false,
        ..TrainConfig::default()
    };

    let test_mrr = |config: &TrainConfig| -> (f64, Option<f64>) {
        let (params, log) = train(config, &data, &vocab).unwrap();
        let report = evaluate(
            &params,
            &data.test,
            &filter,
            &vocab,
            &eval_state,
            DirectionMode::Both,
            1000,
            true,
        )
        .unwrap();
        (report.mrr, log.best_validation_mrr)
    };

    let seeds = [101u64, 202, 303, 404, 505];
    let mut baseline_sum = 0.0;
    let mut regularized_sum = 0.0;
    for &seed in &seeds {
        let baseline = TrainConfig {
            seed,
            ..base.clone()
        };
        let (baseline_mrr, _) = test_mrr(&baseline);
        baseline_sum += baseline_mrr;

        // tune α over {0.1, 1} by validation MRR
        let mut best: Option<(f64, f64)> = None; // (val, test)
        for alpha in [0.1, 1.0] {
            let config = TrainConfig {
                seed,
                loss: LossConfig {
                    alpha,
                    ..base.loss.clone()
                },
                ..base.clone()
            };
            let (mrr, val) = test_mrr(&config);
            let val = val.unwrap_or(0.0);
            if best.is_none_or(|(v, _)| val > v) {
                best = Some((val, mrr));
            }
        }
        regularized_sum += best.unwrap().1;
    }
    let baseline_mean = baseline_sum / seeds.len() as f64;
    let regularized_mean = regularized_sum / seeds.len() as f64;
    let gain = regularized_mean - baseline_mean;
    println!(
        "type-signal experiment: baseline MRR {baseline_mean:.4}, \
         regularized MRR {regularized_mean:.4}, gain {gain:+.4}"
    );
    assert!(
        gain >= 0.02,
        "type regularizer gain {gain:.4} below the 0.02 threshold \
         (baseline {baseline_mean:.4}, regularized {regularized_mean:.4})"
    );
    pass("toy type-signal experiment (gain ≥ 0.02 MRR)");
}

/// Metric arithmetic: ranks {1, 2, 4} give MRR (1 + 1/2 + 1/4)/3 within
/// 1e-12 and Hits@{1,3,10} of {1/3, 2/3, 1}.
#[test]
fn acceptance_metric_arithmetic() {
    let metrics = aggregate_metrics([1.0, 2.0, 4.0]);
    assert!((metrics.mrr - 1.75 / 3.0).abs() <= 1e-12);
    assert_eq!(metrics.hits1, 1.0 / 3.0);
    assert_eq!(metrics.hits3, 2.0 / 3.0);
    assert_eq!(metrics.hits10, 1.0);
    pass("metric arithmetic (MRR 0.58333…, Hits 1/3, 2/3, 1)");
}

/// Determinism: two `--deterministic` train + eval runs with identical
/// configuration produce byte-identical checkpoints and eval reports.
#[test]
fn acceptance_determinism_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_typed_kg(dir.path(), &KgSpec::small());

    let run_once = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let out = dir.path().join(tag);
        let config = RunConfig {
            train_file: Some(files.train.clone()),
            valid_file: Some(files.valid.clone()),
            test_file: Some(files.test.clone()),
            types_file: Some(files.types.clone()),
            output_dir: Some(out.clone()),
            checkpoint: Some(out.join("checkpoint.kge")),
            dim: 8,
            epochs: 6,
            batch_size: 32,
            negatives: 3,
            alpha: 0.5,
            learning_rate: 0.02,
            eval_cadence: 3,
            candidates: 60,
            val_queries: 40,
            seed: 99,
            deterministic: true,
            ..RunConfig::default()
        };
        cmd_train(&config).unwrap();
        cmd_eval(&config).unwrap();
        (
            std::fs::read(out.join("checkpoint.kge")).unwrap(),
            std::fs::read(out.join("eval.json")).unwrap(),
            std::fs::read(out.join("ranks.csv")).unwrap(),
        )
    };

    let (ckpt_a, eval_a, ranks_a) = run_once("a");
    let (ckpt_b, eval_b, ranks_b) = run_once("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between runs");
    assert_eq!(eval_a, eval_b, "eval reports differ between runs");
    assert_eq!(ranks_a, ranks_b, "rank files differ between runs");
    pass("determinism (byte-identical checkpoints and reports)");
}

/// FB15K reproduction (extended): with the real dataset, d = 100 and a
/// grid-searched (α, λ), the regularized model should land within ±0.04
/// of MRR 0.3862 and Hits@10 0.5408 under the 1000-candidate protocol.
/// Ignored by default: needs the dataset (KGE_FB15K_DIR with train.txt,
/// valid.txt, test.txt, categories.tsv) and hours of compute.
#[test]
#[ignore = "extended: requires FB15K data in KGE_FB15K_DIR and hours of compute"]
fn acceptance_fb15k_reproduction_extended() {
    let root = std::env::var("KGE_FB15K_DIR").expect("set KGE_FB15K_DIR to the dataset directory");
    let root = Path::new(&root);
    let files = KgFiles {
        train: root.join("train.txt"),
        valid: root.join("valid.txt"),
        test: root.join("test.txt"),
        types: root.join("categories.tsv"),
    };
    let (vocab, data) = load_bundle(&files);
    let filter = build_filter(&data.train, &data.valid, &data.test);

    let template = TrainConfig {
        dim: 100,
        epochs: 200,
        eval_cadence: 5,
        patience: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let grid = kge::optim::grid_search(
        &template,
        &[0.1, 1.0],
        &[0.0, 1e-5],
        &data,
        &vocab,
    )
    .unwrap();
    let mut best = template;
    best.loss.alpha = grid.best_alpha;
    best.loss.l2_lambda = grid.best_l2_lambda;
    let (params, _) = train(&best, &data, &vocab).unwrap();
    let state = SamplerState::new(&vocab, &data.typemap, 1);
    let report = evaluate(
        &params,
        &data.test,
        &filter,
        &vocab,
        &state,
        DirectionMode::Both,
        1000,
        true,
    )
    .unwrap();
    println!("FB15K: MRR {:.4}, Hits@10 {:.4}", report.mrr, report.hits10);
    assert!((report.mrr - 0.3862).abs() <= 0.04);
    assert!((report.hits10 - 0.5408).abs() <= 0.04);
    pass("FB15K reproduction (extended)");
}
