//! Shared fixtures: a synthetic strongly-typed knowledge graph generator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// File layout of a generated graph.
pub struct KgFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub types: PathBuf,
}

/// Generator settings for a typed graph whose relations have type-pure
/// domains and ranges.
pub struct KgSpec {
    pub num_types: usize,
    pub entities_per_type: usize,
    pub num_relations: usize,
    /// Unique true triples drawn per relation.
    pub triples_per_relation: usize,
    /// How many of those go to the training split; the rest are withheld
    /// and split evenly between validation and test.
    pub train_per_relation: usize,
    pub seed: u64,
}

#[allow(dead_code)]
impl KgSpec {
    /// The desk-scale experiment graph: 200 entities in 8 types, 10
    /// type-pure relations, 2000/200/200 triples with 20% of the training
    /// count withheld per relation.
    pub fn experiment() -> Self {
        KgSpec {
            num_types: 8,
            entities_per_type: 25,
            num_relations: 10,
            triples_per_relation: 240,
            train_per_relation: 200,
            seed: 2024,
        }
    }

    /// A smaller graph for sampler and norm checks.
    pub fn small() -> Self {
        KgSpec {
            num_types: 4,
            entities_per_type: 10,
            num_relations: 4,
            triples_per_relation: 60,
            train_per_relation: 50,
            seed: 7,
        }
    }
}

/// Writes train/valid/test/type files for a synthetic typed graph and
/// returns their paths. Deterministic in `KgSpec::seed`.
pub fn generate_typed_kg(dir: &Path, spec: &KgSpec) -> KgFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let entity = |ty: usize, i: usize| format!("e{ty}_{i}");

    let mut train = String::new();
    let mut valid = String::new();
    let mut test = String::new();
    for relation in 0..spec.num_relations {
        let domain = relation % spec.num_types;
        let range = (relation + 3) % spec.num_types;
        let mut pairs: Vec<(usize, usize)> = (0..spec.entities_per_type)
            .flat_map(|s| (0..spec.entities_per_type).map(move |t| (s, t)))
            .collect();
        pairs.shuffle(&mut rng);
        pairs.truncate(spec.triples_per_relation);
        let withheld = spec.triples_per_relation - spec.train_per_relation;
        for (index, (s, t)) in pairs.into_iter().enumerate() {
            let line_target = if index < spec.train_per_relation {
                &mut train
            } else if index < spec.train_per_relation + withheld / 2 {
                &mut valid
            } else {
                &mut test
            };
            let _ = writeln!(
                line_target,
                "{}\tr{relation}\t{}",
                entity(domain, s),
                entity(range, t)
            );
        }
    }
    let mut types = String::new();
    for ty in 0..spec.num_types {
        for i in 0..spec.entities_per_type {
            let _ = writeln!(types, "{}\tt{ty}", entity(ty, i));
        }
    }

    let files = KgFiles {
        train: dir.join("train.tsv"),
        valid: dir.join("valid.tsv"),
        test: dir.join("test.tsv"),
        types: dir.join("types.tsv"),
    };
    std::fs::write(&files.train, train).unwrap();
    std::fs::write(&files.valid, valid).unwrap();
    std::fs::write(&files.test, test).unwrap();
    std::fs::write(&files.types, types).unwrap();
    files
}
