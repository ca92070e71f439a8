//! Triple and entity-type ingestion, vocabularies, deterministic
//! subsampling, and training-frequency indices.
//!
//! File formats are UTF-8 and tab-separated with `#`-prefixed comment
//! lines ignored: triple files hold `source<TAB>relation<TAB>target`
//! lines, type files hold `entity<TAB>category` lines.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix applied to category names when they are registered as entities,
/// so a category can never collide with an ordinary entity name.
pub const CATEGORY_ENTITY_PREFIX: &str = "cat:";

/// Internal name of the category relation.
pub const CATEGORY_RELATION_NAME: &str = "cat:category";

/// One (source, relation, target) assertion, in vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub source: usize,
    pub relation: usize,
    pub target: usize,
}

impl Triple {
    pub fn new(source: usize, relation: usize, target: usize) -> Self {
        Triple {
            source,
            relation,
            target,
        }
    }
}

/// Which split a triple collection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Valid,
    Test,
    Categories,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SplitRole::Train => "train",
            SplitRole::Valid => "valid",
            SplitRole::Test => "test",
            SplitRole::Categories => "categories",
        };
        f.write_str(name)
    }
}

/// An ordered, duplicate-free collection of triples.
#[derive(Debug, Clone)]
pub struct TripleSet {
    pub role: SplitRole,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    /// Duplicates dropped while building this set.
    pub dropped_duplicates: usize,
}

impl PartialEq for TripleSet {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role && self.triples == other.triples
    }
}

impl TripleSet {
    pub fn new(role: SplitRole) -> Self {
        TripleSet {
            role,
            triples: Vec::new(),
            seen: HashSet::new(),
            dropped_duplicates: 0,
        }
    }

    /// Inserts a triple, keeping insertion order. Duplicates are dropped
    /// and counted. Returns whether the triple was new.
    pub fn insert(&mut self, triple: Triple) -> bool {
        if self.seen.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            self.dropped_duplicates += 1;
            false
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.seen.contains(triple)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }

    pub fn as_slice(&self) -> &[Triple] {
        &self.triples
    }

    pub fn get(&self, index: usize) -> Option<&Triple> {
        self.triples.get(index)
    }
}

/// Bidirectional name ↔ index maps for entities and relations.
///
/// Category entities, when present, occupy the tail of the entity table:
/// every entity index at or beyond [`Vocab::category_offset`] is a
/// category. Adding ordinary entities after categories are registered is
/// rejected so that invariant cannot be broken.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    entity_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, usize>,
    category_offset: Option<usize>,
    category_relation: Option<usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Index where category entities begin. Equals `num_entities` when no
    /// categories are registered, so ordinary entities are always below it.
    pub fn category_offset(&self) -> usize {
        self.category_offset.unwrap_or_else(|| self.num_entities())
    }

    /// Number of ordinary (non-category) entities.
    pub fn num_plain_entities(&self) -> usize {
        self.category_offset()
    }

    pub fn num_categories(&self) -> usize {
        self.num_entities() - self.category_offset()
    }

    pub fn category_relation(&self) -> Option<usize> {
        self.category_relation
    }

    pub fn is_category_entity(&self, index: usize) -> bool {
        index >= self.category_offset() && index < self.num_entities()
    }

    pub fn entity_name(&self, index: usize) -> Option<&str> {
        self.entity_names.get(index).map(String::as_str)
    }

    pub fn relation_name(&self, index: usize) -> Option<&str> {
        self.relation_names.get(index).map(String::as_str)
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    /// Interns an ordinary entity name. Fails once categories exist, since
    /// new entities would land in the category index range.
    pub fn intern_entity(&mut self, name: &str) -> Result<usize> {
        if let Some(&id) = self.entity_index.get(name) {
            return Ok(id);
        }
        if self.category_offset.is_some() {
            return Err(Error::Config(format!(
                "entity `{name}` appeared after categories were registered; \
                 load all triple files before the type file"
            )));
        }
        Ok(self.push_entity(name))
    }

    fn push_entity(&mut self, name: &str) -> usize {
        let id = self.entity_names.len();
        self.entity_names.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    /// Registers a category, namespaced to avoid entity-name collisions.
    fn intern_category(&mut self, name: &str) -> usize {
        if self.category_offset.is_none() {
            self.category_offset = Some(self.num_entities());
        }
        let key = format!("{CATEGORY_ENTITY_PREFIX}{name}");
        if let Some(&id) = self.entity_index.get(&key) {
            return id;
        }
        self.push_entity(&key)
    }

    fn ensure_category_relation(&mut self) -> usize {
        if let Some(r) = self.category_relation {
            return r;
        }
        let r = self.intern_relation(CATEGORY_RELATION_NAME);
        self.category_relation = Some(r);
        r
    }

    /// A deterministic FNV-1a hash of the vocabulary contents, used to
    /// bind checkpoints to the vocabulary they were trained with.
    pub fn stable_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(PRIME);
            }
        };
        for name in &self.entity_names {
            eat(name.as_bytes());
            eat(&[0xff]);
        }
        eat(&[0xfe]);
        for name in &self.relation_names {
            eat(name.as_bytes());
            eat(&[0xff]);
        }
        eat(&(self.category_offset() as u64).to_le_bytes());
        eat(&(self.category_relation.map_or(u64::MAX, |r| r as u64)).to_le_bytes());
        hash
    }
}

/// Entity → set of category-entity indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TypeMap {
    mapping: BTreeMap<usize, BTreeSet<usize>>,
    /// Type-file lines naming entities absent from the vocabulary.
    pub skipped_unknown: usize,
}

impl TypeMap {
    pub fn new() -> Self {
        TypeMap::default()
    }

    pub fn insert(&mut self, entity: usize, category: usize) -> bool {
        self.mapping.entry(entity).or_default().insert(category)
    }

    /// Correct categories for an entity; `None` when the entity is typeless.
    pub fn categories_of(&self, entity: usize) -> Option<&BTreeSet<usize>> {
        self.mapping.get(&entity)
    }

    pub fn has_types(&self, entity: usize) -> bool {
        self.mapping.contains_key(&entity)
    }

    pub fn num_typed_entities(&self) -> usize {
        self.mapping.len()
    }

    /// Total number of (entity, category) assignments.
    pub fn total_assignments(&self) -> usize {
        self.mapping.values().map(BTreeSet::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BTreeSet<usize>)> + '_ {
        self.mapping.iter().map(|(e, cats)| (*e, cats))
    }
}

/// Occurrence counts over a training split.
#[derive(Debug, Clone, Default)]
pub struct FreqIndex {
    entity_counts: Vec<usize>,
    relation_counts: Vec<usize>,
}

impl FreqIndex {
    /// Count of training triples where the entity appears as source or target.
    pub fn entity_count(&self, entity: usize) -> usize {
        self.entity_counts.get(entity).copied().unwrap_or(0)
    }

    pub fn relation_count(&self, relation: usize) -> usize {
        self.relation_counts.get(relation).copied().unwrap_or(0)
    }

    pub fn total_entity_count(&self) -> usize {
        self.entity_counts.iter().sum()
    }

    pub fn total_relation_count(&self) -> usize {
        self.relation_counts.iter().sum()
    }
}

/// Order-of-magnitude frequency bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    /// Count of zero: never seen in training.
    Unseen,
    /// `⌊log10(count)⌋` for counts ≥ 1.
    Magnitude(u32),
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Unseen => f.write_str("unseen"),
            Bucket::Magnitude(m) => write!(f, "{m}"),
        }
    }
}

/// Buckets a training-frequency count by order of magnitude.
pub fn oom_bucket(count: usize) -> Bucket {
    if count == 0 {
        Bucket::Unseen
    } else {
        Bucket::Magnitude(count.ilog10())
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

fn split_fields<'a>(
    line: &'a str,
    expected: usize,
    path: &Path,
    line_no: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected || fields.iter().any(|f| f.is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!(
                "expected {expected} non-empty tab-separated fields, got {}",
                fields.len()
            ),
        });
    }
    Ok(fields)
}

/// Loads a tab-separated triple file, interning unseen names into `vocab`.
/// Duplicate lines are dropped and counted on the returned set.
pub fn load_triples(path: impl AsRef<Path>, vocab: &mut Vocab, role: SplitRole) -> Result<TripleSet> {
    let path = path.as_ref();
    let mut set = TripleSet::new(role);
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed, 3, path, line_no)?;
        let source = vocab.intern_entity(fields[0])?;
        let relation = vocab.intern_relation(fields[1]);
        let target = vocab.intern_entity(fields[2])?;
        set.insert(Triple::new(source, relation, target));
    }
    if set.dropped_duplicates > 0 {
        log::warn!(
            "{}: dropped {} duplicate triples",
            path.display(),
            set.dropped_duplicates
        );
    }
    Ok(set)
}

/// Writes a triple set back to the tab-separated file format.
pub fn save_triples(set: &TripleSet, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for triple in set.iter() {
        let source = vocab.entity_name(triple.source).ok_or_else(|| {
            Error::InvalidArgument(format!("entity index {} out of range", triple.source))
        })?;
        let relation = vocab.relation_name(triple.relation).ok_or_else(|| {
            Error::InvalidArgument(format!("relation index {} out of range", triple.relation))
        })?;
        let target = vocab.entity_name(triple.target).ok_or_else(|| {
            Error::InvalidArgument(format!("entity index {} out of range", triple.target))
        })?;
        writeln!(out, "{source}\t{relation}\t{target}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads an `entity<TAB>category` file. Categories become entities at
/// indices past [`Vocab::category_offset`] and the category relation is
/// registered. Lines naming entities unknown to the vocabulary are skipped
/// with a count. Returns the type map together with the equivalent triple
/// set of (entity, category-relation, category) assertions.
pub fn load_type_map(path: impl AsRef<Path>, vocab: &mut Vocab) -> Result<(TypeMap, TripleSet)> {
    let path = path.as_ref();
    let mut typemap = TypeMap::new();
    let mut set = TripleSet::new(SplitRole::Categories);
    // (entity name, category name) pairs in file order; categories are
    // interned only after the whole file parses so a malformed line cannot
    // leave the vocabulary half-extended.
    let mut pairs: Vec<(usize, String)> = Vec::new();
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed, 2, path, line_no)?;
        match vocab.entity_id(fields[0]) {
            Some(entity) => pairs.push((entity, fields[1].to_string())),
            None => typemap.skipped_unknown += 1,
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "{}: no usable type assignments (skipped {} lines naming unknown entities)",
            path.display(),
            typemap.skipped_unknown
        )));
    }
    let relation = vocab.ensure_category_relation();
    for (entity, category_name) in pairs {
        let category = vocab.intern_category(&category_name);
        typemap.insert(entity, category);
        set.insert(Triple::new(entity, relation, category));
    }
    if typemap.skipped_unknown > 0 {
        log::warn!(
            "{}: skipped {} lines naming entities absent from the vocabulary",
            path.display(),
            typemap.skipped_unknown
        );
    }
    Ok((typemap, set))
}

/// Uniform sample without replacement of `⌊fraction·N⌋` triples,
/// deterministic for a fixed seed. The sampled triples keep their
/// original relative order; `fraction == 1` returns the identical set.
pub fn subsample(set: &TripleSet, fraction: f64, seed: u64) -> Result<TripleSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(set.clone());
    }
    let keep = (fraction * set.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..set.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(keep);
    indices.sort_unstable();
    let mut out = TripleSet::new(set.role);
    for idx in indices {
        out.insert(set.as_slice()[idx]);
    }
    Ok(out)
}

/// Tallies entity and relation occurrences over a training split. Entity
/// counts include both source and target appearances.
pub fn build_freq_index(train: &TripleSet) -> FreqIndex {
    let mut index = FreqIndex::default();
    for triple in train.iter() {
        let need = triple.source.max(triple.target) + 1;
        if index.entity_counts.len() < need {
            index.entity_counts.resize(need, 0);
        }
        if index.relation_counts.len() <= triple.relation {
            index.relation_counts.resize(triple.relation + 1, 0);
        }
        index.entity_counts[triple.source] += 1;
        index.entity_counts[triple.target] += 1;
        index.relation_counts[triple.relation] += 1;
    }
    index
}
