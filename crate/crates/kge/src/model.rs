//! Learnable parameters of the bilinear link-prediction model: one
//! unit-norm vector per entity (categories included) and one dense matrix
//! per relation (the category relation included).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Vector};

/// Checkpoint magic bytes.
const CHECKPOINT_MAGIC: &[u8; 4] = b"KGE1";
/// Checkpoint format version.
const CHECKPOINT_VERSION: u32 = 1;

/// Entity embedding table and per-relation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    entity_vecs: Vec<Vector>,
    relation_mats: Vec<Matrix>,
}

impl ModelParams {
    /// Initializes parameters deterministically from a seed: entity vectors
    /// uniform in `[-scale, scale]^d` then normalized to unit norm, relation
    /// matrices uniform in `[-scale/√d, scale/√d]` so initial scores stay
    /// small and sigmoids unsaturated.
    pub fn init(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        seed: u64,
        scale: f64,
    ) -> Self {
        assert!(num_entities >= 1 && num_relations >= 1 && dim >= 1);
        assert!(scale > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entity_vecs = Vec::with_capacity(num_entities);
        for _ in 0..num_entities {
            let raw = loop {
                let v = Vector((0..dim).map(|_| rng.gen_range(-scale..=scale)).collect());
                if v.norm() > 0.0 {
                    break v;
                }
            };
            entity_vecs.push(kernel::l2_normalize(&raw).expect("nonzero by construction"));
        }
        let mat_scale = scale / (dim as f64).sqrt();
        let mut relation_mats = Vec::with_capacity(num_relations);
        for _ in 0..num_relations {
            let mut m = Matrix::zeros(dim);
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-mat_scale..=mat_scale);
            }
            relation_mats.push(m);
        }
        ModelParams {
            dim,
            entity_vecs,
            relation_mats,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entity_vecs.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_mats.len()
    }

    pub fn entity(&self, index: usize) -> &Vector {
        &self.entity_vecs[index]
    }

    pub fn entity_mut(&mut self, index: usize) -> &mut Vector {
        &mut self.entity_vecs[index]
    }

    pub fn relation(&self, index: usize) -> &Matrix {
        &self.relation_mats[index]
    }

    pub fn relation_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.relation_mats[index]
    }

    fn check_triple(&self, source: usize, relation: usize, target: usize) -> Result<()> {
        if source >= self.num_entities()
            || target >= self.num_entities()
            || relation >= self.num_relations()
        {
            return Err(Error::InvalidArgument(format!(
                "triple ({source}, {relation}, {target}) out of range for {} entities, {} relations",
                self.num_entities(),
                self.num_relations()
            )));
        }
        Ok(())
    }

    /// Bilinear score of a triple.
    pub fn score(&self, source: usize, relation: usize, target: usize) -> Result<f64> {
        self.check_triple(source, relation, target)?;
        Ok(self.score_unchecked(source, relation, target))
    }

    pub(crate) fn score_unchecked(&self, source: usize, relation: usize, target: usize) -> f64 {
        kernel::bilinear_unchecked(
            &self.entity_vecs[source],
            &self.relation_mats[relation],
            &self.entity_vecs[target],
        )
    }

    /// Adds `weight · ∂score/∂θ` for the given triple into the buffer.
    /// When source and target coincide both contributions accumulate.
    pub fn accumulate_score_grads(
        &self,
        source: usize,
        relation: usize,
        target: usize,
        weight: f64,
        grads: &mut GradientBuffer,
    ) -> Result<()> {
        self.check_triple(source, relation, target)?;
        if weight == 0.0 {
            return Ok(());
        }
        let xs = &self.entity_vecs[source];
        let xt = &self.entity_vecs[target];
        let w = &self.relation_mats[relation];
        grads
            .entity_entry(source)
            .add_scaled(weight, &w.matvec(xt));
        grads
            .entity_entry(target)
            .add_scaled(weight, &w.matvec_transpose(xs));
        grads
            .relation_entry(relation)
            .add_scaled_outer(weight, xs, xt);
        Ok(())
    }

    /// Renormalizes every entity vector to unit L2 norm.
    pub fn project_entity_norms(&mut self) -> Result<()> {
        for (index, vec) in self.entity_vecs.iter_mut().enumerate() {
            let norm = vec.norm();
            if norm == 0.0 {
                return Err(Error::NumericDegenerate(format!(
                    "entity {index} collapsed to the zero vector"
                )));
            }
            vec.scale(1.0 / norm);
        }
        Ok(())
    }

    /// Largest deviation of any entity norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.entity_vecs
            .iter()
            .map(|v| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Squared L2 norm of every parameter (entity vectors plus the
    /// Frobenius norms of all relation matrices).
    pub fn squared_norm(&self) -> f64 {
        let entities: f64 = self.entity_vecs.iter().map(|v| v.dot(v)).sum();
        let relations: f64 = self.relation_mats.iter().map(Matrix::frobenius_sq).sum();
        entities + relations
    }

    pub fn is_finite(&self) -> bool {
        self.entity_vecs.iter().all(Vector::is_finite)
            && self.relation_mats.iter().all(Matrix::is_finite)
    }
}

/// Sparse per-block gradient accumulator shaped like [`ModelParams`].
///
/// Blocks are keyed by entity/relation index in ordered maps so that
/// iteration (and therefore floating-point reduction order) is
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    dim: usize,
    pub entities: BTreeMap<usize, Vector>,
    pub relations: BTreeMap<usize, Matrix>,
}

impl GradientBuffer {
    pub fn new(dim: usize) -> Self {
        GradientBuffer {
            dim,
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    pub fn entity_entry(&mut self, index: usize) -> &mut Vector {
        let dim = self.dim;
        self.entities
            .entry(index)
            .or_insert_with(|| Vector::zeros(dim))
    }

    pub fn relation_entry(&mut self, index: usize) -> &mut Matrix {
        let dim = self.dim;
        self.relations
            .entry(index)
            .or_insert_with(|| Matrix::zeros(dim))
    }

    /// `self += other`
    pub fn merge(&mut self, other: &GradientBuffer) {
        self.merge_scaled(1.0, other);
    }

    /// `self += factor * other`
    pub fn merge_scaled(&mut self, factor: f64, other: &GradientBuffer) {
        debug_assert_eq!(self.dim, other.dim);
        for (&index, vec) in &other.entities {
            self.entity_entry(index).add_scaled(factor, vec);
        }
        for (&index, mat) in &other.relations {
            self.relation_entry(index).add_scaled(factor, mat);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for vec in self.entities.values_mut() {
            vec.scale(factor);
        }
        for mat in self.relations.values_mut() {
            mat.scale(factor);
        }
    }

    /// Global L2 norm over every stored entry, in deterministic key order.
    pub fn global_norm(&self) -> f64 {
        let mut total = 0.0;
        for vec in self.entities.values() {
            total += vec.dot(vec);
        }
        for mat in self.relations.values() {
            total += mat.frobenius_sq();
        }
        total.sqrt()
    }
}

fn write_u32(out: &mut impl Write, value: u32, path: &Path) -> Result<()> {
    out.write_all(&value.to_le_bytes())
        .map_err(|e| Error::io(path, e))
}

fn write_u64(out: &mut impl Write, value: u64, path: &Path) -> Result<()> {
    out.write_all(&value.to_le_bytes())
        .map_err(|e| Error::io(path, e))
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint("file ends before the payload does".to_string()))
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(input, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Serialized checkpoint header, exposed for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub num_entities: u64,
    pub num_relations: u64,
    pub dim: u64,
    pub vocab_hash: u64,
}

fn read_header(input: &mut impl Read) -> Result<CheckpointHeader> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::IncompatibleCheckpoint(
            "bad magic bytes; not a checkpoint file".to_string(),
        ));
    }
    Ok(CheckpointHeader {
        version: read_u32(input)?,
        num_entities: read_u64(input)?,
        num_relations: read_u64(input)?,
        dim: read_u64(input)?,
        vocab_hash: read_u64(input)?,
    })
}

/// Writes parameters with a header binding them to `vocab_hash`.
/// Layout: magic `KGE1`, u32 version, u64 E, R, d, u64 vocab hash, then
/// the entity table and relation matrices row-major as little-endian f64.
pub fn save_checkpoint(params: &ModelParams, vocab_hash: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(CHECKPOINT_MAGIC)
        .map_err(|e| Error::io(path, e))?;
    write_u32(&mut out, CHECKPOINT_VERSION, path)?;
    write_u64(&mut out, params.num_entities() as u64, path)?;
    write_u64(&mut out, params.num_relations() as u64, path)?;
    write_u64(&mut out, params.dim() as u64, path)?;
    write_u64(&mut out, vocab_hash, path)?;
    for vec in &params.entity_vecs {
        for value in vec.as_slice() {
            out.write_all(&value.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    for mat in &params.relation_mats {
        for value in mat.as_slice() {
            out.write_all(&value.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads just the header of a checkpoint file.
pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(file))
}

/// Loads a checkpoint, verifying the version and vocabulary hash.
pub fn load_checkpoint(path: impl AsRef<Path>, vocab_hash: u64) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let header = read_header(&mut input)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    if header.vocab_hash != vocab_hash {
        return Err(Error::IncompatibleCheckpoint(format!(
            "vocabulary hash {:016x} does not match expected {:016x}",
            header.vocab_hash, vocab_hash
        )));
    }
    let num_entities = header.num_entities as usize;
    let num_relations = header.num_relations as usize;
    let dim = header.dim as usize;
    let read_f64 = |input: &mut BufReader<File>| -> Result<f64> {
        let mut buf = [0u8; 8];
        read_exact(input, &mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut entity_vecs = Vec::with_capacity(num_entities);
    for _ in 0..num_entities {
        let mut vec = Vector::zeros(dim);
        for v in &mut vec.0 {
            *v = read_f64(&mut input)?;
        }
        entity_vecs.push(vec);
    }
    let mut relation_mats = Vec::with_capacity(num_relations);
    for _ in 0..num_relations {
        let mut mat = Matrix::zeros(dim);
        for v in mat.as_mut_slice() {
            *v = read_f64(&mut input)?;
        }
        relation_mats.push(mat);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::CorruptCheckpoint(
            "trailing bytes after the payload".to_string(),
        ));
    }
    Ok(ModelParams {
        dim,
        entity_vecs,
        relation_mats,
    })
}
