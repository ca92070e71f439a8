//! Knowledge-graph embeddings with a bilinear scoring model and an
//! entity-type regularizer.
//!
//! A knowledge graph is a set of (source, relation, target) triples. This
//! crate learns one vector per entity and one dense matrix per relation so
//! that the bilinear form `xₛᵀ W_r xₜ` scores true triples above corrupted
//! ones, trained with a max-margin ranking loss. An optional regularizer
//! of the same shape pushes each entity to score its true categories above
//! sampled false ones through a dedicated category relation, with strength
//! `α`.
//!
//! The pipeline covers data ingestion ([`corpus`]), scoring and parameter
//! storage ([`kernel`], [`model`]), the training objective ([`objective`]),
//! negative sampling ([`sampler`]), optimization ([`optim`]), filtered
//! ranking evaluation ([`eval`]), gradient verification ([`gradcheck`]),
//! and a command-line interface ([`cli`]).
//!
//! ```
//! use kge::kernel::{bilinear, Matrix, Vector};
//!
//! let x = Vector(vec![1.0, 0.0]);
//! let y = Vector(vec![0.0, 1.0]);
//! let mut w = Matrix::zeros(2);
//! w.set(0, 1, 2.5);
//! assert_eq!(bilinear(&x, &w, &y).unwrap(), 2.5);
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernel;
pub mod model;
pub mod objective;
pub mod optim;
pub mod sampler;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
