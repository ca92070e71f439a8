//! Compiles the guide's code snippets as doctests, so `cargo test --doc`
//! keeps the book in sync with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
mod data {}

#[doc = include_str!("../../../book/src/scoring.md")]
mod scoring {}

#[doc = include_str!("../../../book/src/objective.md")]
mod objective {}

#[doc = include_str!("../../../book/src/sampling.md")]
mod sampling {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
