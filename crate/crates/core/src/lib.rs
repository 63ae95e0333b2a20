//! On-manifold gradient explanations for text classifiers.
//!
//! Gradient saliency is unreliable in high dimension: the part of a gradient
//! that points off the data manifold is large, and it is set almost entirely
//! by the random initialization. Two networks trained the same way on the same
//! data therefore disagree on it. This crate turns that into an explanation
//! method: per-word gradients of the explained classifier are kept only when
//! their norm is below a threshold, then ranked by their mean absolute cosine
//! similarity with the matching gradients of a surrogate ensemble.
//!
//! Modules:
//!
//! - [`numerics`]: vectors, [`numerics::Mat`], seeded [`numerics::Rng`], PCA.
//! - [`subspace`]: linear data subspaces and labeled samples on them.
//! - [`nets`]: the two-layer ReLU theory network and the text classifier.
//! - [`training`]: seeded gradient descent and surrogate ensembles.
//! - [`explain`]: norm filtering, alpha scores, top-k selection, reports.
//! - [`verify`]: Monte Carlo checks of the off-manifold gradient theory.
//! - [`textpipe`]: tokenizer, vocabulary, encoding, planted-keyword corpora.
//! - [`pipeline`]: end-to-end training, model bundles and corpus explanations.

pub mod error;
pub mod explain;
pub mod nets;
pub mod numerics;
pub mod pipeline;
pub mod subspace;
pub mod textpipe;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
