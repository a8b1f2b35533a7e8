//! Multi-objective neural architecture search for transformer translation
//! models.
//!
//! The search evolves variable-length encoder/decoder genomes — including the
//! cross-attention wiring between decoder and encoder blocks — under MOEA/D
//! with Tchebyshev scalarization, optimizing the pair
//! `(100 − BLEU, k × perplexity)`.
//!
//! Crate layout:
//!
//! * [`genome`] — the architecture encoding, validity rules, flat/JSON/DOT
//!   serialization, parameter counting, and the search-space-size calculator.
//! * [`variation`] — population initialization, the distance-weighted
//!   cross-attention wiring sampler, variable-length crossover, mutation, and
//!   repair.
//! * [`moead`] — the decomposition-based search loop: weight vectors,
//!   neighborhoods, ideal point, the non-dominated archive, checkpointing.
//! * [`nn`] — a minimal reverse-mode autodiff tape plus the transformer layer
//!   zoo; builds a runnable model from any valid genome.
//! * [`evaluator`] — the fitness contract with a deterministic closed-form
//!   surrogate and a real training evaluator (BLEU + perplexity).
//! * [`metrics`] — corpus BLEU-4 and perplexity.
//! * [`data`] — synthetic seq2seq tasks and TSV corpus ingestion.
//! * [`rng`] — the seedable random stream shared by all stochastic pieces.

pub mod data;
pub mod evaluator;
pub mod genome;
pub mod metrics;
pub mod moead;
pub mod nn;
pub mod rng;
pub mod variation;

pub use evaluator::{Evaluator, NeuralEvaluator, SurrogateEvaluator};
pub use genome::{Genome, SearchConfig};
pub use moead::{ObjectiveVector, Search};
pub use rng::RngStream;
