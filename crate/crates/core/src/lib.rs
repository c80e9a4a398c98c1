//! Additive-noise embedding obfuscation and its inversion.
//!
//! The crate covers the full pipeline:
//!
//! * [`table`] — embedding tables and the `EMBT` binary format;
//! * [`noise`] — Gaussian/Laplace mechanisms, DP calibration, obfuscation;
//! * [`prior`] — next-token priors (uniform, n-gram, external process,
//!   cross-vocabulary mapping);
//! * [`surrogate`] — the attacker's parametric noise model and its per-step
//!   estimation;
//! * [`decoder`] — causal beam search combining surrogate and prior;
//! * [`nn`] — the nearest-neighbour baseline;
//! * [`metrics`] and [`harness`] — scoring and ε sweeps.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod prior;
pub mod rng;
pub mod surrogate;
pub mod table;

pub use corpus::{load_corpus, read_corpus, save_corpus, write_corpus, CorpusRecord};
pub use decoder::{decode, AttackResult, BeamHypothesis, DecodeConfig};
pub use error::{Error, Result};
pub use metrics::{asr, pii_recovery, PiiAnnotation};
pub use nn::{nearest_row, nn_decode};
pub use noise::{
    calibrate_scale, epsilon_from_scale, obfuscate_corpus, obfuscate_sequence, NoiseFamily, NoiseMechanismSpec,
    ObfuscatedSequence, DEFAULT_DELTA,
};
pub use prior::{build_token_map, train_ngram, NgramPrior, PriorModel, TokenMap, UniformPrior};
pub use surrogate::{EstimationMethod, ScaleMode, SurrogateEstimator, SurrogateParams};
pub use table::{EmbeddingTable, Norm, RowMatrix, TokenId, TokenSequence};
