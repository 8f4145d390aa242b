//! Partial-label learning: candidate-set generation, risk-consistent and
//! classifier-consistent training, and enumeration-based checks of the
//! distributional identities the estimators rely on.
//!
//! In this setting each training example carries a set of labels, exactly
//! one of which is the (hidden) truth. The crate covers the full loop:
//!
//! * [`generate`] corrupts supervised data into candidate sets, uniformly
//!   over all proper supersets of the true label or via a transition matrix.
//! * [`model`] holds linear and one-hidden-layer softmax classifiers plus
//!   the three loss gradients (supervised, risk-consistent with confidence
//!   reweighting, classifier-consistent).
//! * [`train`] runs the Adam loop with per-epoch confidence refreshes and
//!   records per-epoch metrics.
//! * [`verify`] checks the underlying distributional identities exactly on
//!   small discrete problems.
//! * [`io`] reads and writes the on-disk formats (CSV, IDX, transition
//!   matrices, checkpoints) and performs seeded splits.
//!
//! Everything that consumes randomness takes or derives a ChaCha8 stream
//! from an explicit seed, so all outputs are reproducible bit for bit.

pub mod error;
pub mod generate;
pub mod io;
pub mod model;
pub mod train;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use generate::{
    entropy_of_t, generate_partial_dataset, uniform_marginal_inclusion, uniform_marginal_tmatrix,
    uniform_mean_set_size, GenerationModel, NormalizedTransition, TransitionMatrixModel,
    UniformGenerationModel,
};
pub use model::{cc_loss_and_grad, rc_loss_and_grad, supervised_loss_and_grad, Model};
pub use train::{
    evaluate, train_cc, train_rc, train_supervised, validate_partial, EpochRecord, TrainLog,
    TrialSummary,
};
pub use types::{
    enumerate_candidate_sets, CandidateSet, LabelSpace, Method, ModelSpec, PartialDataset,
    RunConfig, SupervisedDataset,
};
