//! Synthetic identities and pair-verification evaluation.

mod synthetic;
mod verification;

pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use verification::{
    accuracy_from_distances, best_threshold, verification_accuracy, IdentityEmbedder, Pair, PairProtocol,
    VerificationSet, DEFAULT_FOLDS,
};
