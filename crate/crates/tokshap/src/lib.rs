//! Shapley-value attributions for token-sequence classifiers.
//!
//! The crate computes per-token explanation scores for black-box
//! classifiers over token sequences, with four estimation routes:
//!
//! * [`exact`] — full subset enumeration, the ground-truth oracle;
//! * [`svs`] — permutation Monte-Carlo sampling;
//! * [`kernelshap`] — Shapley-kernel mask sampling plus an
//!   efficiency-constrained least-squares solve;
//! * [`amortized`] — a trained surrogate predicting scores in one pass,
//!   with optional local adaptation against the classifier.
//!
//! Around these live the measurement harnesses: [`stability`] for
//! cross-seed rank stability, [`faithfulness`] for top-α masking curves,
//! [`toygen`] for synthetic datasets with analytic classifiers, and
//! [`dataset`] plus [`manifest`] for the JSONL file formats and
//! reproducibility manifests the CLI exposes.
//!
//! The numeric core is generic over the scalar type via [`Scalar`]; the
//! type aliases below pin the `f64` instantiations used by the CLI and the
//! file formats.

pub mod amortized;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod explain;
pub mod faithfulness;
pub mod kernelshap;
pub mod manifest;
pub mod num;
pub mod seed;
pub mod stability;
pub mod svs;
pub mod toygen;
pub mod types;
pub mod wls;

pub use amortized::{AmortizedConfig, AmortizedModel};
pub use classifier::builtin::{AdditiveClassifier, ClassifierDescriptor, InteractionClassifier};
pub use classifier::external::ExternalClassifier;
pub use classifier::{Classifier, ValueCache};
pub use error::{Error, Result};
pub use explain::{explain_instance, ExplainOptions, ExplainOutcome, LabelPolicy, MethodSpec};
pub use manifest::RunManifest;
pub use num::Scalar;
pub use types::{
    apply_mask, Attribution, Mask, Method, Permutation, TokenSequence, ValueMode, DEFAULT_PAD_TOKEN,
};

/// Attribution in the default `f64` precision.
pub type AttributionF64 = Attribution<f64>;
