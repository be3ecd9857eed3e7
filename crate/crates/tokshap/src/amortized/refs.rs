//! Builds reference attributions for surrogate training.
//!
//! Every instance is explained at its predicted label. Instances whose
//! explanation fails (over-long for exact, classifier errors) are skipped
//! with a warning instead of aborting the whole build; the skips are
//! returned for the caller's records.

use rayon::prelude::*;

use crate::classifier::{predicted_label, Classifier, ValueCache};
use crate::error::Result;
use crate::exact::exact_shapley;
use crate::num::Scalar;
use crate::svs::svs;
use crate::types::{Attribution, TokenSequence};

use super::{Provenance, ReferenceRecord};

/// Estimator used to produce reference scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMethod {
    Svs { m: u64 },
    Exact { cap: usize },
}

/// An instance excluded from the reference set, and why.
#[derive(Debug, Clone)]
pub struct RefSkip {
    pub instance_id: String,
    pub detail: String,
}

fn explain_one<S: Scalar>(
    classifier: &dyn Classifier<S>,
    x: &TokenSequence,
    method: ReferenceMethod,
    master_seed: u64,
    pad: &str,
) -> Result<(usize, Attribution<S>)> {
    let label = predicted_label(classifier, x)?;
    let values = ValueCache::new(classifier, x, label, pad)?;
    let attribution = match method {
        ReferenceMethod::Svs { m } => svs(&values, m, master_seed)?,
        ReferenceMethod::Exact { cap } => exact_shapley(&values, cap)?,
    };
    Ok((label, attribution))
}

/// Explains every instance in parallel, returning records in input order
/// plus the skipped instances.
pub fn build_reference_dataset<S: Scalar>(
    classifier: &dyn Classifier<S>,
    instances: &[TokenSequence],
    method: ReferenceMethod,
    master_seed: u64,
    pad: &str,
) -> (Vec<ReferenceRecord<S>>, Vec<RefSkip>) {
    let outcomes: Vec<std::result::Result<ReferenceRecord<S>, RefSkip>> = instances
        .par_iter()
        .map(
            |x| match explain_one(classifier, x, method, master_seed, pad) {
                Ok((label, attribution)) => Ok(ReferenceRecord {
                    sequence: x.clone(),
                    label,
                    scores: attribution.scores,
                    provenance: Provenance {
                        method: attribution.method,
                        m: attribution.samples,
                        seed: attribution.seed,
                    },
                }),
                Err(err) => {
                    log::warn!("skipping instance {}: {err}", x.id);
                    Err(RefSkip {
                        instance_id: x.id.clone(),
                        detail: err.to_string(),
                    })
                }
            },
        )
        .collect();

    let mut records = Vec::new();
    let mut skips = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(skip) => skips.push(skip),
        }
    }
    (records, skips)
}
