//! Classifier abstraction and the per-instance evaluation cache.
//!
//! Estimators never talk to a [`Classifier`] directly; they go through a
//! [`ValueCache`] that pins one instance and one target class, applies the
//! masking convention, memoizes coalition values and counts distinct
//! evaluations. The cache is what makes the evaluation-budget accounting
//! in `bench` trustworthy.

pub mod builtin;
pub mod external;

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::types::{apply_mask, Mask, TokenSequence, ValueMode};

/// A token-sequence classifier scoring batches of inputs.
///
/// Implementations must be pure: the same input always yields the same
/// vector, regardless of batching or call order.
pub trait Classifier<S: Scalar>: Send + Sync {
    /// Stable description of this classifier (kind plus parameters), used
    /// in run manifests.
    fn descriptor(&self) -> String;

    fn num_classes(&self) -> usize;

    /// Interpretation of the output vectors.
    fn value_mode(&self) -> ValueMode;

    /// Scores every input; one vector of `num_classes` values per input,
    /// in input order.
    fn predict_batch(&self, inputs: &[TokenSequence]) -> Result<Vec<Vec<S>>>;

    /// Largest batch worth sending in one call. Only a hint; correctness
    /// never depends on it.
    fn max_batch(&self) -> usize {
        64
    }
}

/// Scores one input and returns the value of class `label`.
pub fn value<S: Scalar>(
    classifier: &dyn Classifier<S>,
    x: &TokenSequence,
    label: usize,
) -> Result<S> {
    if label >= classifier.num_classes() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} classes",
            classifier.num_classes()
        )));
    }
    let scores = classifier.predict_batch(std::slice::from_ref(x))?;
    Ok(scores[0][label])
}

/// Argmax class for `x`; ties resolve to the lowest index.
pub fn predicted_label<S: Scalar>(
    classifier: &dyn Classifier<S>,
    x: &TokenSequence,
) -> Result<usize> {
    let scores = classifier.predict_batch(std::slice::from_ref(x))?;
    Ok(argmax(&scores[0]))
}

pub(crate) fn argmax<S: Scalar>(scores: &[S]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn check_batch_shape<S: Scalar>(
    descriptor: &str,
    expected_len: usize,
    num_classes: usize,
    out: &[Vec<S>],
) -> Result<()> {
    if out.len() != expected_len {
        return Err(Error::Protocol {
            detail: format!(
                "classifier {descriptor} returned {} vectors for {expected_len} inputs",
                out.len()
            ),
        });
    }
    for v in out {
        if v.len() != num_classes {
            return Err(Error::Protocol {
                detail: format!(
                    "classifier {descriptor} returned a vector of length {} for {num_classes} classes",
                    v.len()
                ),
            });
        }
    }
    Ok(())
}

/// Memoized coalition values for one `(classifier, instance, label)`
/// triple.
///
/// Keys are masks over the instance's positions; repeated lookups of the
/// same coalition hit the cache and are not re-evaluated, so
/// [`ValueCache::distinct_evaluations`] counts exactly the classifier
/// calls a method needed.
pub struct ValueCache<'a, S: Scalar> {
    classifier: &'a dyn Classifier<S>,
    x: &'a TokenSequence,
    label: usize,
    pad: &'a str,
    values: RefCell<HashMap<Mask, S>>,
    lookups: RefCell<usize>,
}

impl<'a, S: Scalar> ValueCache<'a, S> {
    pub fn new(
        classifier: &'a dyn Classifier<S>,
        x: &'a TokenSequence,
        label: usize,
        pad: &'a str,
    ) -> Result<Self> {
        x.check_no_pad(pad)?;
        if label >= classifier.num_classes() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes (instance {})",
                classifier.num_classes(),
                x.id
            )));
        }
        Ok(ValueCache {
            classifier,
            x,
            label,
            pad,
            values: RefCell::new(HashMap::new()),
            lookups: RefCell::new(0),
        })
    }

    pub fn instance(&self) -> &TokenSequence {
        self.x
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn value_mode(&self) -> ValueMode {
        self.classifier.value_mode()
    }

    /// v(s): the target-class value of the instance under coalition `s`.
    pub fn value(&self, mask: &Mask) -> Result<S> {
        *self.lookups.borrow_mut() += 1;
        if let Some(&v) = self.values.borrow().get(mask) {
            return Ok(v);
        }
        let masked = apply_mask(self.x, mask, self.pad)?;
        let out = self
            .classifier
            .predict_batch(std::slice::from_ref(&masked))?;
        check_batch_shape(
            &self.classifier.descriptor(),
            1,
            self.classifier.num_classes(),
            &out,
        )?;
        let v = out[0][self.label];
        self.values.borrow_mut().insert(mask.clone(), v);
        Ok(v)
    }

    /// v(∅).
    pub fn value_empty(&self) -> Result<S> {
        self.value(&Mask::empty(self.len()))
    }

    /// v(full coalition): the unmasked instance.
    pub fn value_full(&self) -> Result<S> {
        self.value(&Mask::full(self.len()))
    }

    /// Evaluates all cache misses among `masks` in batches, so transports
    /// with per-call overhead amortize it. Values are identical to what
    /// one-at-a-time [`ValueCache::value`] calls would produce.
    pub fn prefetch(&self, masks: &[Mask]) -> Result<()> {
        let mut pending: Vec<Mask> = Vec::new();
        {
            let values = self.values.borrow();
            let mut queued: std::collections::HashSet<&Mask> = std::collections::HashSet::new();
            for m in masks {
                if !values.contains_key(m) && queued.insert(m) {
                    pending.push(m.clone());
                }
            }
        }
        let batch = self.classifier.max_batch().max(1);
        for chunk in pending.chunks(batch) {
            let inputs = chunk
                .iter()
                .map(|m| apply_mask(self.x, m, self.pad))
                .collect::<Result<Vec<_>>>()?;
            let out = self.classifier.predict_batch(&inputs)?;
            check_batch_shape(
                &self.classifier.descriptor(),
                inputs.len(),
                self.classifier.num_classes(),
                &out,
            )?;
            let mut values = self.values.borrow_mut();
            for (m, v) in chunk.iter().zip(out) {
                values.insert(m.clone(), v[self.label]);
            }
        }
        Ok(())
    }

    /// Number of distinct coalitions evaluated so far.
    pub fn distinct_evaluations(&self) -> usize {
        self.values.borrow().len()
    }

    /// Number of `value` lookups, cache hits included.
    pub fn lookups(&self) -> usize {
        *self.lookups.borrow()
    }
}
