//! One entry point dispatching over all estimation methods.
//!
//! [`explain_instance`] resolves the target label, builds the value cache,
//! runs the requested estimator and reports how many distinct classifier
//! evaluations it consumed. The compact method syntax (`exact`, `svs:25`,
//! `ks:200`, `amortized`, `adapt:5`) is what the CLI and the stability
//! harness parse.

use std::fmt;
use std::str::FromStr;

use crate::amortized::{local_adapt, predict_amortized, AdaptNormalization, AmortizedModel};
use crate::classifier::{predicted_label, Classifier, ValueCache};
use crate::error::{Error, Result};
use crate::exact::{exact_shapley, DEFAULT_EXACT_CAP};
use crate::kernelshap::kernelshap;
use crate::num::Scalar;
use crate::svs::svs;
use crate::types::{Attribution, Method, TokenSequence, DEFAULT_PAD_TOKEN};

/// A method plus its sampling budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Exact,
    Svs {
        m: u64,
    },
    Ks {
        m: u64,
    },
    Amortized,
    Adapt {
        m: u64,
        normalization: AdaptNormalization,
    },
}

impl MethodSpec {
    /// The tag recorded on attributions this spec produces.
    pub fn method(&self) -> Method {
        match self {
            MethodSpec::Exact => Method::Exact,
            MethodSpec::Svs { .. } => Method::Svs,
            MethodSpec::Ks { .. } => Method::Ks,
            MethodSpec::Amortized => Method::Amortized,
            MethodSpec::Adapt { .. } => Method::Adapt,
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, MethodSpec::Amortized | MethodSpec::Adapt { .. })
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let budget = parts.next();
        let extra = parts.next();
        if parts.next().is_some() {
            return Err(Error::Validation(format!("malformed method spec '{s}'")));
        }
        let parse_m = |what: &str| -> Result<u64> {
            let text = budget.ok_or_else(|| {
                Error::Validation(format!("{what} needs a sample count, e.g. '{what}:25'"))
            })?;
            let m: u64 = text
                .parse()
                .map_err(|_| Error::Validation(format!("bad sample count '{text}' in '{s}'")))?;
            if m == 0 {
                return Err(Error::Validation(format!(
                    "sample count in '{s}' must be >= 1"
                )));
            }
            Ok(m)
        };
        let no_budget = |name: &str| -> Result<()> {
            if budget.is_some() {
                return Err(Error::Validation(format!(
                    "'{name}' does not take a sample count (got '{s}')"
                )));
            }
            Ok(())
        };
        match name {
            "exact" => {
                no_budget("exact")?;
                Ok(MethodSpec::Exact)
            }
            "svs" => {
                if extra.is_some() {
                    return Err(Error::Validation(format!("malformed method spec '{s}'")));
                }
                Ok(MethodSpec::Svs { m: parse_m("svs")? })
            }
            "ks" => {
                if extra.is_some() {
                    return Err(Error::Validation(format!("malformed method spec '{s}'")));
                }
                Ok(MethodSpec::Ks { m: parse_m("ks")? })
            }
            "amortized" => {
                no_budget("amortized")?;
                Ok(MethodSpec::Amortized)
            }
            "adapt" => {
                let normalization = match extra {
                    None => AdaptNormalization::AsWritten,
                    Some(text) => text.parse()?,
                };
                Ok(MethodSpec::Adapt {
                    m: parse_m("adapt")?,
                    normalization,
                })
            }
            other => Err(Error::Validation(format!(
                "unknown method '{other}' (expected exact, svs:M, ks:M, amortized, adapt:M)"
            ))),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Exact => write!(f, "exact"),
            MethodSpec::Svs { m } => write!(f, "svs:{m}"),
            MethodSpec::Ks { m } => write!(f, "ks:{m}"),
            MethodSpec::Amortized => write!(f, "amortized"),
            MethodSpec::Adapt {
                m,
                normalization: AdaptNormalization::AsWritten,
            } => {
                write!(f, "adapt:{m}")
            }
            MethodSpec::Adapt {
                m,
                normalization: AdaptNormalization::VirtualSample,
            } => {
                write!(f, "adapt:{m}:virtual_sample")
            }
        }
    }
}

/// Which class to attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// The classifier's argmax on the full input.
    Predicted,
    Fixed(usize),
}

pub struct ExplainOptions<'a, S: Scalar> {
    pub method: MethodSpec,
    pub master_seed: u64,
    pub label: LabelPolicy,
    /// Length ceiling for exact enumeration.
    pub exact_cap: usize,
    pub pad: &'a str,
    /// Required for `amortized` and `adapt`.
    pub model: Option<&'a AmortizedModel<S>>,
}

impl<'a, S: Scalar> ExplainOptions<'a, S> {
    pub fn new(method: MethodSpec, master_seed: u64) -> Self {
        ExplainOptions {
            method,
            master_seed,
            label: LabelPolicy::Predicted,
            exact_cap: DEFAULT_EXACT_CAP,
            pad: DEFAULT_PAD_TOKEN,
            model: None,
        }
    }
}

/// An attribution plus its evaluation cost.
#[derive(Debug, Clone)]
pub struct ExplainOutcome<S: Scalar> {
    pub attribution: Attribution<S>,
    /// Distinct masked inputs the classifier scored (cache counter).
    pub distinct_evaluations: usize,
    /// Total coalition-value lookups, cached or not.
    pub lookups: usize,
    /// Classifier calls outside the cache (label resolution).
    pub uncached_calls: usize,
}

/// Explains one instance with the configured method.
pub fn explain_instance<S: Scalar>(
    classifier: &dyn Classifier<S>,
    x: &TokenSequence,
    options: &ExplainOptions<'_, S>,
) -> Result<ExplainOutcome<S>> {
    let (label, uncached_calls) = match options.label {
        LabelPolicy::Predicted => (predicted_label(classifier, x)?, 1),
        LabelPolicy::Fixed(l) => (l, 0),
    };

    if let MethodSpec::Amortized = options.method {
        let model = options.model.ok_or_else(|| {
            Error::Validation("the amortized method requires a trained model".to_string())
        })?;
        if label >= classifier.num_classes() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                classifier.num_classes()
            )));
        }
        let attribution = predict_amortized(model, x, label, classifier.value_mode())?;
        return Ok(ExplainOutcome {
            attribution,
            distinct_evaluations: 0,
            lookups: 0,
            uncached_calls,
        });
    }

    let values = ValueCache::new(classifier, x, label, options.pad)?;
    let attribution = match options.method {
        MethodSpec::Exact => exact_shapley(&values, options.exact_cap)?,
        MethodSpec::Svs { m } => svs(&values, m, options.master_seed)?,
        MethodSpec::Ks { m } => kernelshap(&values, m, options.master_seed)?,
        MethodSpec::Adapt { m, normalization } => {
            let model = options.model.ok_or_else(|| {
                Error::Validation("local adaptation requires a trained model".to_string())
            })?;
            local_adapt(model, &values, m, options.master_seed, normalization)?
        }
        MethodSpec::Amortized => unreachable!("handled above"),
    };
    Ok(ExplainOutcome {
        attribution,
        distinct_evaluations: values.distinct_evaluations(),
        lookups: values.lookups(),
        uncached_calls,
    })
}
