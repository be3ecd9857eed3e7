//! Local adaptation: amortized predictions refined by permutation samples.
//!
//! The accumulator starts at the surrogate's scores instead of zero, then
//! the ordinary sampled-permutation marginals are added on top. With an
//! all-zero surrogate and `AsWritten` this reproduces the plain sampler
//! bit for bit, because both walk the same seed stream (the sampler's
//! method tag, not this estimator's) and share one accumulation routine.

use serde::{Deserialize, Serialize};

use crate::classifier::ValueCache;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::derive_seed;
use crate::svs::add_permutation_marginals;
use crate::types::{Attribution, Method};

use super::AmortizedModel;

/// How the initial surrogate scores are folded into the average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptNormalization {
    /// Divide by the sample count m: the prior enters at weight 1/m.
    AsWritten,
    /// Divide by m + 1: the prior counts as one more permutation.
    VirtualSample,
}

impl std::str::FromStr for AdaptNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(AdaptNormalization::AsWritten),
            "virtual_sample" => Ok(AdaptNormalization::VirtualSample),
            other => Err(Error::Validation(format!(
                "unknown adapt normalization '{other}' (expected as_written or virtual_sample)"
            ))),
        }
    }
}

/// Runs m sampled permutations on top of the surrogate's initial scores.
pub fn local_adapt<S: Scalar>(
    model: &AmortizedModel<S>,
    values: &ValueCache<'_, S>,
    m: u64,
    master_seed: u64,
    normalization: AdaptNormalization,
) -> Result<Attribution<S>> {
    if m == 0 {
        return Err(Error::Contract(
            "local adaptation requires m ≥ 1".to_string(),
        ));
    }
    let instance = values.instance();
    let mut acc = model.scores(&instance.tokens, values.label())?;
    let id = instance.id.clone();
    add_permutation_marginals(values, &mut acc, m, |j| {
        derive_seed(master_seed, &id, Method::Svs, j)
    })?;
    let divisor = match normalization {
        AdaptNormalization::AsWritten => S::from_f64(m as f64),
        AdaptNormalization::VirtualSample => S::from_f64((m + 1) as f64),
    };
    let scores = acc.into_iter().map(|a| a / divisor).collect();
    Ok(Attribution {
        instance_id: id,
        label: values.label(),
        scores,
        method: Method::Adapt,
        samples: m,
        seed: master_seed,
        value_mode: values.value_mode(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amortized::AmortizedConfig;
    use crate::classifier::builtin::AdditiveClassifier;
    use crate::classifier::{predicted_label, ValueCache};
    use crate::svs::svs;
    use crate::types::{TokenSequence, ValueMode, DEFAULT_PAD_TOKEN};
    use std::collections::HashMap;

    fn weights() -> HashMap<String, f64> {
        [
            ("alpha", 0.9),
            ("beta", -0.4),
            ("gamma", 0.25),
            ("delta", 0.1),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn instance() -> TokenSequence {
        TokenSequence::new(
            "adapt-1",
            ["alpha", "beta", "gamma", "delta"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap()
    }

    fn small_config() -> AmortizedConfig {
        AmortizedConfig {
            hash_buckets: 128,
            embed_dim: 8,
            head_hidden: 4,
            ..AmortizedConfig::default()
        }
    }

    #[test]
    fn zero_model_as_written_matches_plain_sampler_bitwise() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(), 0.2, ValueMode::Probability);
        let x = instance();
        let label = predicted_label(&clf, &x).unwrap();
        let values = ValueCache::new(&clf, &x, label, DEFAULT_PAD_TOKEN).unwrap();
        let zero = AmortizedModel::<f64>::zeroed(small_config()).unwrap();

        for (m, seed) in [(1, 7), (13, 7), (25, 991)] {
            let plain = svs(&values, m, seed).unwrap();
            let adapted =
                local_adapt(&zero, &values, m, seed, AdaptNormalization::AsWritten).unwrap();
            for (a, b) in plain.scores.iter().zip(&adapted.scores) {
                assert_eq!(a.to_bits(), b.to_bits(), "m={m} seed={seed}");
            }
            assert_eq!(adapted.method, Method::Adapt);
            assert_eq!(adapted.samples, m);
        }
    }

    #[test]
    fn virtual_sample_shrinks_towards_zero_for_a_zero_model() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(), 0.2, ValueMode::RawScore);
        let x = instance();
        let label = predicted_label(&clf, &x).unwrap();
        let values = ValueCache::new(&clf, &x, label, DEFAULT_PAD_TOKEN).unwrap();
        let zero = AmortizedModel::<f64>::zeroed(small_config()).unwrap();

        let m = 9;
        let written = local_adapt(&zero, &values, m, 3, AdaptNormalization::AsWritten).unwrap();
        let virt = local_adapt(&zero, &values, m, 3, AdaptNormalization::VirtualSample).unwrap();
        let ratio = m as f64 / (m as f64 + 1.0);
        for (a, b) in written.scores.iter().zip(&virt.scores) {
            assert!((b - a * ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptation_starts_from_the_model_scores() {
        // One permutation of a single token: marginal = v(full) − v(∅),
        // so the adapted score is (model + marginal) / 1 exactly.
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(), 0.0, ValueMode::RawScore);
        let x = TokenSequence::new("adapt-one", vec!["alpha".to_string()]).unwrap();
        let values = ValueCache::new(&clf, &x, 1, DEFAULT_PAD_TOKEN).unwrap();
        let model = AmortizedModel::<f64>::init(small_config()).unwrap();
        let prior = model.scores(&x.tokens, 1).unwrap()[0];

        let adapted = local_adapt(&model, &values, 1, 0, AdaptNormalization::AsWritten).unwrap();
        let marginal = values.value_full().unwrap() - values.value_empty().unwrap();
        assert!((adapted.scores[0] - (prior + marginal)).abs() < 1e-15);
    }

    #[test]
    fn more_samples_pull_the_estimate_towards_exact_shapley() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(), 0.2, ValueMode::Probability);
        let x = instance();
        let label = predicted_label(&clf, &x).unwrap();
        let values = ValueCache::new(&clf, &x, label, DEFAULT_PAD_TOKEN).unwrap();
        let exact = crate::exact::exact_shapley(&values, 15).unwrap();
        let model = AmortizedModel::<f64>::init(small_config()).unwrap();

        let mse = |m: u64| {
            let a = local_adapt(&model, &values, m, 11, AdaptNormalization::AsWritten).unwrap();
            a.scores
                .iter()
                .zip(&exact.scores)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / exact.scores.len() as f64
        };
        // The untrained prior's bias decays as 1/m under as-written.
        assert!(mse(400) < mse(4));
    }

    #[test]
    fn zero_samples_are_a_contract_violation() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(), 0.2, ValueMode::Probability);
        let x = instance();
        let values = ValueCache::new(&clf, &x, 0, DEFAULT_PAD_TOKEN).unwrap();
        let model = AmortizedModel::<f64>::zeroed(small_config()).unwrap();
        let err = local_adapt(&model, &values, 0, 5, AdaptNormalization::AsWritten).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn normalization_parses_from_strings() {
        assert_eq!(
            "as_written".parse::<AdaptNormalization>().unwrap(),
            AdaptNormalization::AsWritten
        );
        assert_eq!(
            "virtual_sample".parse::<AdaptNormalization>().unwrap(),
            AdaptNormalization::VirtualSample
        );
        assert!("mean".parse::<AdaptNormalization>().is_err());
    }
}
