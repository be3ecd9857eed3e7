//! Masking faithfulness: how quickly predictions change when the
//! highest-attributed tokens are padded out.
//!
//! Accuracy is measured against the classifier's own predictions on the
//! unmasked inputs, not against gold labels: the question is whether the
//! attribution found the tokens the prediction actually rests on.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::classifier::{argmax, Classifier};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::stability::top_indices;
use crate::types::{apply_mask, Attribution, Mask, TokenSequence};

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FaithfulnessRow {
    pub alpha: f64,
    /// Fraction of instances whose masked prediction still matches the
    /// unmasked one.
    pub accuracy: f64,
    pub instances: usize,
}

fn masked_count(alpha: f64, len: usize) -> usize {
    // ceil(α·L), nudged so float noise cannot bump an exact integer
    // product up to the next count.
    let k = (alpha * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len)
}

fn validate_alphas(alphas: &[f64]) -> Result<Vec<f64>> {
    let mut sorted = alphas.to_vec();
    for &a in &sorted {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Validation(format!("alpha {a} outside (0, 1]")));
        }
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("duplicate alpha values".to_string()));
    }
    Ok(sorted)
}

/// Masks the top-α tokens of every instance and reports accuracy against
/// the original predictions, one row per α plus the α=0 baseline.
pub fn faithfulness_curve<S: Scalar>(
    classifier: &dyn Classifier<S>,
    instances: &[TokenSequence],
    attributions: &[Attribution<S>],
    alphas: &[f64],
    pad: &str,
) -> Result<Vec<FaithfulnessRow>> {
    if instances.is_empty() {
        return Err(Error::Contract("no instances to evaluate".to_string()));
    }
    let alphas = validate_alphas(alphas)?;

    let mut scores_by_id: HashMap<&str, &[S]> = HashMap::new();
    for att in attributions {
        if scores_by_id
            .insert(att.instance_id.as_str(), &att.scores)
            .is_some()
        {
            return Err(Error::Contract(format!(
                "duplicate attribution for instance {}",
                att.instance_id
            )));
        }
    }

    let per_instance: Vec<Vec<bool>> = instances
        .par_iter()
        .map(|x| -> Result<Vec<bool>> {
            let scores = *scores_by_id
                .get(x.id.as_str())
                .ok_or_else(|| Error::Contract(format!("no attribution for instance {}", x.id)))?;
            if scores.len() != x.len() {
                return Err(Error::Contract(format!(
                    "instance {}: {} scores for {} tokens",
                    x.id,
                    scores.len(),
                    x.len()
                )));
            }
            let mut batch = Vec::with_capacity(alphas.len() + 1);
            batch.push(x.clone());
            for &alpha in &alphas {
                let k = masked_count(alpha, x.len());
                let mut mask = Mask::full(x.len());
                for index in top_indices(scores, k) {
                    mask.set(index, false);
                }
                batch.push(apply_mask(x, &mask, pad)?);
            }
            let outputs = classifier.predict_batch(&batch)?;
            if outputs.len() != batch.len() {
                return Err(Error::Protocol {
                    detail: format!(
                        "classifier returned {} outputs for {} inputs",
                        outputs.len(),
                        batch.len()
                    ),
                });
            }
            let original = argmax(&outputs[0]);
            Ok(outputs[1..].iter().map(|o| argmax(o) == original).collect())
        })
        .collect::<Result<_>>()?;

    let n = instances.len();
    let mut rows = vec![FaithfulnessRow {
        alpha: 0.0,
        accuracy: 1.0,
        instances: n,
    }];
    for (i, &alpha) in alphas.iter().enumerate() {
        let hits = per_instance.iter().filter(|flags| flags[i]).count();
        rows.push(FaithfulnessRow {
            alpha,
            accuracy: hits as f64 / n as f64,
            instances: n,
        });
    }
    Ok(rows)
}

/// CSV rendering: `alpha,accuracy,n_instances`.
pub fn curve_csv(rows: &[FaithfulnessRow]) -> String {
    let mut out = String::from("alpha,accuracy,n_instances\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.alpha, row.accuracy, row.instances
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::builtin::AdditiveClassifier;
    use crate::classifier::{predicted_label, ValueCache};
    use crate::exact::exact_shapley;
    use crate::seed::rng_from_seed;
    use crate::types::{Method, ValueMode, DEFAULT_PAD_TOKEN};
    use rand::Rng;
    use std::collections::HashMap as StdHashMap;

    /// All-positive weights with a negative bias: masking the strongest
    /// tokens can only drag the margin down towards a flip.
    fn monotone_fixture(n: usize) -> (AdditiveClassifier<f64>, Vec<TokenSequence>) {
        let vocab: Vec<String> = (0..20).map(|i| format!("v{i:02}")).collect();
        let weights: StdHashMap<String, f64> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), 0.1 + 0.05 * i as f64))
            .collect();
        let clf = AdditiveClassifier::new(weights, -1.0, ValueMode::RawScore);
        let mut rng = rng_from_seed(17);
        let instances = (0..n)
            .map(|i| {
                let tokens: Vec<String> = (0..8)
                    .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                    .collect();
                TokenSequence::new(format!("f{i:03}"), tokens).unwrap()
            })
            .collect();
        (clf, instances)
    }

    fn exact_attributions(
        clf: &AdditiveClassifier<f64>,
        instances: &[TokenSequence],
    ) -> Vec<Attribution<f64>> {
        instances
            .iter()
            .map(|x| {
                let label = predicted_label(clf, x).unwrap();
                let values = ValueCache::new(clf, x, label, DEFAULT_PAD_TOKEN).unwrap();
                exact_shapley(&values, 15).unwrap()
            })
            .collect()
    }

    #[test]
    fn alpha_zero_row_comes_first_with_full_accuracy() {
        let (clf, instances) = monotone_fixture(20);
        let atts = exact_attributions(&clf, &instances);
        let rows = faithfulness_curve(
            &clf,
            &instances,
            &atts,
            &[0.05, 0.1, 0.2],
            DEFAULT_PAD_TOKEN,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].alpha, 0.0);
        assert_eq!(rows[0].accuracy, 1.0);
        let alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
        let mut ascending = alphas.clone();
        ascending.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(alphas, ascending);
    }

    #[test]
    fn exact_guided_masking_is_monotone_on_the_additive_fixture() {
        let (clf, instances) = monotone_fixture(60);
        let atts = exact_attributions(&clf, &instances);
        let rows = faithfulness_curve(
            &clf,
            &instances,
            &atts,
            &[0.1, 0.25, 0.5, 0.75, 1.0],
            DEFAULT_PAD_TOKEN,
        )
        .unwrap();
        for pair in rows.windows(2) {
            assert!(
                pair[1].accuracy <= pair[0].accuracy + 1e-12,
                "accuracy rose from {} to {}",
                pair[0].accuracy,
                pair[1].accuracy
            );
        }
    }

    #[test]
    fn informed_masking_beats_random_masking() {
        let (clf, instances) = monotone_fixture(80);
        let exact = exact_attributions(&clf, &instances);
        let mut rng = rng_from_seed(99);
        let random: Vec<Attribution<f64>> = instances
            .iter()
            .map(|x| Attribution {
                instance_id: x.id.clone(),
                label: 1,
                scores: (0..x.len()).map(|_| rng.random::<f64>()).collect(),
                method: Method::Exact,
                samples: 0,
                seed: 0,
                value_mode: ValueMode::RawScore,
            })
            .collect();
        let alpha = [0.25];
        let guided =
            faithfulness_curve(&clf, &instances, &exact, &alpha, DEFAULT_PAD_TOKEN).unwrap();
        let blind =
            faithfulness_curve(&clf, &instances, &random, &alpha, DEFAULT_PAD_TOKEN).unwrap();
        assert!(
            guided[1].accuracy <= blind[1].accuracy,
            "guided {} vs random {}",
            guided[1].accuracy,
            blind[1].accuracy
        );
    }

    #[test]
    fn missing_attributions_are_hard_errors() {
        let (clf, instances) = monotone_fixture(5);
        let mut atts = exact_attributions(&clf, &instances);
        atts.pop();
        let err =
            faithfulness_curve(&clf, &instances, &atts, &[0.1], DEFAULT_PAD_TOKEN).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(err.to_string().contains("f004"), "{err}");
    }

    #[test]
    fn masked_counts_take_the_ceiling() {
        assert_eq!(masked_count(0.01, 8), 1);
        assert_eq!(masked_count(0.1, 10), 1);
        assert_eq!(masked_count(0.11, 10), 2);
        assert_eq!(masked_count(0.2, 30), 6);
        assert_eq!(masked_count(1.0, 7), 7);
        assert_eq!(masked_count(0.5, 3), 2);
    }

    #[test]
    fn invalid_alphas_are_rejected() {
        let (clf, instances) = monotone_fixture(3);
        let atts = exact_attributions(&clf, &instances);
        for bad in [vec![0.0], vec![1.2], vec![0.1, 0.1]] {
            assert!(matches!(
                faithfulness_curve(&clf, &instances, &atts, &bad, DEFAULT_PAD_TOKEN).unwrap_err(),
                Error::Validation(_)
            ));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (clf, instances) = monotone_fixture(25);
        let atts = exact_attributions(&clf, &instances);
        let a =
            faithfulness_curve(&clf, &instances, &atts, &[0.1, 0.3], DEFAULT_PAD_TOKEN).unwrap();
        let b =
            faithfulness_curve(&clf, &instances, &atts, &[0.1, 0.3], DEFAULT_PAD_TOKEN).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![
            FaithfulnessRow {
                alpha: 0.0,
                accuracy: 1.0,
                instances: 10,
            },
            FaithfulnessRow {
                alpha: 0.1,
                accuracy: 0.8,
                instances: 10,
            },
        ];
        let csv = curve_csv(&rows);
        assert_eq!(csv, "alpha,accuracy,n_instances\n0,1,10\n0.1,0.8,10\n");
    }
}
