//! Exact Shapley values by full subset enumeration.
//!
//! For a sequence of length L this evaluates all 2^L coalitions once
//! through the shared cache and accumulates
//!
//! ```text
//! φ_i = (1/L) Σ_{s: s_i≠1} C(L−1,|s|)^{-1} [v(s ∪ {i}) − v(s)]
//! ```
//!
//! with exact integer binomial coefficients. This is the ground truth the
//! stochastic estimators are tested against, so it refuses lengths above
//! the cap instead of approximating.

use crate::classifier::ValueCache;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::types::{Attribution, Mask, Method};

/// Default enumeration cap; 2^15 evaluations per instance.
pub const DEFAULT_EXACT_CAP: usize = 15;

/// Hard ceiling independent of configuration: 2^24 cached values is the
/// most this implementation will ever hold per instance.
pub const MAX_EXACT_LENGTH: usize = 24;

/// Row `n` of Pascal's triangle: exact C(n, k) for k = 0..=n.
pub(crate) fn binomial_row(n: usize) -> Vec<u128> {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(1);
        for w in row.windows(2) {
            next.push(w[0] + w[1]);
        }
        next.push(1);
        row = next;
    }
    row
}

/// Tolerance for the efficiency self-check: 1e-9 in double precision,
/// widened to what the scalar type can actually attain.
pub(crate) fn efficiency_tolerance<S: Scalar>(scale: S) -> S {
    let floor = S::from_f64(1e-9).max(S::epsilon() * S::from_f64(32.0));
    floor * scale.abs().max(S::one())
}

/// Computes exact Shapley values for the cached instance.
///
/// Fails with a budget error when the sequence is longer than `cap`;
/// exactness beyond the cap is a non-goal.
pub fn exact_shapley<S: Scalar>(values: &ValueCache<'_, S>, cap: usize) -> Result<Attribution<S>> {
    let len = values.len();
    let cap = cap.min(MAX_EXACT_LENGTH);
    if len > cap {
        return Err(Error::BudgetExceeded { length: len, cap });
    }

    let total: usize = 1 << len;
    // Gray-code order: consecutive masks differ in one position, which
    // keeps incremental transports cheap. The accumulation below indexes
    // by bitset, so the result does not depend on this order.
    let masks: Vec<Mask> = (0..total)
        .map(|t| Mask::from_bitset((t ^ (t >> 1)) as u64, len))
        .collect();
    values.prefetch(&masks)?;
    let mut table = vec![S::zero(); total];
    for (t, mask) in masks.iter().enumerate() {
        table[t ^ (t >> 1)] = values.value(mask)?;
    }

    let sizes = binomial_row(len - 1);
    let coeff: Vec<S> = (0..len)
        .map(|k| S::from_f64(1.0 / (len as f64 * sizes[k] as f64)))
        .collect();

    let mut scores = vec![S::zero(); len];
    for (i, score) in scores.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in 0..total {
            if s & bit == 0 {
                let k = (s as u32).count_ones() as usize;
                *score += coeff[k] * (table[s | bit] - table[s]);
            }
        }
    }

    let change = table[total - 1] - table[0];
    let residual = (scores.iter().copied().sum::<S>() - change).abs();
    if residual > efficiency_tolerance(change) {
        return Err(Error::Numerical {
            detail: format!(
                "efficiency identity violated by {residual} on instance {}",
                values.instance().id
            ),
        });
    }

    Ok(Attribution {
        instance_id: values.instance().id.clone(),
        label: values.label(),
        scores,
        method: Method::Exact,
        samples: 0,
        seed: 0,
        value_mode: values.value_mode(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::builtin::{AdditiveClassifier, InteractionClassifier, Link, PairRule};
    use crate::classifier::Classifier;
    use crate::types::{TokenSequence, ValueMode, DEFAULT_PAD_TOKEN};
    use std::collections::HashMap;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::new("t", tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    fn weights(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect()
    }

    fn explain(clf: &dyn Classifier<f64>, x: &TokenSequence, label: usize) -> Vec<f64> {
        let cache = ValueCache::new(clf, x, label, DEFAULT_PAD_TOKEN).unwrap();
        exact_shapley(&cache, DEFAULT_EXACT_CAP).unwrap().scores
    }

    /// Independent oracle: average marginal contributions over all L!
    /// orderings, straight from the definition. Slow, but it shares no
    /// code with the enumeration above.
    fn permutation_oracle(clf: &dyn Classifier<f64>, x: &TokenSequence, label: usize) -> Vec<f64> {
        fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for (i, &head) in items.iter().enumerate() {
                let mut rest = items.to_vec();
                rest.remove(i);
                for mut tail in permutations(&rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }

        let len = x.len();
        let cache = ValueCache::new(clf, x, label, DEFAULT_PAD_TOKEN).unwrap();
        let orderings = permutations(&(0..len).collect::<Vec<_>>());
        let mut scores = vec![0.0; len];
        for order in &orderings {
            let mut mask = Mask::empty(len);
            let mut prev = cache.value(&mask).unwrap();
            for &i in order {
                mask.set(i, true);
                let cur = cache.value(&mask).unwrap();
                scores[i] += cur - prev;
                prev = cur;
            }
        }
        let count = orderings.len() as f64;
        scores.iter().map(|s| s / count).collect()
    }

    fn interaction_fixture() -> InteractionClassifier<f64> {
        InteractionClassifier::new(
            weights(&[("a", 0.8), ("b", -0.5), ("c", 0.3), ("d", -0.1), ("e", 0.6)]),
            vec![
                PairRule {
                    a: "a".into(),
                    b: "b".into(),
                    bonus: 0.7,
                },
                PairRule {
                    a: "c".into(),
                    b: "e".into(),
                    bonus: -0.4,
                },
                PairRule {
                    a: "b".into(),
                    b: "d".into(),
                    bonus: 0.2,
                },
            ],
            0.15,
            Link::Logistic,
            ValueMode::RawScore,
        )
    }

    #[test]
    fn additive_fixture_recovers_weights() {
        let clf: AdditiveClassifier<f64> = AdditiveClassifier::new(
            weights(&[("u", 0.5), ("v", -0.2), ("w", 0.1)]),
            0.3,
            ValueMode::RawScore,
        );
        let scores = explain(&clf, &seq(&["u", "v", "w"]), 1);
        for (got, want) in scores.iter().zip([0.5, -0.2, 0.1]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn single_token_game() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(&[("u", 0.5)]), 0.3, ValueMode::RawScore);
        let scores = explain(&clf, &seq(&["u"]), 1);
        assert!((scores[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn and_game_splits_evenly() {
        let clf: InteractionClassifier<f64> = InteractionClassifier::new(
            HashMap::new(),
            vec![PairRule {
                a: "a".into(),
                b: "b".into(),
                bonus: 1.0,
            }],
            0.0,
            Link::Logistic,
            ValueMode::RawScore,
        );
        let scores = explain(&clf, &seq(&["a", "b"]), 1);
        assert!((scores[0] - 0.5).abs() < 1e-12);
        assert!((scores[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_the_permutation_definition_on_an_interaction_game() {
        let clf = interaction_fixture();
        for tokens in [
            vec!["a", "b", "c", "d", "e"],
            vec!["e", "d", "c", "b", "a"],
            vec!["a", "x", "b", "y", "c"],
        ] {
            let x = seq(&tokens);
            let fast = explain(&clf, &x, 1);
            let slow = permutation_oracle(&clf, &x, 1);
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() < 1e-10, "{f} vs {s}");
            }
        }
    }

    #[test]
    fn matches_permutation_definition_in_probability_mode() {
        let clf: InteractionClassifier<f64> = InteractionClassifier::new(
            weights(&[("a", 0.8), ("b", -0.5)]),
            vec![PairRule {
                a: "a".into(),
                b: "b".into(),
                bonus: 0.7,
            }],
            0.1,
            Link::Logistic,
            ValueMode::Probability,
        );
        let x = seq(&["a", "b", "z", "a"]);
        let fast = explain(&clf, &x, 1);
        let slow = permutation_oracle(&clf, &x, 1);
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetry_under_token_permutation() {
        let clf = interaction_fixture();
        let forward = explain(&clf, &seq(&["a", "b", "c", "d"]), 1);
        let swapped = explain(&clf, &seq(&["c", "b", "a", "d"]), 1);
        assert!((forward[0] - swapped[2]).abs() < 1e-12);
        assert!((forward[2] - swapped[0]).abs() < 1e-12);
        assert!((forward[1] - swapped[1]).abs() < 1e-12);
        assert!((forward[3] - swapped[3]).abs() < 1e-12);
    }

    #[test]
    fn dummy_token_scores_zero() {
        let clf = interaction_fixture();
        // "zz" has no weight and joins no pair rule.
        let scores = explain(&clf, &seq(&["a", "zz", "b", "e"]), 1);
        assert!(scores[1].abs() <= 1e-12);
    }

    #[test]
    fn linearity_over_summed_value_functions() {
        let w1 = weights(&[("a", 0.8), ("b", -0.5), ("c", 0.3)]);
        let w2 = weights(&[("a", -0.1), ("b", 0.4), ("c", 0.2)]);
        let p1 = vec![PairRule {
            a: "a".into(),
            b: "b".into(),
            bonus: 0.7,
        }];
        let p2 = vec![PairRule {
            a: "b".into(),
            b: "c".into(),
            bonus: -0.3,
        }];
        let sum_weights = weights(&[("a", 0.7), ("b", -0.1), ("c", 0.5)]);
        let mut sum_pairs = p1.clone();
        sum_pairs.extend(p2.clone());

        let c1: InteractionClassifier<f64> =
            InteractionClassifier::new(w1, p1, 0.2, Link::Logistic, ValueMode::RawScore);
        let c2: InteractionClassifier<f64> =
            InteractionClassifier::new(w2, p2, -0.1, Link::Logistic, ValueMode::RawScore);
        let c3: InteractionClassifier<f64> = InteractionClassifier::new(
            sum_weights,
            sum_pairs,
            0.1,
            Link::Logistic,
            ValueMode::RawScore,
        );

        let x = seq(&["a", "b", "c", "q"]);
        let phi1 = explain(&c1, &x, 1);
        let phi2 = explain(&c2, &x, 1);
        let phi3 = explain(&c3, &x, 1);
        for i in 0..x.len() {
            assert!((phi3[i] - (phi1[i] + phi2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_sequences_beyond_the_cap() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(HashMap::new(), 0.0, ValueMode::RawScore);
        let tokens: Vec<String> = (0..16).map(|i| format!("t{i}")).collect();
        let x = TokenSequence::new("long", tokens).unwrap();
        let cache = ValueCache::new(&clf, &x, 1, DEFAULT_PAD_TOKEN).unwrap();
        match exact_shapley(&cache, 15) {
            Err(Error::BudgetExceeded {
                length: 16,
                cap: 15,
            }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn consumes_exactly_two_to_the_l_evaluations() {
        let clf = interaction_fixture();
        let x = seq(&["a", "b", "c", "d", "e", "f"]);
        let cache = ValueCache::new(&clf, &x, 1, DEFAULT_PAD_TOKEN).unwrap();
        exact_shapley(&cache, DEFAULT_EXACT_CAP).unwrap();
        assert_eq!(cache.distinct_evaluations(), 64);
    }

    #[test]
    fn binomial_rows_are_exact() {
        assert_eq!(binomial_row(0), vec![1]);
        assert_eq!(binomial_row(4), vec![1, 4, 6, 4, 1]);
        assert_eq!(binomial_row(14)[7], 3432);
    }
}
