//! Analytic built-in classifiers.
//!
//! [`AdditiveClassifier`] scores a sequence as bias plus the sum of
//! per-token weights; its exact Shapley values in raw-score mode equal the
//! weights, which makes it the canonical exactness fixture.
//! [`InteractionClassifier`] adds pairwise bonuses that fire when both
//! token identities are visible, so its value function is deliberately
//! non-additive.
//!
//! Both are binary: class 0 carries a constant raw score of 0, class 1
//! carries the margin. In probability mode the margin goes through a
//! logistic link, which coincides with the softmax of the two raw scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::types::{TokenSequence, ValueMode};

/// Serialized form of a built-in classifier, the unit stored in descriptor
/// files and emitted by the dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierDescriptor {
    Additive {
        weights: BTreeMap<String, f64>,
        bias: f64,
    },
    Interaction {
        weights: BTreeMap<String, f64>,
        pairs: Vec<PairRule>,
        bias: f64,
        link: Link,
    },
}

/// Bonus added to the margin when both tokens are present in the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRule {
    pub a: String,
    pub b: String,
    pub bonus: f64,
}

/// Monotone squashing applied in probability mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
}

impl ClassifierDescriptor {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), 1, e))
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("descriptor serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Canonical JSON: `BTreeMap` keys plus sorted pair rules make this
    /// independent of construction order.
    pub fn canonical_json(&self) -> String {
        let mut normalized = self.clone();
        if let ClassifierDescriptor::Interaction { pairs, .. } = &mut normalized {
            pairs.sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
        }
        serde_json::to_string(&normalized).expect("descriptor serializes")
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierDescriptor::Additive { .. } => "additive",
            ClassifierDescriptor::Interaction { .. } => "interaction",
        }
    }

    /// Short stable identity string for manifests.
    pub fn identity(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("builtin:{}:{hex}", self.kind())
    }

    pub fn build<S: Scalar>(&self, mode: ValueMode) -> Box<dyn Classifier<S>> {
        match self {
            ClassifierDescriptor::Additive { weights, bias } => Box::new(AdditiveClassifier::new(
                weights.clone().into_iter().collect(),
                *bias,
                mode,
            )),
            ClassifierDescriptor::Interaction {
                weights,
                pairs,
                bias,
                link,
            } => Box::new(InteractionClassifier::new(
                weights.clone().into_iter().collect(),
                pairs.clone(),
                *bias,
                *link,
                mode,
            )),
        }
    }
}

fn descriptor_identity(descriptor: &ClassifierDescriptor) -> String {
    descriptor.identity()
}

/// Emits the class vector for a binary margin under the given mode.
fn margin_vector<S: Scalar>(margin: S, mode: ValueMode) -> Vec<S> {
    match mode {
        ValueMode::RawScore => vec![S::zero(), margin],
        ValueMode::Probability => {
            let p = sigmoid(margin);
            vec![S::one() - p, p]
        }
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        let e = (-z).exp();
        S::one() / (S::one() + e)
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Bias plus the sum of weights of visible tokens; unknown tokens weigh 0.
pub struct AdditiveClassifier<S: Scalar> {
    weights: HashMap<String, S>,
    bias: S,
    mode: ValueMode,
    identity: String,
}

impl<S: Scalar> AdditiveClassifier<S> {
    pub fn new(weights: HashMap<String, f64>, bias: f64, mode: ValueMode) -> Self {
        let descriptor = ClassifierDescriptor::Additive {
            weights: weights.clone().into_iter().collect(),
            bias,
        };
        AdditiveClassifier {
            weights: weights
                .into_iter()
                .map(|(t, w)| (t, S::from_f64(w)))
                .collect(),
            bias: S::from_f64(bias),
            mode,
            identity: descriptor_identity(&descriptor),
        }
    }

    fn margin(&self, tokens: &[String]) -> S {
        let mut z = self.bias;
        for t in tokens {
            if let Some(&w) = self.weights.get(t) {
                z += w;
            }
        }
        z
    }
}

impl<S: Scalar> Classifier<S> for AdditiveClassifier<S> {
    fn descriptor(&self) -> String {
        self.identity.clone()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn value_mode(&self) -> ValueMode {
        self.mode
    }

    fn predict_batch(&self, inputs: &[TokenSequence]) -> Result<Vec<Vec<S>>> {
        Ok(inputs
            .iter()
            .map(|x| margin_vector(self.margin(&x.tokens), self.mode))
            .collect())
    }
}

/// Additive margin plus pairwise bonuses over visible token identities.
pub struct InteractionClassifier<S: Scalar> {
    weights: HashMap<String, S>,
    pairs: Vec<(String, String, S)>,
    bias: S,
    mode: ValueMode,
    identity: String,
}

impl<S: Scalar> InteractionClassifier<S> {
    pub fn new(
        weights: HashMap<String, f64>,
        pairs: Vec<PairRule>,
        bias: f64,
        link: Link,
        mode: ValueMode,
    ) -> Self {
        let descriptor = ClassifierDescriptor::Interaction {
            weights: weights.clone().into_iter().collect(),
            pairs: pairs.clone(),
            bias,
            link,
        };
        let mut ordered: Vec<(String, String, S)> = pairs
            .into_iter()
            .map(|p| (p.a, p.b, S::from_f64(p.bonus)))
            .collect();
        ordered.sort_by(|p, q| (&p.0, &p.1).cmp(&(&q.0, &q.1)));
        InteractionClassifier {
            weights: weights
                .into_iter()
                .map(|(t, w)| (t, S::from_f64(w)))
                .collect(),
            pairs: ordered,
            bias: S::from_f64(bias),
            mode,
            identity: descriptor_identity(&descriptor),
        }
    }

    fn margin(&self, tokens: &[String]) -> S {
        let mut z = self.bias;
        let mut present: HashSet<&str> = HashSet::with_capacity(tokens.len());
        for t in tokens {
            if let Some(&w) = self.weights.get(t) {
                z += w;
            }
            present.insert(t.as_str());
        }
        // Each rule fires at most once per input, regardless of repeats.
        for (a, b, bonus) in &self.pairs {
            if present.contains(a.as_str()) && present.contains(b.as_str()) {
                z += *bonus;
            }
        }
        z
    }
}

impl<S: Scalar> Classifier<S> for InteractionClassifier<S> {
    fn descriptor(&self) -> String {
        self.identity.clone()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn value_mode(&self) -> ValueMode {
        self.mode
    }

    fn predict_batch(&self, inputs: &[TokenSequence]) -> Result<Vec<Vec<S>>> {
        Ok(inputs
            .iter()
            .map(|x| margin_vector(self.margin(&x.tokens), self.mode))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::value;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::new("t", tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    fn weights(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect()
    }

    #[test]
    fn additive_raw_score_sums_visible_weights() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(&[("good", 0.5)]), 0.0, ValueMode::RawScore);
        let v = value(&clf, &seq(&["good", "[PAD]"]), 1).unwrap();
        assert_eq!(v, 0.5);
        let v = value(&clf, &seq(&["[PAD]", "[PAD]"]), 1).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn all_pad_input_scores_the_bias() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(weights(&[("good", 0.5)]), 0.3, ValueMode::RawScore);
        let v = value(&clf, &seq(&["[PAD]", "[PAD]", "[PAD]"]), 1).unwrap();
        assert_eq!(v, 0.3);
    }

    #[test]
    fn probability_mode_is_a_distribution() {
        let clf: AdditiveClassifier<f64> = AdditiveClassifier::new(
            weights(&[("good", 2.0), ("bad", -3.0)]),
            0.1,
            ValueMode::Probability,
        );
        let out = clf.predict_batch(&[seq(&["good", "bad", "x"])]).unwrap();
        let p = &out[0];
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_means_half_probability() {
        let clf: AdditiveClassifier<f64> =
            AdditiveClassifier::new(HashMap::new(), 0.0, ValueMode::Probability);
        let v = value(&clf, &seq(&["a"]), 1).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn batching_equals_single_calls() {
        let clf: InteractionClassifier<f64> = InteractionClassifier::new(
            weights(&[("a", 1.0), ("b", -0.5)]),
            vec![PairRule {
                a: "a".into(),
                b: "b".into(),
                bonus: 0.25,
            }],
            0.0,
            Link::Logistic,
            ValueMode::Probability,
        );
        let xs = [seq(&["a", "b"]), seq(&["b", "c"]), seq(&["[PAD]", "[PAD]"])];
        let batched = clf.predict_batch(&xs).unwrap();
        for (x, row) in xs.iter().zip(&batched) {
            let single = clf.predict_batch(std::slice::from_ref(x)).unwrap();
            assert_eq!(&single[0], row);
        }
    }

    #[test]
    fn pair_rule_fires_only_when_both_tokens_visible() {
        let clf: InteractionClassifier<f64> = InteractionClassifier::new(
            weights(&[("a", 1.0), ("b", 1.0)]),
            vec![PairRule {
                a: "a".into(),
                b: "b".into(),
                bonus: 5.0,
            }],
            0.0,
            Link::Logistic,
            ValueMode::RawScore,
        );
        assert_eq!(value(&clf, &seq(&["a", "b"]), 1).unwrap(), 7.0);
        assert_eq!(value(&clf, &seq(&["a", "[PAD]"]), 1).unwrap(), 1.0);
        assert_eq!(value(&clf, &seq(&["a", "b", "a"]), 1).unwrap(), 8.0);
    }

    #[test]
    fn descriptor_identity_ignores_construction_order() {
        let d1 = ClassifierDescriptor::Interaction {
            weights: [("a".to_string(), 1.0), ("b".to_string(), 2.0)].into(),
            pairs: vec![
                PairRule {
                    a: "a".into(),
                    b: "b".into(),
                    bonus: 1.0,
                },
                PairRule {
                    a: "a".into(),
                    b: "c".into(),
                    bonus: 2.0,
                },
            ],
            bias: 0.0,
            link: Link::Logistic,
        };
        let d2 = ClassifierDescriptor::Interaction {
            weights: [("b".to_string(), 2.0), ("a".to_string(), 1.0)].into(),
            pairs: vec![
                PairRule {
                    a: "a".into(),
                    b: "c".into(),
                    bonus: 2.0,
                },
                PairRule {
                    a: "a".into(),
                    b: "b".into(),
                    bonus: 1.0,
                },
            ],
            bias: 0.0,
            link: Link::Logistic,
        };
        assert_eq!(d1.identity(), d2.identity());
    }

    #[test]
    fn descriptor_round_trips_through_json() {
        let d = ClassifierDescriptor::Additive {
            weights: [("good".to_string(), 0.5)].into(),
            bias: 0.25,
        };
        let json = serde_json::to_string(&d).unwrap();
        let back: ClassifierDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let clf = back.build::<f64>(ValueMode::RawScore);
        assert_eq!(value(clf.as_ref(), &seq(&["good"]), 1).unwrap(), 0.75);
    }
}
