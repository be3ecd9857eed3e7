//! Synthetic datasets with analytically known classifiers.
//!
//! The generator emits token sequences together with the interaction
//! classifier that labels them, so exact ground-truth attributions exist
//! for every experiment. Signal mixes unigram weights with pair bonuses;
//! the pair rules make the game non-additive by default.
//!
//! Generation is single-threaded on purpose: byte-identical reruns matter
//! more here than speed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::classifier::builtin::{ClassifierDescriptor, Link, PairRule};
use crate::classifier::{predicted_label, Classifier};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::seed::{mix_seed, rng_from_seed};
use crate::types::{TokenSequence, ValueMode, DEFAULT_PAD_TOKEN};

/// Shape of a generated dataset.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub instances: usize,
    /// Instance lengths, chosen uniformly per instance.
    pub lengths: Vec<usize>,
    /// Vocabulary size; tokens are `w000`, `w001`, ...
    pub vocab: usize,
    /// How many vocabulary tokens carry a nonzero weight.
    pub signal: usize,
    /// Weights are drawn uniformly from ±scale.
    pub weight_scale: f64,
    /// Number of pair-bonus rules among signal tokens.
    pub pairs: usize,
    /// Pair bonuses are drawn uniformly from ±scale.
    pub pair_scale: f64,
    /// Probability of flipping a gold label away from the classifier.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            instances: 100,
            lengths: vec![8],
            vocab: 60,
            signal: 30,
            weight_scale: 1.0,
            pairs: 8,
            pair_scale: 0.75,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl ToySpec {
    fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::Validation("instances must be positive".to_string()));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::Validation(
                "length distribution must be non-empty with positive lengths".to_string(),
            ));
        }
        if self.vocab == 0 || self.signal == 0 || self.signal > self.vocab {
            return Err(Error::Validation(format!(
                "need 1 <= signal <= vocab, got signal={} vocab={}",
                self.signal, self.vocab
            )));
        }
        if self.weight_scale.is_nan() || self.weight_scale <= 0.0 {
            return Err(Error::Validation(
                "weight scale must be positive (zero-weight signal is infeasible)".to_string(),
            ));
        }
        if self.pairs > 0 && (self.pair_scale.is_nan() || self.pair_scale <= 0.0) {
            return Err(Error::Validation(
                "pair scale must be positive when pair rules are requested".to_string(),
            ));
        }
        let max_pairs = self.signal * (self.signal.saturating_sub(1)) / 2;
        if self.pairs > max_pairs {
            return Err(Error::Validation(format!(
                "{} pair rules requested but only {max_pairs} distinct pairs exist",
                self.pairs
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Validation(format!(
                "label noise {} outside [0, 1)",
                self.noise
            )));
        }
        Ok(())
    }
}

fn token_name(index: usize) -> String {
    format!("w{index:03}")
}

/// Generates instances plus the classifier that explains them. Gold
/// labels equal the classifier's predictions except where noise flips
/// them.
pub fn generate_dataset(spec: &ToySpec) -> Result<(Vec<DatasetRecord>, ClassifierDescriptor)> {
    spec.validate()?;
    let mut rng = rng_from_seed(mix_seed(spec.seed, &[b"toygen"], 0));

    let vocab: Vec<String> = (0..spec.vocab).map(token_name).collect();
    debug_assert!(vocab.iter().all(|t| t != DEFAULT_PAD_TOKEN));

    let mut signal: Vec<String> = vocab.clone();
    signal.shuffle(&mut rng);
    signal.truncate(spec.signal);
    let weights: std::collections::BTreeMap<String, f64> = signal
        .iter()
        .map(|t| {
            let w = (2.0 * rng.random::<f64>() - 1.0) * spec.weight_scale;
            (t.clone(), w)
        })
        .collect();

    let mut all_pairs: Vec<(usize, usize)> = (0..spec.signal)
        .flat_map(|i| ((i + 1)..spec.signal).map(move |j| (i, j)))
        .collect();
    all_pairs.shuffle(&mut rng);
    let pairs: Vec<PairRule> = all_pairs
        .into_iter()
        .take(spec.pairs)
        .map(|(i, j)| PairRule {
            a: signal[i].clone(),
            b: signal[j].clone(),
            bonus: (2.0 * rng.random::<f64>() - 1.0) * spec.pair_scale,
        })
        .collect();

    let bias = (2.0 * rng.random::<f64>() - 1.0) * 0.1 * spec.weight_scale;
    let descriptor = ClassifierDescriptor::Interaction {
        weights,
        pairs,
        bias,
        link: Link::Logistic,
    };
    let classifier = descriptor.build::<f64>(ValueMode::Probability);

    let width = spec.instances.to_string().len().max(4);
    let mut records = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let len = spec.lengths[rng.random_range(0..spec.lengths.len())];
        let tokens: Vec<String> = (0..len)
            .map(|_| vocab[rng.random_range(0..spec.vocab)].clone())
            .collect();
        let x = TokenSequence::new(format!("t{i:0width$}"), tokens)?;
        let mut label = predicted_label(classifier.as_ref(), &x)?;
        if spec.noise > 0.0 && rng.random::<f64>() < spec.noise {
            label = 1 - label;
        }
        records.push(DatasetRecord {
            id: x.id,
            tokens: x.tokens,
            label,
        });
    }
    Ok((records, descriptor))
}

/// Accuracy of `classifier` against the gold labels of `records`.
pub fn dataset_accuracy<S: crate::num::Scalar>(
    classifier: &dyn Classifier<S>,
    records: &[DatasetRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("empty dataset".to_string()));
    }
    let mut hits = 0usize;
    for rec in records {
        let x = rec.to_sequence()?;
        if predicted_label(classifier, &x)? == rec.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Selects exactly n/C instances per class by seeded shuffle, keeping
/// dataset order among the selected.
pub fn balanced_subsample(
    records: &[DatasetRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    if records.is_empty() {
        return Err(Error::Contract("empty dataset".to_string()));
    }
    let classes = records.iter().map(|r| r.label).max().unwrap() + 1;
    if n == 0 || !n.is_multiple_of(classes) {
        return Err(Error::Validation(format!(
            "cannot split {n} instances evenly over {classes} classes"
        )));
    }
    let per_class = n / classes;
    let mut rng = rng_from_seed(mix_seed(seed, &[b"balanced-subsample"], 0));
    let mut keep = vec![false; records.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == class)
            .collect();
        if members.len() < per_class {
            return Err(Error::Validation(format!(
                "class {class} has {} instances, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            keep[i] = true;
        }
    }
    Ok(records
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, r)| r.clone())
        .collect())
}
