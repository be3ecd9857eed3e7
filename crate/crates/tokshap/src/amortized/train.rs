//! MSE training of the amortized surrogate against reference attributions.
//!
//! Determinism: the 8:1:1 split buckets each record by a stable hash of
//! its id, batch order per epoch is a seeded sort (epoch index mixed with
//! the id), and all updates run single-threaded. Two trainings from the
//! same references and config produce identical models.
//!
//! The optimizer is Adam with lazy embedding updates: only token-embedding
//! rows touched by a batch step, with bias correction from the global step
//! count. Dense head parameters step every batch.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::mix_seed;
use crate::stability::spearman;

use super::{isru, isru_grad, AmortizedConfig, AmortizedModel, ReferenceRecord};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: AmortizedConfig,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Fraction of the training split actually used; subsets are nested
    /// across fractions so learning curves compare like with like.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: AmortizedConfig::default(),
            learning_rate: 5e-5,
            max_epochs: 10,
            patience: 3,
            batch_size: 32,
            train_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub records: usize,
    pub train_records: usize,
    pub valid_records: usize,
    pub test_records: usize,
    pub train_fraction: f64,
    /// Fraction of distinct tokens sharing a hash bucket with another.
    pub collision_rate: f64,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Epochs where validation MSE improved, ascending.
    pub selected_epochs: Vec<usize>,
    pub train_mse: Vec<f64>,
    pub valid_mse: Vec<f64>,
    pub test_mse: f64,
    /// Mean Spearman between predicted and reference scores on the test
    /// split; degenerate (constant-rank) records are excluded.
    pub test_spearman: Option<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

fn split_bucket(id: &str) -> u64 {
    mix_seed(0, &[b"amortized-split", id.as_bytes()], 0) % 10
}

fn fraction_key(id: &str) -> u64 {
    mix_seed(0, &[b"amortized-fraction", id.as_bytes()], 0)
}

fn epoch_key(epoch: usize, id: &str) -> u64 {
    mix_seed(epoch as u64, &[b"amortized-batch", id.as_bytes()], 0)
}

/// Pooled per-token mean squared error of the model on `records`.
pub fn evaluation_mse<S: Scalar>(
    model: &AmortizedModel<S>,
    records: &[&ReferenceRecord<S>],
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for rec in records {
        let predicted = model.scores(&rec.sequence.tokens, rec.label)?;
        for (p, t) in predicted.iter().zip(&rec.scores) {
            let d = p.as_f64() - t.as_f64();
            sum += d * d;
        }
        count += rec.scores.len();
    }
    if count == 0 {
        return Err(Error::Contract("no tokens to evaluate".to_string()));
    }
    Ok(sum / count as f64)
}

struct Adam<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
    beta1: S,
    beta2: S,
    eps: S,
}

impl<S: Scalar> Adam<S> {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
        }
    }

    /// One Adam step on a single parameter; `c1`/`c2` are the step's bias
    /// corrections 1−β^t shared across all parameters.
    #[inline]
    fn step(&mut self, i: usize, param: &mut S, grad: S, lr: S, c1: S, c2: S) {
        self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * grad;
        self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * grad * grad;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        *param -= lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

struct BatchGradients<S: Scalar> {
    token_rows: BTreeMap<usize, Vec<S>>,
    label_embed: Vec<S>,
    w1: Vec<S>,
    b1: Vec<S>,
    w2: Vec<S>,
    b2: S,
}

impl<S: Scalar> BatchGradients<S> {
    fn zeros(config: &AmortizedConfig) -> Self {
        BatchGradients {
            token_rows: BTreeMap::new(),
            label_embed: vec![S::zero(); config.num_classes * config.embed_dim],
            w1: vec![S::zero(); config.head_hidden * config.embed_dim],
            b1: vec![S::zero(); config.head_hidden],
            w2: vec![S::zero(); config.head_hidden],
            b2: S::zero(),
        }
    }

    fn clear(&mut self) {
        self.token_rows.clear();
        self.label_embed.fill(S::zero());
        self.w1.fill(S::zero());
        self.b1.fill(S::zero());
        self.w2.fill(S::zero());
        self.b2 = S::zero();
    }
}

struct Trainer<S: Scalar> {
    model: AmortizedModel<S>,
    adam_token: Adam<S>,
    adam_label: Adam<S>,
    adam_w1: Adam<S>,
    adam_b1: Adam<S>,
    adam_w2: Adam<S>,
    adam_b2: Adam<S>,
    steps: i32,
    lr: S,
}

impl<S: Scalar> Trainer<S> {
    fn new(model: AmortizedModel<S>, lr: f64) -> Self {
        let c = model.config().clone();
        Trainer {
            adam_token: Adam::new(c.hash_buckets * c.embed_dim),
            adam_label: Adam::new(c.num_classes * c.embed_dim),
            adam_w1: Adam::new(c.head_hidden * c.embed_dim),
            adam_b1: Adam::new(c.head_hidden),
            adam_w2: Adam::new(c.head_hidden),
            adam_b2: Adam::new(1),
            steps: 0,
            lr: S::from_f64(lr),
            model,
        }
    }

    /// Accumulates loss and gradients for one record into `grads`;
    /// returns the record's summed squared error.
    fn accumulate(&self, rec: &ReferenceRecord<S>, grads: &mut BatchGradients<S>) -> Result<f64> {
        let config = self.model.config();
        let d = config.embed_dim;
        let h = config.head_hidden;
        let tokens = &rec.sequence.tokens;
        let buckets: Vec<usize> = tokens.iter().map(|t| self.model.bucket(t)).collect();
        let mut e = vec![S::zero(); d];
        let mut z = vec![S::zero(); h];
        let mut de = vec![S::zero(); d];
        let mut sq_err = 0.0;

        for i in 0..tokens.len() {
            self.model.embed_position(&buckets, i, rec.label, &mut e);
            let mut out = self.model.b2;
            for (u, slot) in z.iter_mut().enumerate() {
                let mut acc = self.model.b1[u];
                for (&w, &x) in self.model.w1[u * d..(u + 1) * d].iter().zip(&e) {
                    acc += w * x;
                }
                *slot = acc;
                out += self.model.w2[u] * isru(acc);
            }

            let err = out - rec.scores[i];
            sq_err += err.as_f64() * err.as_f64();
            // d(err²)/d(out); the 1/n_tokens factor is applied at step time.
            let dout = S::from_f64(2.0) * err;

            grads.b2 += dout;
            de.fill(S::zero());
            for (u, &zu) in z.iter().enumerate() {
                let a = isru(zu);
                grads.w2[u] += dout * a;
                let dz = dout * self.model.w2[u] * isru_grad(zu);
                grads.b1[u] += dz;
                for (c, &x) in e.iter().enumerate() {
                    grads.w1[u * d + c] += dz * x;
                    de[c] += dz * self.model.w1[u * d + c];
                }
            }
            for (c, &g) in de.iter().enumerate() {
                grads.label_embed[rec.label * d + c] += g;
            }
            let lo = i.saturating_sub(config.context_radius);
            let hi = (i + config.context_radius).min(tokens.len() - 1);
            let window = S::from_usize(hi - lo + 1);
            for &bucket in &buckets[lo..=hi] {
                let row = grads
                    .token_rows
                    .entry(bucket)
                    .or_insert_with(|| vec![S::zero(); d]);
                for (slot, &g) in row.iter_mut().zip(&de) {
                    *slot += g / window;
                }
            }
        }
        Ok(sq_err)
    }

    /// Applies one Adam step from accumulated gradients over `n_tokens`.
    fn apply(&mut self, grads: &BatchGradients<S>, n_tokens: usize) {
        self.steps += 1;
        let scale = S::one() / S::from_usize(n_tokens);
        let c1 = S::one() - S::from_f64(0.9).powi(self.steps);
        let c2 = S::one() - S::from_f64(0.999).powi(self.steps);
        let lr = self.lr;

        let d = self.model.config().embed_dim;
        for (&bucket, row) in &grads.token_rows {
            for (c, &g) in row.iter().enumerate() {
                let idx = bucket * d + c;
                self.adam_token
                    .step(idx, &mut self.model.token_embed[idx], g * scale, lr, c1, c2);
            }
        }
        for (i, &g) in grads.label_embed.iter().enumerate() {
            self.adam_label
                .step(i, &mut self.model.label_embed[i], g * scale, lr, c1, c2);
        }
        for (i, &g) in grads.w1.iter().enumerate() {
            self.adam_w1
                .step(i, &mut self.model.w1[i], g * scale, lr, c1, c2);
        }
        for (i, &g) in grads.b1.iter().enumerate() {
            self.adam_b1
                .step(i, &mut self.model.b1[i], g * scale, lr, c1, c2);
        }
        for (i, &g) in grads.w2.iter().enumerate() {
            self.adam_w2
                .step(i, &mut self.model.w2[i], g * scale, lr, c1, c2);
        }
        self.adam_b2
            .step(0, &mut self.model.b2, grads.b2 * scale, lr, c1, c2);
    }
}

fn collision_rate<S: Scalar>(model: &AmortizedModel<S>, refs: &[ReferenceRecord<S>]) -> f64 {
    let mut tokens: HashSet<&str> = HashSet::new();
    for rec in refs {
        for t in &rec.sequence.tokens {
            tokens.insert(t);
        }
    }
    if tokens.is_empty() {
        return 0.0;
    }
    let buckets: HashSet<usize> = tokens.iter().map(|t| model.bucket(t)).collect();
    (tokens.len() - buckets.len()) as f64 / tokens.len() as f64
}

/// Trains a surrogate on reference attributions, keeping the parameters
/// of the epoch with the best validation MSE.
pub fn train_amortized<S: Scalar>(
    refs: &[ReferenceRecord<S>],
    config: &TrainConfig,
) -> Result<(AmortizedModel<S>, TrainReport)> {
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(Error::Validation(
            "learning rate must be positive".to_string(),
        ));
    }
    if config.max_epochs == 0 || config.batch_size == 0 {
        return Err(Error::Validation(
            "epochs and batch size must be positive".to_string(),
        ));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "train fraction {} outside (0, 1]",
            config.train_fraction
        )));
    }
    for rec in refs {
        if rec.scores.len() != rec.sequence.len() {
            return Err(Error::Contract(format!(
                "record {}: {} scores for {} tokens",
                rec.sequence.id,
                rec.scores.len(),
                rec.sequence.len()
            )));
        }
        if rec.label >= config.model.num_classes {
            return Err(Error::Contract(format!(
                "record {}: label {} out of range for {} classes",
                rec.sequence.id, rec.label, config.model.num_classes
            )));
        }
    }

    let mut train: Vec<&ReferenceRecord<S>> = Vec::new();
    let mut valid: Vec<&ReferenceRecord<S>> = Vec::new();
    let mut test: Vec<&ReferenceRecord<S>> = Vec::new();
    for rec in refs {
        match split_bucket(&rec.sequence.id) {
            0..=7 => train.push(rec),
            8 => valid.push(rec),
            _ => test.push(rec),
        }
    }
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(Error::Contract(format!(
            "empty split (train={}, valid={}, test={}); more records needed",
            train.len(),
            valid.len(),
            test.len()
        )));
    }

    if config.train_fraction < 1.0 {
        train.sort_by_key(|r| (fraction_key(&r.sequence.id), r.sequence.id.clone()));
        let keep = ((train.len() as f64) * config.train_fraction).ceil() as usize;
        train.truncate(keep.max(1));
    }

    let mut trainer = Trainer::new(
        AmortizedModel::init(config.model.clone())?,
        config.learning_rate,
    );
    let rate = collision_rate(&trainer.model, refs);

    let mut best: Option<(AmortizedModel<S>, usize, f64)> = None;
    let mut selected_epochs = Vec::new();
    let mut train_mse_log = Vec::new();
    let mut valid_mse_log = Vec::new();
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    let mut grads = BatchGradients::zeros(&config.model);

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.sort_by_key(|&i| {
            (
                epoch_key(epoch, &train[i].sequence.id),
                train[i].sequence.id.clone(),
            )
        });

        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            grads.clear();
            let mut tokens = 0usize;
            let mut loss = 0.0;
            for &i in batch {
                loss += trainer.accumulate(train[i], &mut grads)?;
                tokens += train[i].scores.len();
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index} (lr={})",
                    config.learning_rate
                )));
            }
            trainer.apply(&grads, tokens);
        }

        let train_mse = evaluation_mse(&trainer.model, &train)?;
        let valid_mse = evaluation_mse(&trainer.model, &valid)?;
        if !valid_mse.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation MSE after epoch {epoch}"
            )));
        }
        train_mse_log.push(train_mse);
        valid_mse_log.push(valid_mse);
        log::debug!("epoch {epoch}: train mse {train_mse:.6}, valid mse {valid_mse:.6}");

        let improved = best.as_ref().is_none_or(|(_, _, b)| valid_mse < *b);
        if improved {
            best = Some((trainer.model.clone(), epoch, valid_mse));
            selected_epochs.push(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (model, best_epoch, _) = best.expect("at least one epoch ran");
    let test_mse = evaluation_mse(&model, &test)?;
    let test_spearman = test_split_spearman(&model, &test)?;

    let report = TrainReport {
        records: refs.len(),
        train_records: train.len(),
        valid_records: valid.len(),
        test_records: test.len(),
        train_fraction: config.train_fraction,
        collision_rate: rate,
        epochs_run,
        best_epoch,
        selected_epochs,
        train_mse: train_mse_log,
        valid_mse: valid_mse_log,
        test_mse,
        test_spearman,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
    };
    Ok((model, report))
}

/// Mean rank correlation between predictions and references on a split.
pub fn mean_spearman_against_refs<S: Scalar>(
    model: &AmortizedModel<S>,
    records: &[&ReferenceRecord<S>],
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for rec in records {
        if rec.scores.len() < 2 {
            continue;
        }
        let predicted = model.scores(&rec.sequence.tokens, rec.label)?;
        let r = spearman(&predicted, &rec.scores)?;
        if !r.degenerate {
            sum += r.rho.as_f64();
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

fn test_split_spearman<S: Scalar>(
    model: &AmortizedModel<S>,
    test: &[&ReferenceRecord<S>],
) -> Result<Option<f64>> {
    mean_spearman_against_refs(model, test)
}
