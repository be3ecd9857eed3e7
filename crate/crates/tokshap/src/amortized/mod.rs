//! Amortized explainer: a trained surrogate that predicts per-token
//! attribution scores in a single pass, with zero classifier evaluations
//! at inference time.
//!
//! Architecture, per token:
//!
//! ```text
//! e_i = mean of token embeddings in a window around i  +  label embedding
//! score_i = w2 · isru(W1 e_i + b1) + b2
//! ```
//!
//! Tokens are mapped into a fixed number of embedding buckets by a salted
//! FNV-1a hash: unseen tokens degrade via collisions instead of erroring.
//! The nonlinearity is the inverse square root unit x/√(1+x²); unlike
//! tanh it involves only arithmetic and a correctly-rounded square root,
//! so checkpointed inference is bit-stable across platforms.
//!
//! The window radius is 0 by default, making the head purely per-token.

mod adapt;
mod refs;
mod train;

pub use adapt::{local_adapt, AdaptNormalization};
pub use refs::{build_reference_dataset, RefSkip, ReferenceMethod};
pub use train::{
    evaluation_mse, mean_spearman_against_refs, train_amortized, TrainConfig, TrainReport,
};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::{mix_seed, rng_from_seed};
use crate::types::{Attribution, Method, TokenSequence};

/// Shape and identity of an amortized model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmortizedConfig {
    /// Vocabulary hash buckets V.
    pub hash_buckets: usize,
    /// Token/label embedding width d.
    pub embed_dim: usize,
    /// Hidden width of the scoring head.
    pub head_hidden: usize,
    /// Context window radius r; 0 scores each token from its own embedding.
    pub context_radius: usize,
    pub num_classes: usize,
    pub hash_salt: u64,
    pub param_seed: u64,
}

impl Default for AmortizedConfig {
    fn default() -> Self {
        AmortizedConfig {
            hash_buckets: 1 << 16,
            embed_dim: 64,
            head_hidden: 32,
            context_radius: 0,
            num_classes: 2,
            hash_salt: 0,
            param_seed: 0,
        }
    }
}

impl AmortizedConfig {
    fn validate(&self) -> Result<()> {
        if self.hash_buckets == 0
            || self.embed_dim == 0
            || self.head_hidden == 0
            || self.num_classes == 0
        {
            return Err(Error::Validation(
                "model dimensions must all be positive".to_string(),
            ));
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(salt: u64, bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in salt.to_le_bytes().iter().chain(bytes) {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// The surrogate model. Inference is a pure function of
/// (parameters, token identities, label).
#[derive(Debug, Clone, PartialEq)]
pub struct AmortizedModel<S: Scalar> {
    config: AmortizedConfig,
    /// V×d, row-major by bucket.
    token_embed: Vec<S>,
    /// C×d, row-major by class.
    label_embed: Vec<S>,
    /// h×d, row-major by hidden unit.
    w1: Vec<S>,
    b1: Vec<S>,
    w2: Vec<S>,
    b2: S,
}

fn isru<S: Scalar>(z: S) -> S {
    z / (S::one() + z * z).sqrt()
}

/// d isru(z) / dz = (1+z²)^(−3/2).
fn isru_grad<S: Scalar>(z: S) -> S {
    let base = S::one() + z * z;
    S::one() / (base * base.sqrt())
}

impl<S: Scalar> AmortizedModel<S> {
    /// Fresh model with seeded uniform initialization.
    pub fn init(config: AmortizedConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(mix_seed(config.param_seed, &[b"amortized-init"], 0));
        let mut uniform = |bound: f64| {
            let u: f64 = rand::Rng::random(&mut rng);
            S::from_f64((2.0 * u - 1.0) * bound)
        };
        let (v, d, h, c) = (
            config.hash_buckets,
            config.embed_dim,
            config.head_hidden,
            config.num_classes,
        );
        let embed_bound = 0.05;
        let w1_bound = (6.0 / (d + h) as f64).sqrt();
        let w2_bound = (6.0 / (h + 1) as f64).sqrt();
        let token_embed = (0..v * d).map(|_| uniform(embed_bound)).collect();
        let label_embed = (0..c * d).map(|_| uniform(embed_bound)).collect();
        let w1 = (0..h * d).map(|_| uniform(w1_bound)).collect();
        let w2 = (0..h).map(|_| uniform(w2_bound)).collect();
        Ok(AmortizedModel {
            config,
            token_embed,
            label_embed,
            w1,
            b1: vec![S::zero(); h],
            w2,
            b2: S::zero(),
        })
    }

    /// Model with every parameter zero; scores 0 for any input. Useful as
    /// a neutral prior when adaptation should reduce to plain sampling.
    pub fn zeroed(config: AmortizedConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, h, c) = (
            config.hash_buckets,
            config.embed_dim,
            config.head_hidden,
            config.num_classes,
        );
        Ok(AmortizedModel {
            config,
            token_embed: vec![S::zero(); v * d],
            label_embed: vec![S::zero(); c * d],
            w1: vec![S::zero(); h * d],
            b1: vec![S::zero(); h],
            w2: vec![S::zero(); h],
            b2: S::zero(),
        })
    }

    pub fn config(&self) -> &AmortizedConfig {
        &self.config
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(self.config.hash_salt, token.as_bytes()) % self.config.hash_buckets as u64)
            as usize
    }

    /// Mean window embedding plus the label embedding, written into `e`.
    fn embed_position(&self, buckets: &[usize], i: usize, label: usize, e: &mut [S]) {
        let d = self.config.embed_dim;
        let lo = i.saturating_sub(self.config.context_radius);
        let hi = (i + self.config.context_radius).min(buckets.len() - 1);
        e.fill(S::zero());
        for &bucket in &buckets[lo..=hi] {
            let row = &self.token_embed[bucket * d..(bucket + 1) * d];
            for (acc, w) in e.iter_mut().zip(row) {
                *acc += *w;
            }
        }
        let scale = S::one() / S::from_usize(hi - lo + 1);
        for acc in e.iter_mut() {
            *acc *= scale;
        }
        let row = &self.label_embed[label * d..(label + 1) * d];
        for (acc, w) in e.iter_mut().zip(row) {
            *acc += *w;
        }
    }

    fn head(&self, e: &[S]) -> S {
        let d = self.config.embed_dim;
        let mut out = self.b2;
        for (u, (&w2, &b1)) in self.w2.iter().zip(&self.b1).enumerate() {
            let mut z = b1;
            for (&w, &x) in self.w1[u * d..(u + 1) * d].iter().zip(e) {
                z += w * x;
            }
            out += w2 * isru(z);
        }
        out
    }

    /// Predicted attribution scores, one per token.
    pub fn scores(&self, tokens: &[String], label: usize) -> Result<Vec<S>> {
        if label >= self.config.num_classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                self.config.num_classes
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Contract("empty token list".to_string()));
        }
        let buckets: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        let mut e = vec![S::zero(); self.config.embed_dim];
        let mut out = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            self.embed_position(&buckets, i, label, &mut e);
            out.push(self.head(&e));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }

    fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let header = serde_json::to_vec(&self.config).expect("config serializes");
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        for tensor in [
            &self.token_embed,
            &self.label_embed,
            &self.w1,
            &self.b1,
            &self.w2,
        ] {
            for x in tensor.iter() {
                w.write_f64::<LittleEndian>(x.as_f64())?;
            }
        }
        w.write_f64::<LittleEndian>(self.b2.as_f64())?;
        w.flush()
    }

    fn read_from(mut r: impl Read, path: &str) -> Result<Self> {
        let io_err = |e: std::io::Error| Error::io(path.to_string(), e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Validation(format!(
                "{path}: not an amortized model checkpoint"
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "{path}: unsupported checkpoint version {version}"
            )));
        }
        let header_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(io_err)?;
        let config: AmortizedConfig =
            serde_json::from_slice(&header).map_err(|e| Error::json(path.to_string(), 1, e))?;
        config.validate()?;
        let mut tensor = |n: usize| -> Result<Vec<S>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(S::from_f64(r.read_f64::<LittleEndian>().map_err(io_err)?));
            }
            Ok(out)
        };
        let (v, d, h, c) = (
            config.hash_buckets,
            config.embed_dim,
            config.head_hidden,
            config.num_classes,
        );
        let token_embed = tensor(v * d)?;
        let label_embed = tensor(c * d)?;
        let w1 = tensor(h * d)?;
        let b1 = tensor(h)?;
        let w2 = tensor(h)?;
        let b2 = tensor(1)?[0];
        Ok(AmortizedModel {
            config,
            token_embed,
            label_embed,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TKAM";
const CHECKPOINT_VERSION: u32 = 1;

/// One-pass surrogate prediction; no classifier evaluations. The value
/// mode is metadata only: it records what the surrogate's references
/// explained.
pub fn predict_amortized<S: Scalar>(
    model: &AmortizedModel<S>,
    x: &TokenSequence,
    label: usize,
    value_mode: crate::types::ValueMode,
) -> Result<Attribution<S>> {
    Ok(Attribution {
        instance_id: x.id.clone(),
        label,
        scores: model.scores(&x.tokens, label)?,
        method: Method::Amortized,
        samples: 0,
        seed: 0,
        value_mode,
    })
}

/// A reference attribution used as a training target.
#[derive(Debug, Clone)]
pub struct ReferenceRecord<S: Scalar> {
    pub sequence: TokenSequence,
    /// Predicted label the reference scores explain.
    pub label: usize,
    pub scores: Vec<S>,
    pub provenance: Provenance,
}

/// How a reference score vector was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub m: u64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ValueMode;
    use tempfile::tempdir;

    fn toy_model() -> AmortizedModel<f64> {
        AmortizedModel::init(AmortizedConfig {
            hash_buckets: 128,
            embed_dim: 8,
            head_hidden: 4,
            ..AmortizedConfig::default()
        })
        .unwrap()
    }

    fn tokens(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn inference_is_bit_stable() {
        let model = toy_model();
        let xs = tokens(&["alpha", "beta", "gamma"]);
        let a = model.scores(&xs, 0).unwrap();
        let b = model.scores(&xs, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn scores_depend_on_the_label() {
        let model = toy_model();
        let xs = tokens(&["alpha", "beta"]);
        let c0 = model.scores(&xs, 0).unwrap();
        let c1 = model.scores(&xs, 1).unwrap();
        assert_ne!(c0, c1);
    }

    #[test]
    fn equal_tokens_get_equal_scores_at_radius_zero() {
        let model = toy_model();
        let xs = tokens(&["same", "other", "same"]);
        let s = model.scores(&xs, 1).unwrap();
        assert_eq!(s[0], s[2]);
    }

    #[test]
    fn permuting_tokens_permutes_scores() {
        let model = toy_model();
        let fwd = model.scores(&tokens(&["a", "b", "c"]), 0).unwrap();
        let rev = model.scores(&tokens(&["c", "b", "a"]), 0).unwrap();
        assert_eq!(fwd[0], rev[2]);
        assert_eq!(fwd[1], rev[1]);
        assert_eq!(fwd[2], rev[0]);
    }

    #[test]
    fn context_radius_mixes_neighbors() {
        let model: AmortizedModel<f64> = AmortizedModel::init(AmortizedConfig {
            hash_buckets: 128,
            embed_dim: 8,
            head_hidden: 4,
            context_radius: 1,
            ..AmortizedConfig::default()
        })
        .unwrap();
        let s1 = model.scores(&tokens(&["same", "x", "same"]), 0).unwrap();
        // With radius 1 position 0 sees {same, x} and position 2 sees
        // {x, same}: the mean makes them equal anyway.
        assert_eq!(s1[0], s1[2]);
        let s2 = model.scores(&tokens(&["same", "y", "same"]), 0).unwrap();
        assert_ne!(s1[0], s2[0]);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let model = toy_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let back: AmortizedModel<f64> = AmortizedModel::load(&path).unwrap();
        assert_eq!(back, model);
        let xs = tokens(&["alpha", "beta", "zeta"]);
        assert_eq!(back.scores(&xs, 1).unwrap(), model.scores(&xs, 1).unwrap());
    }

    #[test]
    fn checkpoint_rejects_foreign_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("not-a-model");
        std::fs::write(&path, b"plain text").unwrap();
        assert!(AmortizedModel::<f64>::load(&path).is_err());
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let config = AmortizedConfig {
            hash_buckets: 64,
            embed_dim: 4,
            head_hidden: 3,
            ..AmortizedConfig::default()
        };
        let a: AmortizedModel<f64> = AmortizedModel::init(config.clone()).unwrap();
        let b: AmortizedModel<f64> = AmortizedModel::init(config.clone()).unwrap();
        assert_eq!(a, b);
        let c: AmortizedModel<f64> = AmortizedModel::init(AmortizedConfig {
            param_seed: 1,
            ..config
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn predict_amortized_tags_the_attribution() {
        let model = toy_model();
        let x = TokenSequence::new("a0", tokens(&["p", "q"])).unwrap();
        let attr = predict_amortized(&model, &x, 1, ValueMode::Probability).unwrap();
        assert_eq!(attr.method, Method::Amortized);
        assert_eq!(attr.samples, 0);
        assert_eq!(attr.value_mode, ValueMode::Probability);
        assert_eq!(attr.scores.len(), 2);
    }
}
