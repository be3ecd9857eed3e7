//! Core domain types: token sequences, coalition masks, permutations and
//! attribution results.
//!
//! The unit of explanation is a [`TokenSequence`]. A coalition is a
//! [`Mask`] over its positions: bit `i` set means token `i` is visible to
//! the classifier, cleared means it is replaced by the pad token (see
//! [`apply_mask`]). An estimator returns an [`Attribution`] with one score
//! per position plus enough metadata to reproduce the run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Pad token used for masked positions unless overridden.
pub const DEFAULT_PAD_TOKEN: &str = "[PAD]";

/// A tokenized instance with a stable identifier.
///
/// Sequences produced by [`apply_mask`] may contain the pad token; input
/// sequences handed to estimators must not, which
/// [`TokenSequence::check_no_pad`] enforces at the pipeline boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub id: String,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Validation(format!(
                "instance {id}: empty token list"
            )));
        }
        Ok(TokenSequence { id, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rejects sequences that already contain the pad token, which would
    /// make masked and unmasked positions indistinguishable.
    pub fn check_no_pad(&self, pad: &str) -> Result<()> {
        if let Some(pos) = self.tokens.iter().position(|t| t == pad) {
            return Err(Error::Validation(format!(
                "instance {}: token {pos} equals the pad token {pad:?}",
                self.id
            )));
        }
        Ok(())
    }
}

/// A coalition over sequence positions; `true` = token visible.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask { bits }
    }

    /// The empty coalition: every position masked.
    pub fn empty(len: usize) -> Self {
        Mask {
            bits: vec![false; len],
        }
    }

    /// The full coalition: nothing masked.
    pub fn full(len: usize) -> Self {
        Mask {
            bits: vec![true; len],
        }
    }

    /// Interprets the low `len` bits of `bits` as a mask; bit `i` maps to
    /// position `i`.
    pub fn from_bitset(bits: u64, len: usize) -> Self {
        Mask {
            bits: (0..len).map(|i| bits & (1 << i) != 0).collect(),
        }
    }

    /// Builds a mask of length `len` with exactly the given positions set.
    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(Error::Contract(format!(
                    "mask index {i} out of range for length {len}"
                )));
            }
            bits[i] = true;
        }
        Ok(Mask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, visible: bool) {
        self.bits[i] = visible;
    }

    /// Coalition size |s|.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    /// Indices of visible positions, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Replaces every masked position of `x` with the pad token.
///
/// The result keeps the instance id: it denotes "x under coalition s", not
/// a new instance.
pub fn apply_mask(x: &TokenSequence, mask: &Mask, pad: &str) -> Result<TokenSequence> {
    if mask.len() != x.len() {
        return Err(Error::Contract(format!(
            "mask length {} does not match sequence length {} (instance {})",
            mask.len(),
            x.len(),
            x.id
        )));
    }
    let tokens = x
        .tokens
        .iter()
        .zip(mask.iter())
        .map(|(t, keep)| if keep { t.clone() } else { pad.to_string() })
        .collect();
    Ok(TokenSequence {
        id: x.id.clone(),
        tokens,
    })
}

/// An ordering of `0..len`, used by permutation-based estimators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    /// Validates that `order` is a bijection on `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(Error::Contract(format!(
                    "not a permutation of 0..{}: {order:?}",
                    order.len()
                )));
            }
            seen[i] = true;
        }
        Ok(Permutation { order })
    }

    pub fn identity(len: usize) -> Self {
        Permutation {
            order: (0..len).collect(),
        }
    }

    pub(crate) fn from_order_unchecked(order: Vec<usize>) -> Self {
        Permutation { order }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Attribution method identifiers, also used as wire/file tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Svs,
    Ks,
    Amortized,
    Adapt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Svs => "svs",
            Method::Ks => "ks",
            Method::Amortized => "amortized",
            Method::Adapt => "adapt",
        }
    }

    /// Stable byte used in seed derivation. Never reorder.
    pub(crate) fn seed_tag(self) -> u8 {
        match self {
            Method::Exact => 0,
            Method::Svs => 1,
            Method::Ks => 2,
            Method::Amortized => 3,
            Method::Adapt => 4,
        }
    }

    /// True when the method draws random samples and therefore consumes a
    /// seed and a budget.
    pub fn is_sampled(self) -> bool {
        matches!(self, Method::Svs | Method::Ks | Method::Adapt)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "svs" => Ok(Method::Svs),
            "ks" => Ok(Method::Ks),
            "amortized" => Ok(Method::Amortized),
            "adapt" => Ok(Method::Adapt),
            other => Err(Error::Validation(format!("unknown method {other:?}"))),
        }
    }
}

/// What the classifier's output vector means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Vectors are probability distributions over classes.
    Probability,
    /// Vectors are unnormalized real scores.
    RawScore,
}

impl ValueMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueMode::Probability => "probability",
            ValueMode::RawScore => "raw_score",
        }
    }
}

impl fmt::Display for ValueMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" | "prob" => Ok(ValueMode::Probability),
            "raw_score" | "raw" => Ok(ValueMode::RawScore),
            other => Err(Error::Validation(format!("unknown value mode {other:?}"))),
        }
    }
}

/// Per-token attribution scores for one instance and one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution<S: Scalar> {
    pub instance_id: String,
    /// Class index the scores explain.
    pub label: usize,
    /// One score per token position.
    pub scores: Vec<S>,
    pub method: Method,
    /// Sampling budget; 0 for deterministic methods.
    pub samples: u64,
    /// Master seed of the run; 0 for deterministic methods.
    pub seed: u64,
    pub value_mode: ValueMode,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::new("t0", tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    #[test]
    fn empty_sequences_are_rejected() {
        assert!(TokenSequence::new("t0", vec![]).is_err());
    }

    #[test]
    fn pad_collision_is_reported_with_position() {
        let x = seq(&["a", "[PAD]", "b"]);
        let err = x.check_no_pad(DEFAULT_PAD_TOKEN).unwrap_err();
        assert!(err.to_string().contains("token 1"));
    }

    #[test]
    fn apply_mask_replaces_exactly_the_masked_positions() {
        let x = seq(&["the", "movie", "was", "great"]);
        let mask = Mask::from_indices(4, &[0, 3]).unwrap();
        let masked = apply_mask(&x, &mask, "[PAD]").unwrap();
        assert_eq!(masked.tokens, ["the", "[PAD]", "[PAD]", "great"]);
        assert_eq!(masked.id, x.id);
    }

    #[test]
    fn apply_mask_rejects_length_mismatch() {
        let x = seq(&["a", "b"]);
        let mask = Mask::empty(3);
        assert!(apply_mask(&x, &mask, "[PAD]").is_err());
    }

    #[test]
    fn mask_from_indices_handles_empty_and_bounds() {
        let m = Mask::from_indices(3, &[]).unwrap();
        assert_eq!(m.ones(), 0);
        assert!(Mask::from_indices(3, &[3]).is_err());
        let m = Mask::from_indices(3, &[2, 0, 2]).unwrap();
        assert_eq!(m.indices().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![2, 0, 1]).is_ok());
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert_eq!(Permutation::identity(3).order(), &[0, 1, 2]);
    }

    #[test]
    fn method_round_trips_through_str_and_json() {
        for m in [
            Method::Exact,
            Method::Svs,
            Method::Ks,
            Method::Amortized,
            Method::Adapt,
        ] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
    }
}
