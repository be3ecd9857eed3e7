//! KernelSHAP: Shapley-kernel mask sampling plus an efficiency-constrained
//! least-squares solve.
//!
//! Masks are drawn from the Shapley kernel
//!
//! ```text
//! p(s) ∝ (L−1) / (C(L,|s|) · |s| · (L−|s|)),   1 ≤ |s| ≤ L−1
//! ```
//!
//! in two stages: first the coalition size (the kernel depends on s only
//! through |s|), then a uniform subset of that size. The regression
//! targets are v(s) − v(∅) — a fixed intercept — and the solve enforces
//! Σφ = v(x) − v(∅) exactly (see [`crate::wls`]).
//!
//! Sizes 0 and L carry infinite kernel weight; they are excluded from
//! sampling and represented by the intercept and the constraint instead.

use std::collections::HashMap;

use rand::Rng;

use crate::classifier::ValueCache;
use crate::error::{Error, Result};
use crate::exact::{binomial_row, MAX_EXACT_LENGTH};
use crate::num::Scalar;
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::{Attribution, Mask, Method};
use crate::wls::{solve_efficiency_constrained, WlsRow};

/// Size distribution of the Shapley kernel for a fixed sequence length.
#[derive(Debug, Clone)]
pub struct ShapleyKernel {
    len: usize,
    /// Normalized probability of each coalition size; index 0 ↔ size 1.
    size_probs: Vec<f64>,
    /// C(L, k) for k = 0..=L, exact.
    binomial: Vec<u128>,
}

impl ShapleyKernel {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Contract(format!(
                "the Shapley kernel needs at least 2 positions, got {len}"
            )));
        }
        let raw: Vec<f64> = (1..len)
            .map(|k| (len - 1) as f64 / (k * (len - k)) as f64)
            .collect();
        let norm: f64 = raw.iter().sum();
        Ok(ShapleyKernel {
            len,
            size_probs: raw.iter().map(|w| w / norm).collect(),
            binomial: binomial_row(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// P(|s| = k) for k = 1..L−1, at index k−1.
    pub fn size_probabilities(&self) -> &[f64] {
        &self.size_probs
    }

    /// Normalized probability of one specific mask with `ones` visible
    /// positions: the size probability split uniformly over C(L, k)
    /// subsets.
    pub fn mask_probability(&self, ones: usize) -> Result<f64> {
        if ones == 0 || ones >= self.len {
            return Err(Error::Contract(format!(
                "kernel weight undefined at coalition size {ones} of {}",
                self.len
            )));
        }
        Ok(self.size_probs[ones - 1] / self.binomial[ones] as f64)
    }

    fn sample_size(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.size_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        self.len - 1
    }

    pub fn sample_mask(&self, rng: &mut impl Rng) -> Mask {
        let k = self.sample_size(rng);
        let indices = rand::seq::index::sample(rng, self.len, k).into_vec();
        Mask::from_indices(self.len, &indices).expect("sampled indices in range")
    }
}

/// Draws `m` masks i.i.d. from the kernel.
pub fn sample_kernel_masks(len: usize, m: u64, rng: &mut impl Rng) -> Result<Vec<Mask>> {
    if m == 0 {
        return Err(Error::Contract("mask sampling requires m ≥ 1".to_string()));
    }
    let kernel = ShapleyKernel::new(len)?;
    Ok((0..m).map(|_| kernel.sample_mask(rng)).collect())
}

fn solve_from_masks<S: Scalar>(
    values: &ValueCache<'_, S>,
    rows_in: Vec<(Mask, S)>,
) -> Result<Vec<S>> {
    let mut prefetch: Vec<Mask> = vec![Mask::empty(values.len()), Mask::full(values.len())];
    prefetch.extend(rows_in.iter().map(|(m, _)| m.clone()));
    values.prefetch(&prefetch)?;

    let v_empty = values.value_empty()?;
    let total = values.value_full()? - v_empty;
    let rows: Vec<WlsRow<S>> = rows_in
        .into_iter()
        .map(|(mask, weight)| {
            let target = values.value(&mask)? - v_empty;
            Ok(WlsRow {
                members: mask.indices().collect(),
                weight,
                target,
            })
        })
        .collect::<Result<_>>()?;
    solve_efficiency_constrained(values.len(), &rows, total)
}

/// Sampled KernelSHAP with budget `m` under `master_seed`.
///
/// Duplicate masks are aggregated into multiplicity weights before the
/// solve; the solution is the same, the system smaller. Single-token
/// inputs bypass sampling: the constraint alone pins φ_0.
pub fn kernelshap<S: Scalar>(
    values: &ValueCache<'_, S>,
    m: u64,
    master_seed: u64,
) -> Result<Attribution<S>> {
    if m == 0 {
        return Err(Error::Contract("kernelshap requires m ≥ 1".to_string()));
    }
    let id = values.instance().id.clone();
    let len = values.len();

    let scores = if len == 1 {
        vec![values.value_full()? - values.value_empty()?]
    } else {
        let mut rng = rng_from_seed(derive_seed(master_seed, &id, Method::Ks, 0));
        let masks = sample_kernel_masks(len, m, &mut rng)?;
        // Aggregate duplicates, keeping first-seen order for determinism.
        let mut index: HashMap<Mask, usize> = HashMap::new();
        let mut rows: Vec<(Mask, S)> = Vec::new();
        for mask in masks {
            match index.get(&mask) {
                Some(&i) => rows[i].1 += S::one(),
                None => {
                    index.insert(mask.clone(), rows.len());
                    rows.push((mask, S::one()));
                }
            }
        }
        solve_from_masks(values, rows)?
    };

    Ok(Attribution {
        instance_id: id,
        label: values.label(),
        scores,
        method: Method::Ks,
        samples: m,
        seed: master_seed,
        value_mode: values.value_mode(),
    })
}

/// The population version: regression over all 2^L − 2 proper masks with
/// exact kernel weights. Deterministic; used as a cross-check against the
/// exact oracle.
pub fn kernelshap_enumerated<S: Scalar>(
    values: &ValueCache<'_, S>,
    cap: usize,
) -> Result<Attribution<S>> {
    let len = values.len();
    let cap = cap.min(MAX_EXACT_LENGTH);
    if len > cap {
        return Err(Error::BudgetExceeded { length: len, cap });
    }

    let (scores, samples) = if len == 1 {
        (vec![values.value_full()? - values.value_empty()?], 0u64)
    } else {
        let kernel = ShapleyKernel::new(len)?;
        let total: usize = 1 << len;
        let mut rows: Vec<(Mask, S)> = Vec::with_capacity(total - 2);
        for bits in 1..(total as u64 - 1) {
            let mask = Mask::from_bitset(bits, len);
            let weight = S::from_f64(kernel.mask_probability(mask.ones())?);
            rows.push((mask, weight));
        }
        let count = rows.len() as u64;
        (solve_from_masks(values, rows)?, count)
    };

    Ok(Attribution {
        instance_id: values.instance().id.clone(),
        label: values.label(),
        scores,
        method: Method::Ks,
        samples,
        seed: 0,
        value_mode: values.value_mode(),
    })
}
