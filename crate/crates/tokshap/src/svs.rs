//! Shapley Value Sampling: the permutation Monte-Carlo estimator.
//!
//! Each sample draws an ordering of the positions, walks its prefixes, and
//! credits every token with the value change it causes on arrival:
//!
//! ```text
//! φ_i ≈ (1/m) Σ_j [ v([σ_j]_{<i} ∪ {i}) − v([σ_j]_{<i}) ]
//! ```
//!
//! One walk costs L+1 coalition values, of which ∅ and the full coalition
//! are shared across walks through the cache. The marginals along a single
//! ordering telescope to v(full) − v(∅), so the average satisfies the
//! efficiency identity for every m and seed.
//!
//! Permutation `j` is drawn from its own derived seed stream
//! (`sample_index = j`), so runs with budgets m and m' > m share their
//! first m orderings.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::classifier::ValueCache;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::seed::{derive_seed, rng_from_seed};
use crate::types::{Attribution, Mask, Method, Permutation};

/// Uniform random ordering of `0..len` via Fisher-Yates.
pub fn sample_permutation(len: usize, rng: &mut impl Rng) -> Permutation {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Permutation::from_order_unchecked(order)
}

/// Adds the telescoping marginal sums of `m` sampled orderings into `acc`,
/// in sample order. Shared by the plain estimator and local adaptation so
/// both produce the same floating-point operation sequence.
pub(crate) fn add_permutation_marginals<S: Scalar>(
    values: &ValueCache<'_, S>,
    acc: &mut [S],
    m: u64,
    seed_for: impl Fn(u64) -> u64,
) -> Result<()> {
    let len = values.len();
    for j in 0..m {
        let mut rng = rng_from_seed(seed_for(j));
        let perm = sample_permutation(len, &mut rng);
        let mut mask = Mask::empty(len);
        let mut prev = values.value(&mask)?;
        for &i in perm.order() {
            mask.set(i, true);
            let cur = values.value(&mask)?;
            acc[i] += cur - prev;
            prev = cur;
        }
    }
    Ok(())
}

/// Permutation-sampling estimate with budget `m` under `master_seed`.
pub fn svs<S: Scalar>(
    values: &ValueCache<'_, S>,
    m: u64,
    master_seed: u64,
) -> Result<Attribution<S>> {
    if m == 0 {
        return Err(Error::Contract("svs requires m ≥ 1".to_string()));
    }
    let id = values.instance().id.clone();
    let mut acc = vec![S::zero(); values.len()];
    add_permutation_marginals(values, &mut acc, m, |j| {
        derive_seed(master_seed, &id, Method::Svs, j)
    })?;
    let scale = S::from_f64(m as f64);
    let scores = acc.into_iter().map(|a| a / scale).collect();
    Ok(Attribution {
        instance_id: id,
        label: values.label(),
        scores,
        method: Method::Svs,
        samples: m,
        seed: master_seed,
        value_mode: values.value_mode(),
    })
}
