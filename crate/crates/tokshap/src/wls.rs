//! Efficiency-constrained weighted least squares.
//!
//! Solves the regression at the heart of kernel-based Shapley estimation:
//!
//! ```text
//! min_φ Σ_k w_k (t_k − Σ_{i ∈ s_k} φ_i)²   s.t.   Σ_i φ_i = total
//! ```
//!
//! via the KKT system of the normal equations with a single equality
//! multiplier:
//!
//! ```text
//! [ A + λI   1 ] [ φ ]   [ b     ]
//! [ 1ᵀ       0 ] [ ν ] = [ total ]
//! ```
//!
//! The ridge term λ = 1e-6·trace(A)/n is added only when the Gram matrix
//! A is rank-deficient, which is always the case when fewer distinct masks
//! than positions were sampled; the constraint keeps the answer
//! well-defined either way. Dense LU with partial pivoting is entirely
//! adequate at these sizes (n is a sequence length).

use crate::error::{Error, Result};
use crate::exact::efficiency_tolerance;
use crate::num::Scalar;

/// One aggregated regression row: visible positions, weight, target.
#[derive(Debug, Clone)]
pub struct WlsRow<S: Scalar> {
    pub members: Vec<usize>,
    pub weight: S,
    pub target: S,
}

const RIDGE_SCALE: f64 = 1e-6;

/// Minimizes the weighted squared residuals subject to the sum constraint.
///
/// Fails with a numerical error if the KKT system is singular even after
/// regularization, or if the returned φ violates the constraint.
pub fn solve_efficiency_constrained<S: Scalar>(
    len: usize,
    rows: &[WlsRow<S>],
    total: S,
) -> Result<Vec<S>> {
    if len == 0 {
        return Err(Error::Contract("zero-length system".to_string()));
    }
    for row in rows {
        if row.members.iter().any(|&i| i >= len) {
            return Err(Error::Contract(format!(
                "row references position {} in a length-{len} system",
                row.members.iter().max().unwrap()
            )));
        }
    }

    let mut gram = vec![vec![S::zero(); len]; len];
    let mut rhs = vec![S::zero(); len];
    for row in rows {
        let wt = row.weight * row.target;
        for &i in &row.members {
            rhs[i] += wt;
            for &j in &row.members {
                gram[i][j] += row.weight;
            }
        }
    }

    let rank = lu_rank(&gram);
    if rank < len {
        let trace: S = (0..len).map(|i| gram[i][i]).sum();
        let ridge = S::from_f64(RIDGE_SCALE) * trace / S::from_usize(len);
        for (i, grow) in gram.iter_mut().enumerate() {
            grow[i] += ridge;
        }
    }

    // Bordered system with the multiplier in the last slot.
    let n = len + 1;
    let mut kkt = vec![vec![S::zero(); n]; n];
    let mut b = vec![S::zero(); n];
    for i in 0..len {
        kkt[i][..len].copy_from_slice(&gram[i]);
        kkt[i][len] = S::one();
        kkt[len][i] = S::one();
        b[i] = rhs[i];
    }
    b[len] = total;

    let solution = lu_solve(kkt, b).ok_or_else(|| Error::Numerical {
        detail: format!(
            "singular KKT system after regularization (rows={}, rank={rank}, n={len})",
            rows.len()
        ),
    })?;
    let scores: Vec<S> = solution[..len].to_vec();

    let residual = (scores.iter().copied().sum::<S>() - total).abs();
    if residual > efficiency_tolerance(total) {
        return Err(Error::Numerical {
            detail: format!(
                "constraint residual {residual} exceeds tolerance (rows={}, rank={rank}, n={len})",
                rows.len()
            ),
        });
    }
    Ok(scores)
}

/// Rank of a square matrix by Gaussian elimination with partial pivoting.
pub(crate) fn lu_rank<S: Scalar>(matrix: &[Vec<S>]) -> usize {
    let n = matrix.len();
    let mut a: Vec<Vec<S>> = matrix.to_vec();
    let scale = a
        .iter()
        .flatten()
        .fold(S::zero(), |acc, &v| acc.max(v.abs()));
    if scale == S::zero() {
        return 0;
    }
    let tol = scale * S::epsilon() * S::from_usize(n.max(4));
    let mut rank = 0;
    let mut row = 0;
    for col in 0..n {
        let pivot = (row..n).max_by(|&p, &q| {
            a[p][col]
                .abs()
                .partial_cmp(&a[q][col].abs())
                .expect("finite matrix entries")
        });
        let Some(pivot) = pivot else { break };
        if a[pivot][col].abs() <= tol {
            continue;
        }
        a.swap(row, pivot);
        for r in row + 1..n {
            let factor = a[r][col] / a[row][col];
            // Indexing stays: rows `r` and `row` of `a` are live at once.
            #[allow(clippy::needless_range_loop)]
            for c in col..n {
                let sub = factor * a[row][c];
                a[r][c] -= sub;
            }
        }
        rank += 1;
        row += 1;
        if row == n {
            break;
        }
    }
    rank
}

/// Solves `a·x = b` by LU with partial pivoting; `None` when singular.
pub(crate) fn lu_solve<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let n = a.len();
    debug_assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    let scale = a
        .iter()
        .flatten()
        .fold(S::zero(), |acc, &v| acc.max(v.abs()));
    if scale == S::zero() {
        return None;
    }
    let tol = scale * S::epsilon() * S::from_usize(n.max(4));

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| {
                a[p][col]
                    .abs()
                    .partial_cmp(&a[q][col].abs())
                    .expect("finite matrix entries")
            })
            .expect("nonempty range");
        if a[pivot][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor == S::zero() {
                continue;
            }
            // Indexing stays: rows `r` and `col` of `a` are live at once.
            #[allow(clippy::needless_range_loop)]
            for c in col..n {
                let sub = factor * a[col][c];
                a[r][c] -= sub;
            }
            let sub = factor * b[col];
            b[r] -= sub;
        }
    }

    let mut x = vec![S::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}
