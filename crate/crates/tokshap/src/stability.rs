//! Cross-seed stability metrics: rank correlation, top-K overlap, MSE.
//!
//! An estimator is run once per seed per instance; every unordered pair
//! of seed runs is compared. Spearman pairs where either score vector has
//! constant ranks are flagged degenerate and excluded from correlation
//! averages instead of being counted as zero.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::types::{Attribution, TokenSequence};

/// Fractional (average-tie) ranks, 1-based: ties share the mean of the
/// positions they occupy.
pub fn fractional_ranks<S: Scalar>(values: &[S]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end (0-based) hold one tie group.
        let mean_rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// True when either rank vector is constant, making ρ undefined.
    pub degenerate: bool,
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman<S: Scalar>(a: &[S], b: &[S]) -> Result<SpearmanResult> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "spearman on lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract(
            "spearman requires at least two positions".to_string(),
        ));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(SpearmanResult {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(SpearmanResult {
        rho: cov / (var_a * var_b).sqrt(),
        degenerate: false,
    })
}

/// Indices of the `k` largest scores; boundary ties resolve to the lower
/// token index. Returned in selection order (best first).
pub fn top_indices<S: Scalar>(scores: &[S], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    order.truncate(k);
    order
}

/// |top-K(a) ∩ top-K(b)|.
pub fn topk_intersection<S: Scalar>(a: &[S], b: &[S], k: usize) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "top-K on lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if k > a.len() {
        return Err(Error::Contract(format!(
            "K = {k} exceeds length {}",
            a.len()
        )));
    }
    let ta = top_indices(a, k);
    let tb: std::collections::HashSet<usize> = top_indices(b, k).into_iter().collect();
    Ok(ta.iter().filter(|i| tb.contains(i)).count())
}

/// Mean squared elementwise difference.
pub fn pairwise_mse<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "mse on lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract("mse on empty vectors".to_string()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

#[derive(Debug, Clone)]
pub struct StabilityConfig {
    /// Label for the estimator under test, echoed in the report.
    pub method_label: String,
    /// Master seeds, one per run; must be distinct and at least two.
    pub seeds: Vec<u64>,
    /// Top-K sizes to evaluate. Ks larger than an instance are skipped
    /// for that instance.
    pub ks: Vec<usize>,
    /// Ascending inclusive upper bounds of length buckets; instances
    /// beyond the last go to an overflow bucket.
    pub bucket_bounds: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceStability {
    pub instance_id: String,
    pub length: usize,
    /// Mean pairwise ρ over non-degenerate pairs; None if every pair was
    /// degenerate.
    pub spearman: Option<f64>,
    pub degenerate_pairs: usize,
    /// K → mean pairwise intersection count, only for K ≤ length.
    pub topk: BTreeMap<usize, f64>,
    pub mse: f64,
    pub seconds_per_run: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub instance_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketStability {
    pub label: String,
    pub instances: usize,
    pub spearman: Option<f64>,
    pub topk: BTreeMap<usize, f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    /// Number of unordered seed pairs each instance was scored over.
    pub pairs: usize,
    pub instances: Vec<InstanceStability>,
    pub failures: Vec<SweepFailure>,
    pub mean_spearman: Option<f64>,
    pub mean_topk: BTreeMap<usize, f64>,
    pub mean_mse: f64,
    pub buckets: Vec<BucketStability>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn bucket_label(bounds: &[usize], len: usize) -> String {
    for &b in bounds {
        if len <= b {
            return format!("<={b}");
        }
    }
    format!(">{}", bounds.last().expect("non-empty bounds"))
}

fn aggregate_bucket(label: String, members: &[&InstanceStability]) -> BucketStability {
    let mut topk = BTreeMap::new();
    let ks: std::collections::BTreeSet<usize> = members
        .iter()
        .flat_map(|i| i.topk.keys().copied())
        .collect();
    for k in ks {
        if let Some(m) = mean(members.iter().filter_map(|i| i.topk.get(&k).copied())) {
            topk.insert(k, m);
        }
    }
    BucketStability {
        label,
        instances: members.len(),
        spearman: mean(members.iter().filter_map(|i| i.spearman)),
        topk,
        mse: mean(members.iter().map(|i| i.mse)).unwrap_or(0.0),
    }
}

/// Runs `run(instance, seed)` for every instance and seed, then compares
/// all seed pairs. Instances fan out across threads; the report lists
/// them in input order.
pub fn stability_sweep<S, F>(
    instances: &[TokenSequence],
    config: &StabilityConfig,
    run: F,
) -> Result<StabilityReport>
where
    S: Scalar,
    F: Fn(&TokenSequence, u64) -> Result<Attribution<S>> + Sync,
{
    if config.seeds.len() < 2 {
        return Err(Error::Contract(
            "stability requires at least two seeds".to_string(),
        ));
    }
    {
        let distinct: std::collections::HashSet<u64> = config.seeds.iter().copied().collect();
        if distinct.len() != config.seeds.len() {
            return Err(Error::Validation("duplicate seeds in sweep".to_string()));
        }
    }
    if config.bucket_bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(
            "bucket bounds must be strictly ascending".to_string(),
        ));
    }

    let outcomes: Vec<std::result::Result<InstanceStability, SweepFailure>> = instances
        .par_iter()
        .map(|x| {
            score_instance(x, config, &run).map_err(|err| {
                log::warn!("stability: skipping instance {}: {err}", x.id);
                SweepFailure {
                    instance_id: x.id.clone(),
                    detail: err.to_string(),
                }
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }

    let r = config.seeds.len();
    let mut mean_topk = BTreeMap::new();
    for &k in &config.ks {
        if let Some(m) = mean(rows.iter().filter_map(|i| i.topk.get(&k).copied())) {
            mean_topk.insert(k, m);
        }
    }
    let mut buckets = Vec::new();
    if !config.bucket_bounds.is_empty() {
        let mut labels: Vec<String> = config
            .bucket_bounds
            .iter()
            .map(|b| format!("<={b}"))
            .collect();
        labels.push(format!(">{}", config.bucket_bounds.last().unwrap()));
        for label in labels {
            let members: Vec<&InstanceStability> = rows
                .iter()
                .filter(|i| bucket_label(&config.bucket_bounds, i.length) == label)
                .collect();
            if !members.is_empty() {
                buckets.push(aggregate_bucket(label, &members));
            }
        }
    }

    Ok(StabilityReport {
        method: config.method_label.clone(),
        seeds: config.seeds.clone(),
        ks: config.ks.clone(),
        pairs: r * (r - 1) / 2,
        mean_spearman: mean(rows.iter().filter_map(|i| i.spearman)),
        mean_topk,
        mean_mse: mean(rows.iter().map(|i| i.mse)).unwrap_or(0.0),
        buckets,
        instances: rows,
        failures,
    })
}

fn score_instance<S, F>(
    x: &TokenSequence,
    config: &StabilityConfig,
    run: &F,
) -> Result<InstanceStability>
where
    S: Scalar,
    F: Fn(&TokenSequence, u64) -> Result<Attribution<S>> + Sync,
{
    let started = Instant::now();
    let mut runs: Vec<Vec<S>> = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let att = run(x, seed)?;
        if att.scores.len() != x.len() {
            return Err(Error::Contract(format!(
                "estimator returned {} scores for {} tokens",
                att.scores.len(),
                x.len()
            )));
        }
        runs.push(att.scores);
    }
    let elapsed = started.elapsed().as_secs_f64();

    let mut rho_sum = 0.0;
    let mut rho_n = 0usize;
    let mut degenerate_pairs = 0usize;
    let mut mse_sum = 0.0;
    let mut pair_count = 0usize;
    let mut topk_sums: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            pair_count += 1;
            if x.len() >= 2 {
                let s = spearman(&runs[i], &runs[j])?;
                if s.degenerate {
                    degenerate_pairs += 1;
                } else {
                    rho_sum += s.rho;
                    rho_n += 1;
                }
            } else {
                degenerate_pairs += 1;
            }
            mse_sum += pairwise_mse(&runs[i], &runs[j])?;
            for &k in &config.ks {
                if k <= x.len() {
                    let c = topk_intersection(&runs[i], &runs[j], k)? as f64;
                    *topk_sums.entry(k).or_insert(0.0) += c;
                }
            }
        }
    }

    Ok(InstanceStability {
        instance_id: x.id.clone(),
        length: x.len(),
        spearman: (rho_n > 0).then(|| rho_sum / rho_n as f64),
        degenerate_pairs,
        topk: topk_sums
            .into_iter()
            .map(|(k, s)| (k, s / pair_count as f64))
            .collect(),
        mse: mse_sum / pair_count as f64,
        seconds_per_run: elapsed / config.seeds.len() as f64,
    })
}

impl StabilityReport {
    /// Per-instance rows as CSV, one column per requested K.
    pub fn per_instance_csv(&self) -> String {
        let mut out = String::from("instance_id,length,spearman,degenerate_pairs,mse");
        for k in &self.ks {
            out.push_str(&format!(",topk_{k}"));
        }
        out.push_str(",seconds_per_run\n");
        for row in &self.instances {
            out.push_str(&format!(
                "{},{},{},{},{}",
                row.instance_id,
                row.length,
                row.spearman.map_or(String::new(), |v| format!("{v}")),
                row.degenerate_pairs,
                row.mse
            ));
            for k in &self.ks {
                match row.topk.get(k) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push_str(&format!(",{}\n", row.seconds_per_run));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::builtin::AdditiveClassifier;
    use crate::classifier::{predicted_label, ValueCache};
    use crate::exact::exact_shapley;
    use crate::svs::svs;
    use crate::types::{ValueMode, DEFAULT_PAD_TOKEN};
    use std::collections::HashMap;

    #[test]
    fn spearman_matches_hand_computed_examples() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(spearman(&a, &a).unwrap().rho, 1.0);
        let reversed = [0.3, 0.2, 0.1];
        assert_eq!(spearman(&a, &reversed).unwrap().rho, -1.0);
        // Ranks (1,2,3) against (1,3,2): 1 − 6·2/(3·8) = 0.5.
        let b = [10.0, 30.0, 20.0];
        assert!((spearman(&a, &b).unwrap().rho - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_vectors_are_degenerate_not_zero_correlated() {
        let a = [1.0, 1.0, 1.0];
        let b = [0.5, 0.2, 0.9];
        let r = spearman(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.rho, 0.0);
    }

    #[test]
    fn spearman_is_invariant_under_monotone_transforms() {
        let mut rng = crate::seed::rng_from_seed(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..7)
                .map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5)
                .collect();
            let b: Vec<f64> = (0..7)
                .map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5)
                .collect();
            let direct = spearman(&a, &b).unwrap().rho;
            let warped: Vec<f64> = a.iter().map(|v| v.exp()).collect();
            let transformed = spearman(&warped, &b).unwrap().rho;
            assert!((direct - transformed).abs() < 1e-12);
            let swapped = spearman(&b, &a).unwrap().rho;
            assert!((direct - swapped).abs() < 1e-12);
        }
    }

    #[test]
    fn tied_values_share_fractional_ranks() {
        assert_eq!(fractional_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(
            fractional_ranks(&[2.0, 1.0, 1.0, 1.0]),
            vec![4.0, 2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn spearman_length_contracts() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            Error::Contract(_)
        ));
        assert!(matches!(
            spearman(&[1.0], &[1.0]).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn topk_counts_shared_indices() {
        let a = [0.9, 0.1, 0.8, 0.2, 0.7];
        assert_eq!(topk_intersection(&a, &a, 3).unwrap(), 3);
        let disjoint = [0.0, 0.9, 0.0, 0.8, 0.1];
        assert_eq!(topk_intersection(&a, &disjoint, 2).unwrap(), 0);
        // Constructed 5-wide vectors sharing exactly 3 of their top 5.
        let p = [9.0, 8.0, 7.0, 6.0, 5.0, 0.0, 0.0, 0.0];
        let q = [9.0, 8.0, 7.0, 0.0, 0.0, 6.0, 5.0, 0.0];
        assert_eq!(topk_intersection(&p, &q, 5).unwrap(), 3);
    }

    #[test]
    fn topk_boundary_ties_pick_lower_indices() {
        let tied = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(top_indices(&tied, 2), vec![0, 1]);
        let other = [1.0, 0.5, 1.0, 1.0];
        // Both pick {0, ...}: tied picks 0,1; other picks 0,2.
        assert_eq!(topk_intersection(&tied, &other, 2).unwrap(), 1);
    }

    #[test]
    fn topk_beyond_length_is_a_contract_violation() {
        assert!(matches!(
            topk_intersection(&[1.0, 2.0], &[1.0, 2.0], 3).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn mse_matches_direct_computation() {
        assert_eq!(pairwise_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pairwise_mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(pairwise_mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
    }

    fn toy_instances(n: usize, len: usize) -> (AdditiveClassifier<f64>, Vec<TokenSequence>) {
        let vocab: Vec<String> = (0..30).map(|i| format!("w{i:02}")).collect();
        let weights: HashMap<String, f64> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (i as f64 - 15.0) / 15.0))
            .collect();
        let clf = AdditiveClassifier::new(weights, 0.05, ValueMode::Probability);
        let instances = (0..n)
            .map(|i| {
                let toks = (0..len)
                    .map(|j| vocab[(i * 11 + j * 7) % 30].clone())
                    .collect();
                TokenSequence::new(format!("s{i:03}"), toks).unwrap()
            })
            .collect();
        (clf, instances)
    }

    fn svs_runner<'c>(
        clf: &'c AdditiveClassifier<f64>,
        m: u64,
    ) -> impl Fn(&TokenSequence, u64) -> Result<Attribution<f64>> + Sync + 'c {
        move |x, seed| {
            let label = predicted_label(clf, x)?;
            let values = ValueCache::new(clf, x, label, DEFAULT_PAD_TOKEN)?;
            svs(&values, m, seed)
        }
    }

    fn sweep_config(ks: Vec<usize>) -> StabilityConfig {
        StabilityConfig {
            method_label: "test".to_string(),
            seeds: vec![11, 22, 33, 44],
            ks,
            bucket_bounds: vec![],
        }
    }

    #[test]
    fn deterministic_estimators_are_perfectly_stable() {
        let (clf, instances) = toy_instances(12, 5);
        let run = |x: &TokenSequence, _seed: u64| {
            let label = predicted_label(&clf, x)?;
            let values = ValueCache::new(&clf, x, label, DEFAULT_PAD_TOKEN)?;
            exact_shapley(&values, 15)
        };
        let report = stability_sweep(&instances, &sweep_config(vec![3]), run).unwrap();
        assert_eq!(report.pairs, 6);
        assert_eq!(report.failures.len(), 0);
        assert_eq!(report.mean_spearman, Some(1.0));
        assert_eq!(report.mean_topk[&3], 3.0);
        assert_eq!(report.mean_mse, 0.0);
        assert_eq!(report.instances.len(), 12);
    }

    #[test]
    fn more_samples_mean_more_stable_rankings() {
        let (clf, instances) = toy_instances(40, 8);
        let rough = stability_sweep(&instances, &sweep_config(vec![]), svs_runner(&clf, 3))
            .unwrap()
            .mean_spearman
            .unwrap();
        let fine = stability_sweep(&instances, &sweep_config(vec![]), svs_runner(&clf, 200))
            .unwrap()
            .mean_spearman
            .unwrap();
        assert!(fine > rough, "fine {fine} vs rough {rough}");
        assert!(fine > 0.9);
    }

    #[test]
    fn failures_are_recorded_and_excluded() {
        let (clf, instances) = toy_instances(6, 4);
        let run = |x: &TokenSequence, seed: u64| {
            if x.id == "s003" {
                return Err(Error::Numerical {
                    detail: "boom".to_string(),
                });
            }
            svs_runner(&clf, 4)(x, seed)
        };
        let report = stability_sweep(&instances, &sweep_config(vec![2]), run).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].instance_id, "s003");
        assert_eq!(report.instances.len(), 5);
        assert!(report.instances.iter().all(|i| i.instance_id != "s003"));
    }

    #[test]
    fn buckets_split_by_length_in_order() {
        let (clf, mut instances) = toy_instances(6, 4);
        let (_, longer) = toy_instances(6, 9);
        instances.extend(longer.into_iter().map(|mut x| {
            x.id = format!("long-{}", x.id);
            x
        }));
        let mut config = sweep_config(vec![2]);
        config.bucket_bounds = vec![4, 8];
        let report = stability_sweep(&instances, &config, svs_runner(&clf, 6)).unwrap();
        let labels: Vec<&str> = report.buckets.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["<=4", ">8"]);
        assert_eq!(report.buckets[0].instances, 6);
        assert_eq!(report.buckets[1].instances, 6);
    }

    #[test]
    fn ks_larger_than_an_instance_are_skipped_for_it() {
        let (clf, mut instances) = toy_instances(3, 4);
        let (_, longer) = toy_instances(3, 12);
        instances.extend(longer.into_iter().map(|mut x| {
            x.id = format!("long-{}", x.id);
            x
        }));
        let report =
            stability_sweep(&instances, &sweep_config(vec![2, 10]), svs_runner(&clf, 4)).unwrap();
        for row in &report.instances {
            assert_eq!(row.topk.contains_key(&10), row.length >= 10, "{row:?}");
        }
        // The aggregate for K=10 still exists, over long instances only.
        assert!(report.mean_topk.contains_key(&10));
    }

    #[test]
    fn sweeps_need_two_distinct_seeds() {
        let (clf, instances) = toy_instances(2, 3);
        let mut config = sweep_config(vec![]);
        config.seeds = vec![7];
        assert!(stability_sweep(&instances, &config, svs_runner(&clf, 2)).is_err());
        config.seeds = vec![7, 7];
        assert!(stability_sweep(&instances, &config, svs_runner(&clf, 2)).is_err());
    }

    #[test]
    fn csv_has_one_row_per_instance() {
        let (clf, instances) = toy_instances(5, 4);
        let report =
            stability_sweep(&instances, &sweep_config(vec![2]), svs_runner(&clf, 3)).unwrap();
        let csv = report.per_instance_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("instance_id,length,spearman"));
        assert!(lines[0].contains("topk_2"));
        assert!(lines[1].starts_with("s000,4,"));
    }
}
