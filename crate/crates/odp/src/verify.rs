//! Empirical verification harness: exact obliviousness checks, trace-DP
//! epsilon estimation on neighboring databases, and utility bound suites
//! for the query algorithms.
//!
//! All harness runs are replayable from a master seed; trials run in
//! parallel with one trace recorder each.

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::dataset::{generate, Database, Record, TypeDistribution};
use crate::extmem::{AccessKind, AccessTrace, ArrayId, PrivateMemoryMeter, TraceRecorder};
use crate::noise::PrivacyParams;
use crate::queries::{
    distinct_sort_odp, distinct_stream_odp, freq_oracle_build, heavy_hitters_odp, histogram_odp,
    NoiseMode, QueryError,
};
use crate::sketches::{cm_depth, cm_width};

fn trial_rng(master_seed: u64, stream: u64, trial: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed ^ stream.rotate_left(17));
    rng.set_stream(trial);
    rng
}

// ---------------------------------------------------------------------------
// Exact obliviousness (the epsilon = 0, non-neighboring case)

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub input_index: usize,
    pub event_index: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObliviousnessReport {
    pub inputs: usize,
    pub pass: bool,
    pub divergence: Option<Divergence>,
}

/// Runs `run` on every input with the same randomness tape and passes iff
/// the serialized traces are byte-identical. On failure, reports the first
/// divergent event against input 0's trace.
pub fn check_exact_obliviousness<I>(
    inputs: &[I],
    seed: u64,
    run: impl Fn(&TraceRecorder, &I, &mut ChaCha12Rng),
) -> ObliviousnessReport {
    assert!(!inputs.is_empty());
    let trace_of = |input: &I| {
        let (_, trace) = TraceRecorder::capture(|rec| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            run(rec, input, &mut rng);
        });
        trace
    };
    let reference = trace_of(&inputs[0]);
    for (idx, input) in inputs.iter().enumerate().skip(1) {
        let trace = trace_of(input);
        if trace != reference {
            let event_index = reference
                .events
                .iter()
                .zip(&trace.events)
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| reference.len().min(trace.len()));
            let fmt = |t: &AccessTrace, i: usize| {
                t.events
                    .get(i)
                    .map(|e| format!("{:?}", e))
                    .unwrap_or_else(|| "<end of trace>".to_string())
            };
            return ObliviousnessReport {
                inputs: inputs.len(),
                pass: false,
                divergence: Some(Divergence {
                    input_index: idx,
                    event_index,
                    expected: fmt(&reference, event_index),
                    actual: fmt(&trace, event_index),
                }),
            };
        }
    }
    ObliviousnessReport { inputs: inputs.len(), pass: true, divergence: None }
}

// ---------------------------------------------------------------------------
// Trace statistic and epsilon estimation

/// Per-index read counts on one array: the projection of a trace onto the
/// counter-array access histogram. For the shuffle-based histogram this is
/// the sufficient statistic the configuration argument licenses — the
/// counting scan touches `b[i]` once per non-dummy record of type i and
/// once per round-robin dummy hit.
pub fn bin_read_counts(trace: &AccessTrace, array: ArrayId, k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for e in &trace.events {
        if e.array_id == array && e.kind == AccessKind::Read {
            counts[e.index as usize] += 1;
        }
    }
    counts
}

/// Scan-phase access counts for the shuffle-based histogram: strips the one
/// release-pass read per counter from [`bin_read_counts`].
pub fn scan_access_counts(trace: &AccessTrace, array: ArrayId, k: usize) -> Vec<u64> {
    bin_read_counts(trace, array, k).into_iter().map(|c| c - 1).collect()
}

/// Expected scan-phase access counts given the augmented per-type counts
/// `c[0..k]` (real + fake records) and the dummy count: the d-th dummy
/// fake-writes bin `(d-1) mod k`, so round-robin hits split evenly with the
/// first `dummies mod k` bins getting one extra.
pub fn expected_scan_counts(augmented: &[u64], dummies: u64) -> Vec<u64> {
    let k = augmented.len() as u64;
    augmented
        .iter()
        .enumerate()
        .map(|(i, &c)| c + dummies / k + u64::from((i as u64) < dummies % k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonEstimate {
    pub epsilon_hat: f64,
    /// 95% confidence interval on the held-out log-ratio.
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
}

fn vector_histogram(sample: &[Vec<u64>]) -> std::collections::HashMap<&[u64], f64> {
    let mut hist: std::collections::HashMap<&[u64], f64> = std::collections::HashMap::new();
    for s in sample {
        *hist.entry(s.as_slice()).or_insert(0.0) += 1.0;
    }
    hist
}

/// Estimates the max-over-bins |log ratio| separating the distributions of
/// two samples of statistic vectors.
///
/// Selection and estimation use disjoint halves of the trials so the
/// maximization cannot inflate the estimate. On the first half, add-one
/// smoothed joint histograms score every bin by its |log ratio| minus 1.64
/// standard errors — the penalty keeps sparse bins whose ratio is pure
/// sampling noise from winning. The bins whose point ratio is within 0.1 of
/// the best-scoring bin's (same sign) form the distinguishing region; on
/// the second half, the estimate is the smoothed log-ratio of that region's
/// aggregated mass. Disjoint high-mass supports — the no-noise pathology —
/// select themselves and blow the ratio up to ~ln(N).
pub fn estimate_epsilon_from_statistics(
    stats1: &[Vec<u64>],
    stats2: &[Vec<u64>],
) -> EpsilonEstimate {
    assert!(!stats1.is_empty() && stats1.len() == stats2.len());
    let half = stats1.len() / 2;
    let (a1, b1) = stats1.split_at(half);
    let (a2, b2) = stats2.split_at(half);
    let (ha1, ha2) = (vector_histogram(a1), vector_histogram(a2));
    let na = half as f64;
    let min_count = (na / 2000.0).max(10.0);
    let support: std::collections::HashSet<&[u64]> =
        ha1.keys().chain(ha2.keys()).copied().collect();
    // (key, signed point log-ratio, confidence-penalized score)
    let scored: Vec<(&[u64], f64, f64)> = support
        .iter()
        .filter_map(|&key| {
            let c1 = *ha1.get(key).unwrap_or(&0.0);
            let c2 = *ha2.get(key).unwrap_or(&0.0);
            (c1.max(c2) >= min_count).then(|| {
                let r = ((c1 + 1.0) / (c2 + 1.0)).ln();
                let se = (1.0 / (c1 + 1.0) + 1.0 / (c2 + 1.0)).sqrt();
                (key, r, r.abs() - 1.64 * se)
            })
        })
        .collect();
    let Some(&(_, r_star, _)) = scored.iter().max_by(|a, b| a.2.total_cmp(&b.2)) else {
        return EpsilonEstimate {
            epsilon_hat: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            trials: stats1.len() as u64,
        };
    };
    let region: std::collections::HashSet<&[u64]> = scored
        .into_iter()
        .filter(|&(_, r, _)| r.signum() == r_star.signum() && r.abs() >= r_star.abs() - 0.1)
        .map(|(k, _, _)| k)
        .collect();

    let mass = |sample: &[Vec<u64>]| {
        sample.iter().filter(|s| region.contains(s.as_slice())).count() as f64
    };
    let (cb1, cb2) = (mass(b1), mass(b2));
    let nb = b1.len() as f64;
    let epsilon_hat = (((cb1 + 1.0) / (nb + 2.0)) / ((cb2 + 1.0) / (nb + 2.0))).ln().abs();
    let se = (1.0 / (cb1 + 1.0) + 1.0 / (cb2 + 1.0)).sqrt();
    EpsilonEstimate {
        epsilon_hat,
        ci_low: (epsilon_hat - 1.96 * se).max(0.0),
        ci_high: epsilon_hat + 1.96 * se,
        trials: stats1.len() as u64,
    }
}

/// Checks that two databases are same-size neighbors differing in exactly
/// one record's type.
pub fn check_neighbors(d1: &Database, d2: &Database) -> Result<(), QueryError> {
    let same_n = d1.len() == d2.len();
    let differing = d1
        .records()
        .iter()
        .zip(d2.records())
        .filter(|(a, b)| a.item_type != b.item_type)
        .count();
    if !same_n || differing != 1 {
        return Err(QueryError::Dataset(crate::dataset::DatasetError::Malformed { line: 0 }));
    }
    Ok(())
}

/// Estimates the trace-side epsilon of the shuffle-based histogram on a
/// fixed neighbor pair by projecting each trial's trace to its per-bin
/// counter access counts.
pub fn estimate_trace_epsilon(
    d1: &Database,
    d2: &Database,
    k: u64,
    params: PrivacyParams,
    mode: NoiseMode,
    trials: u64,
    master_seed: u64,
) -> Result<EpsilonEstimate, QueryError> {
    check_neighbors(d1, d2)?;
    let collect = |db: &Database, stream: u64| -> Result<Vec<Vec<u64>>, QueryError> {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(master_seed, stream, t);
                let (run, trace) = TraceRecorder::capture(|rec| {
                    histogram_odp(rec, db, k, params, mode, &mut rng)
                });
                let run = run?;
                Ok(scan_access_counts(&trace, run.counter_array, k as usize))
            })
            .collect()
    };
    let stats1 = collect(d1, 1)?;
    let stats2 = collect(d2, 2)?;
    Ok(estimate_epsilon_from_statistics(&stats1, &stats2))
}

// ---------------------------------------------------------------------------
// Utility suites

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityRow {
    pub name: String,
    pub metric: String,
    pub bound: f64,
    pub observed: f64,
    pub required: f64,
    pub pass: bool,
}

impl UtilityRow {
    fn rate(name: &str, metric: &str, bound: f64, observed: f64, required: f64) -> Self {
        UtilityRow {
            name: name.to_string(),
            metric: metric.to_string(),
            bound,
            observed,
            required,
            pass: observed >= required,
        }
    }
}

/// `name,metric,bound,observed,pass` rows, one per check.
pub fn rows_to_csv(rows: &[UtilityRow]) -> String {
    let mut out = String::from("name,metric,bound,observed,pass\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.name, r.metric, r.bound, r.observed, r.pass).unwrap();
    }
    out
}

/// Histogram error clause: max_i |n_hat_i - n_i| <= ln(k/theta) * 2/eps
/// with empirical frequency >= 1 - theta.
pub fn utility_histogram(
    n: u64,
    k: u64,
    epsilon: f64,
    theta: f64,
    trials: u64,
    master_seed: u64,
) -> UtilityRow {
    let params = PrivacyParams::pure(epsilon).expect("valid epsilon");
    let bound = (k as f64 / theta).ln() * 2.0 / epsilon;
    let within: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, 10, t);
            let db = generate(n, k, TypeDistribution::Uniform, &mut rng);
            let exact = db.exact_histogram(k);
            let rec = TraceRecorder::counting_only();
            let run = histogram_odp(&rec, &db, k, params, NoiseMode::Standard, &mut rng)
                .expect("valid parameters");
            let max_err = run
                .histogram
                .counts
                .iter()
                .zip(&exact)
                .map(|(&got, &want)| (got - want as f64).abs())
                .fold(0.0f64, f64::max);
            u64::from(max_err <= bound)
        })
        .sum();
    UtilityRow::rate(
        "histogram",
        "max_abs_error_within_bound_rate",
        bound,
        within as f64 / trials as f64,
        1.0 - theta,
    )
}

/// Sort-based distinct count error clause: additive error <= ln(1/theta)/eps
/// with empirical frequency >= 1 - theta.
pub fn utility_distinct_sort(
    n: u64,
    epsilon: f64,
    theta: f64,
    trials: u64,
    master_seed: u64,
) -> UtilityRow {
    let params = PrivacyParams::pure(epsilon).expect("valid epsilon");
    let bound = (1.0 / theta).ln() / epsilon;
    let within: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, 11, t);
            let domain = rng.random_range(1..=n);
            let db = generate(n, domain, TypeDistribution::Uniform, &mut rng);
            let exact = db.exact_distinct() as f64;
            let rec = TraceRecorder::counting_only();
            let out = distinct_sort_odp(&rec, &db, params, NoiseMode::Standard, &mut rng)
                .expect("valid parameters");
            u64::from((out.estimate - exact).abs() <= bound)
        })
        .sum();
    UtilityRow::rate(
        "distinct_sort",
        "abs_error_within_bound_rate",
        bound,
        within as f64 / trials as f64,
        1.0 - theta,
    )
}

/// Streaming distinct count: combined (1 +- alpha) n* +- ln(1/theta)/eps
/// bound; the required rate carries slack for the KMV substitution.
pub fn utility_distinct_stream(
    n_star: u64,
    alpha: f64,
    epsilon: f64,
    theta: f64,
    required_rate: f64,
    trials: u64,
    master_seed: u64,
) -> UtilityRow {
    let params = PrivacyParams::pure(epsilon).expect("valid epsilon");
    let additive = (1.0 / theta).ln() / epsilon;
    let within: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, 12, t);
            let records =
                (1..=n_star).map(|i| Record { record_id: i, item_type: i }).collect();
            let db = Database::new(records).expect("unique ids");
            let rec = TraceRecorder::counting_only();
            let mut meter = PrivateMemoryMeter::new(1 << 20);
            let out = distinct_stream_odp(
                &rec, &db, alpha, params, NoiseMode::Standard, &mut rng, &mut meter,
            )
            .expect("valid parameters");
            let lo = (1.0 - alpha) * n_star as f64 - additive;
            let hi = (1.0 + alpha) * n_star as f64 + additive;
            u64::from(lo <= out.estimate && out.estimate <= hi)
        })
        .sum();
    UtilityRow::rate(
        "distinct_stream",
        "combined_bound_rate",
        additive,
        within as f64 / trials as f64,
        required_rate,
    )
}

/// Heavy-hitters rows: per-item error bound rate, reporting-floor
/// violations, and zero-noise completeness.
pub fn utility_heavy_hitters(
    n: u64,
    k: u64,
    m: u64,
    epsilon: f64,
    theta: f64,
    trials: u64,
    master_seed: u64,
) -> Vec<UtilityRow> {
    let params = PrivacyParams::pure(epsilon).expect("valid epsilon");
    let bound = (m as f64 / theta).ln() * 2.0 / epsilon;
    let floor = n as f64 / k as f64 - 2.0 * bound;
    // (items_within_bound, items_total, floor_violations, complete_trials)
    let (within, total, violations, complete): (u64, u64, u64, u64) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, 13, t);
            let db = generate(n, m, TypeDistribution::Zipf { exponent: 1.1 }, &mut rng);
            let mut exact = std::collections::HashMap::new();
            for r in db.records() {
                *exact.entry(r.item_type).or_insert(0u64) += 1;
            }
            let rec = TraceRecorder::counting_only();
            let out =
                heavy_hitters_odp(&rec, &db, k, m, 2.0, params, NoiseMode::Standard, &mut rng)
                    .expect("valid parameters");
            let mut within = 0u64;
            let mut violations = 0u64;
            for e in &out.entries {
                let true_count = *exact.get(&e.item).unwrap_or(&0) as f64;
                within += u64::from((e.noisy_count - true_count).abs() <= bound);
                violations += u64::from(true_count < floor);
            }
            // completeness is a zero-noise property
            let zn = heavy_hitters_odp(
                &rec, &db, k, m, 2.0, params, NoiseMode::ZeroNoise, &mut rng,
            )
            .expect("valid parameters");
            let complete = exact.iter().all(|(&item, &cnt)| {
                (cnt as f64) <= n as f64 / k as f64 || zn.entries.iter().any(|e| e.item == item)
            });
            (within, out.entries.len() as u64, violations, u64::from(complete))
        })
        .reduce(
            || (0, 0, 0, 0),
            |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3),
        );
    vec![
        UtilityRow::rate(
            "heavy_hitters",
            "per_item_error_within_bound_rate",
            bound,
            within as f64 / total.max(1) as f64,
            1.0 - theta,
        ),
        UtilityRow {
            name: "heavy_hitters".to_string(),
            metric: "reporting_floor_violations".to_string(),
            bound: floor,
            observed: violations as f64,
            required: 0.0,
            pass: violations == 0,
        },
        UtilityRow::rate(
            "heavy_hitters",
            "zero_noise_completeness_rate",
            n as f64 / k as f64,
            complete as f64 / trials as f64,
            1.0,
        ),
    ]
}

/// Frequency-oracle rows: pre-noise no-underestimate, and the noisy query
/// error bound alpha N + ln(dw/theta') 2d/eps at rate 1 - theta - theta'.
pub fn utility_freq_oracle(
    n: u64,
    domain: u64,
    alpha: f64,
    theta: f64,
    theta_prime: f64,
    epsilon: f64,
    master_seed: u64,
) -> Vec<UtilityRow> {
    let params = PrivacyParams::pure(epsilon).expect("valid epsilon");
    let (w, d) = (cm_width(alpha), cm_depth(theta));
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed ^ 14);
    let db = generate(n, domain, TypeDistribution::Zipf { exponent: 1.2 }, &mut rng);
    let mut exact = std::collections::HashMap::new();
    for r in db.records() {
        *exact.entry(r.item_type).or_insert(0u64) += 1;
    }
    let rec = TraceRecorder::counting_only();
    let mut meter = PrivateMemoryMeter::new(1 << 20);

    let zero = freq_oracle_build(
        &rec, &db, alpha, theta, params, NoiseMode::ZeroNoise, &mut rng, &mut meter,
    )
    .expect("valid parameters");
    let underestimates = exact
        .iter()
        .filter(|(item, cnt)| zero.released.query(**item) < **cnt as f64)
        .count() as u64;

    let noisy = freq_oracle_build(
        &rec, &db, alpha, theta, params, NoiseMode::Standard, &mut rng, &mut meter,
    )
    .expect("valid parameters");
    let bound = alpha * n as f64
        + ((d * w) as f64 / theta_prime).ln() * 2.0 * d as f64 / epsilon;
    let within = exact
        .iter()
        .filter(|(item, cnt)| (noisy.released.query(**item) - **cnt as f64).abs() <= bound)
        .count();
    vec![
        UtilityRow {
            name: "freq_oracle".to_string(),
            metric: "pre_noise_underestimates".to_string(),
            bound: 0.0,
            observed: underestimates as f64,
            required: 0.0,
            pass: underestimates == 0,
        },
        UtilityRow::rate(
            "freq_oracle",
            "noisy_query_error_within_bound_rate",
            bound,
            within as f64 / exact.len() as f64,
            1.0 - theta - theta_prime,
        ),
    ]
}
