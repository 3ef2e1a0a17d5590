//! Shuffle-based ODP histogram, the ORAM-based variant, and the naive
//! non-oblivious baseline.

use rand::Rng;

use crate::dataset::Database;
use crate::extmem::{ArrayId, TraceRecorder};
use crate::noise::{
    padding_constant, sample_laplace, truncated_noise_vector, NoiseVector, PrivacyParams,
};
use crate::oprim::{oblivious_shuffle, shuffle_access_count, LinearScanOram};

use super::{load_input, NoiseMode, QueryError, DUMMY_OFFSET};

/// Noisy per-type counts plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyHistogram {
    pub counts: Vec<f64>,
    pub params: PrivacyParams,
    /// C = ceil(10 ln(n) / epsilon): fake records appended per type and the
    /// constant subtracted from each counter. Zero for the ORAM variant.
    pub padding_constant: u64,
    /// Drawn noise, exposed only in debug/zero-noise modes.
    pub debug_noise: Option<NoiseVector>,
}

/// Output of one histogram run, including what the verification harness
/// needs to interpret the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRun {
    pub histogram: NoisyHistogram,
    /// Array id of the external counter array `b`; trace events on it carry
    /// the per-type access pattern.
    pub counter_array: ArrayId,
    /// Augmented size T = n + 2kC (shuffle variant; n for the ORAM variant).
    pub total_augmented: u64,
    pub laplace_draws: u64,
}

fn validate(db: &Database, k: u64) -> Result<(), QueryError> {
    let n = db.len() as u64;
    if k == 0 || k > n {
        return Err(QueryError::BadK { k, n });
    }
    db.check_domain(k)?;
    Ok(())
}

/// Shuffle-based ODP histogram.
///
/// Appends `C + X_i` fake records per type and enough dummy records (type
/// k+1) to reach the fixed length `T = n + 2kC`, obliviously shuffles the
/// augmented database, then counts in one scan where dummies fake-write the
/// counter array in round-robin fashion. Finally subtracts C per counter.
pub fn histogram_odp(
    rec: &TraceRecorder,
    db: &Database,
    k: u64,
    params: PrivacyParams,
    mode: NoiseMode,
    rng: &mut impl Rng,
) -> Result<HistogramRun, QueryError> {
    validate(db, k)?;
    let n = db.len() as u64;
    let eps = params.epsilon;
    let c = padding_constant(n, eps);
    let (noise, laplace_draws) = match mode {
        NoiseMode::ZeroNoise => (NoiseVector::zeros(k as usize), 0),
        _ => (truncated_noise_vector(k as usize, eps, n, rng)?, k),
    };
    let t = n + 2 * k * c;

    let input = load_input(rec, db);
    let mut augmented = rec.array(vec![[0u64; 2]; t as usize]);
    for j in 0..n as usize {
        let cell = input.read(j);
        augmented.write(j, cell);
    }
    // Fake and dummy records get fresh ids above the user range. Their total
    // count is always exactly 2kC, so the build trace is input-independent.
    let mut pos = n as usize;
    let mut next_id = n + 1;
    for (i, &x) in noise.values.iter().enumerate() {
        let fakes = (c as i64 + x) as u64;
        for _ in 0..fakes {
            augmented.write(pos, [next_id, i as u64 + 1]);
            pos += 1;
            next_id += 1;
        }
    }
    let dummy_type = k + DUMMY_OFFSET;
    let dummies = (k * c) as i64 - noise.sum();
    for _ in 0..dummies {
        augmented.write(pos, [next_id, dummy_type]);
        pos += 1;
        next_id += 1;
    }
    debug_assert_eq!(pos as u64, t);

    oblivious_shuffle(rec, &mut augmented, rng);

    let mut counters = rec.array(vec![0u64; k as usize]);
    let mut ptr: u64 = 1; // round-robin pointer, 1-based, persists across dummies
    for j in 0..t as usize {
        let cell = augmented.read(j);
        let item_type = cell[1];
        if item_type == dummy_type {
            let idx = (ptr - 1) as usize;
            let v = counters.read(idx);
            counters.write(idx, v); // fake write: b[ptr] += 0
            ptr = ptr % k + 1;
        } else {
            let idx = (item_type - 1) as usize;
            let v = counters.read(idx);
            counters.write(idx, v + 1);
        }
    }

    let mut released = rec.array(vec![0i64; k as usize]);
    let mut counts = Vec::with_capacity(k as usize);
    for i in 0..k as usize {
        let v = counters.read(i) as i64 - c as i64;
        released.write(i, v);
        counts.push(v as f64);
    }

    Ok(HistogramRun {
        histogram: NoisyHistogram {
            counts,
            params,
            padding_constant: c,
            debug_noise: if mode.is_private() { None } else { Some(noise) },
        },
        counter_array: counters.id(),
        total_augmented: t,
        laplace_draws,
    })
}

/// External accesses performed by [`histogram_odp`]: input copy, augmented
/// build, shuffle, counting scan, and release.
pub fn histogram_odp_access_count(n: u64, k: u64, epsilon: f64) -> u64 {
    let c = padding_constant(n, epsilon);
    let t = n + 2 * k * c;
    n + t + shuffle_access_count(t as usize) + 3 * t + 2 * k
}

/// ORAM-based DP histogram: one scan of the database with each counter
/// update routed through a linear-scan ORAM, then Laplace(2/epsilon) per
/// counter. Fully data-oblivious (identical traces for any two same-size
/// databases), strictly stronger than ODP.
pub fn histogram_oram(
    rec: &TraceRecorder,
    db: &Database,
    k: u64,
    params: PrivacyParams,
    mode: NoiseMode,
    rng: &mut impl Rng,
) -> Result<HistogramRun, QueryError> {
    validate(db, k)?;
    let n = db.len() as u64;
    let input = load_input(rec, db);
    let mut oram = LinearScanOram::new(rec, vec![0u64; k as usize]);
    for j in 0..n as usize {
        let cell = input.read(j);
        let idx = (cell[1] - 1) as usize;
        oram.update(idx, |v| v + 1);
    }
    let raw = oram.scan_all();
    let scale = 2.0 / params.epsilon;
    let mut draws = Vec::with_capacity(k as usize);
    let counts = raw
        .iter()
        .map(|&v| {
            let noise = match mode {
                NoiseMode::ZeroNoise => 0.0,
                _ => sample_laplace(scale, rng).expect("positive scale"),
            };
            draws.push(noise.round() as i64);
            v as f64 + noise
        })
        .collect();
    Ok(HistogramRun {
        histogram: NoisyHistogram {
            counts,
            params,
            padding_constant: 0,
            debug_noise: if mode.is_private() {
                None
            } else {
                Some(NoiseVector { values: draws, truncated: false })
            },
        },
        counter_array: oram.array_id(),
        total_augmented: n,
        laplace_draws: if mode == NoiseMode::ZeroNoise { 0 } else { k },
    })
}

/// External accesses performed by [`histogram_oram`]: the input scan plus 2k
/// per ORAM access plus the final release scan.
pub fn histogram_oram_access_count(n: u64, k: u64) -> u64 {
    n + n * 2 * k + 2 * k
}

/// Naive non-oblivious histogram: increments `b[type]` directly, so the
/// trace reveals every record's type. Exists as the expected-fail fixture
/// for the obliviousness checker. Exact counts, no noise, not private.
pub fn naive_histogram(
    rec: &TraceRecorder,
    db: &Database,
    k: u64,
) -> Result<Vec<u64>, QueryError> {
    validate(db, k)?;
    let input = load_input(rec, db);
    let mut counters = rec.array(vec![0u64; k as usize]);
    for j in 0..db.len() {
        let cell = input.read(j);
        let idx = (cell[1] - 1) as usize;
        let v = counters.read(idx);
        counters.write(idx, v + 1);
    }
    Ok((0..k as usize).map(|i| counters.read(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_csv, Record};

    use rand::{RngExt as _, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn db_of(types: &[u64]) -> Database {
        Database::new(
            types
                .iter()
                .enumerate()
                .map(|(i, &t)| Record { record_id: i as u64 + 1, item_type: t })
                .collect(),
        )
        .unwrap()
    }

    fn params() -> PrivacyParams {
        PrivacyParams::pure(1.0).unwrap()
    }

    #[test]
    fn zero_noise_histogram_is_exact() {
        let db = db_of(&[1, 1, 2, 2]);
        let rec = TraceRecorder::counting_only();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let run =
            histogram_odp(&rec, &db, 2, params(), NoiseMode::ZeroNoise, &mut rng).unwrap();
        assert_eq!(run.histogram.counts, vec![2.0, 2.0]);
    }

    #[test]
    fn augmented_size_arithmetic() {
        // n=100, k=4, eps=1: C = ceil(10 ln 100) = 47, T = 100 + 2*4*47 = 476.
        let db = db_of(&(0..100).map(|i| i % 4 + 1).collect::<Vec<_>>());
        let rec = TraceRecorder::counting_only();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let run = histogram_odp(&rec, &db, 4, params(), NoiseMode::Standard, &mut rng).unwrap();
        assert_eq!(run.histogram.padding_constant, 47);
        assert_eq!(run.total_augmented, 476);
    }

    #[test]
    fn output_is_exact_counts_plus_drawn_noise() {
        // With a fixed tape, output_i = n_i + X_i exactly, X_i the
        // truncated, ceiled Lap(2/eps) draws the run exposes in debug mode.
        let db = db_of(&[1, 1, 1, 2, 3, 3, 4, 4, 4, 4]);
        let rec = TraceRecorder::counting_only();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let run = histogram_odp(&rec, &db, 4, params(), NoiseMode::Debug, &mut rng).unwrap();
        let noise = run.histogram.debug_noise.clone().unwrap();
        let exact = db.exact_histogram(4);
        for i in 0..4 {
            assert_eq!(
                run.histogram.counts[i],
                exact[i] as f64 + noise.values[i] as f64
            );
        }
        assert_eq!(run.laplace_draws, 4);
    }

    #[test]
    fn parameter_violations_rejected_before_touching_data() {
        let db = db_of(&[1, 2]);
        let rec = TraceRecorder::new();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            histogram_odp(&rec, &db, 0, params(), NoiseMode::Standard, &mut rng),
            Err(QueryError::BadK { .. })
        ));
        assert!(matches!(
            histogram_odp(&rec, &db, 5, params(), NoiseMode::Standard, &mut rng),
            Err(QueryError::BadK { .. })
        ));
        assert!(rec.take_trace().is_empty());
    }

    #[test]
    fn reserved_types_in_user_data_rejected() {
        let db = parse_csv("1,1\n2,3\n3,2\n").unwrap();
        let rec = TraceRecorder::new();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // k=2 makes type 3 the dummy type: must be rejected as out of domain
        assert!(matches!(
            histogram_odp(&rec, &db, 2, params(), NoiseMode::Standard, &mut rng),
            Err(QueryError::Dataset(_))
        ));
    }

    #[test]
    fn odp_trace_length_matches_formula() {
        for (n, k) in [(50u64, 3u64), (100, 4), (17, 2)] {
            let db = db_of(&(0..n).map(|i| i % k + 1).collect::<Vec<_>>());
            let rec = TraceRecorder::counting_only();
            let mut rng = ChaCha12Rng::seed_from_u64(n ^ k);
            histogram_odp(&rec, &db, k, params(), NoiseMode::Standard, &mut rng).unwrap();
            assert_eq!(rec.event_count(), histogram_odp_access_count(n, k, 1.0), "n={n}, k={k}");
        }
    }

    #[test]
    fn oram_histogram_trace_is_input_independent_and_sized() {
        let n = 24u64;
        let k = 4u64;
        let run_on = |types: Vec<u64>| {
            let (_, trace) = TraceRecorder::capture(|rec| {
                let db = db_of(&types);
                let mut rng = ChaCha12Rng::seed_from_u64(9);
                histogram_oram(rec, &db, k, params(), NoiseMode::Standard, &mut rng).unwrap()
            });
            trace
        };
        let t1 = run_on((0..n).map(|i| i % k + 1).collect());
        let t2 = run_on(vec![1; n as usize]);
        assert_eq!(t1.to_text(), t2.to_text());
        assert_eq!(t1.len() as u64, histogram_oram_access_count(n, k));
    }

    #[test]
    fn oram_and_odp_agree_in_zero_noise_mode() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(4..64u64);
            let k = rng.random_range(1..=n.min(6));
            let types: Vec<u64> = (0..n).map(|_| rng.random_range(1..=k)).collect();
            let db = db_of(&types);
            let rec = TraceRecorder::counting_only();
            let a = histogram_odp(&rec, &db, k, params(), NoiseMode::ZeroNoise, &mut rng)
                .unwrap();
            let b = histogram_oram(&rec, &db, k, params(), NoiseMode::ZeroNoise, &mut rng)
                .unwrap();
            let exact: Vec<f64> = db.exact_histogram(k).iter().map(|&v| v as f64).collect();
            assert_eq!(a.histogram.counts, exact);
            assert_eq!(b.histogram.counts, exact);
        }
    }

    #[test]
    fn naive_histogram_counts_exactly() {
        let db = db_of(&[1, 1, 2, 3, 3, 3]);
        let rec = TraceRecorder::new();
        assert_eq!(naive_histogram(&rec, &db, 3).unwrap(), vec![2, 1, 3]);
    }
}
