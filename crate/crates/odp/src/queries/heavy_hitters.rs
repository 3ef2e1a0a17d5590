//! ODP heavy hitters: two oblivious sorts around a forward/backward scan
//! that attaches noisy run counts and flags.

use std::cmp::Reverse;

use rand::Rng;

use crate::dataset::Database;
use crate::extmem::TraceRecorder;
use crate::noise::{sample_laplace, PrivacyParams};
use crate::oprim::{oblivious_sort_by_key, sort_access_count};

use super::{f64_sort_key, load_input, NoiseMode, QueryError};

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyHitterEntry {
    pub item: u64,
    pub noisy_count: f64,
}

/// Up to k entries, distinct items, sorted by noisy count descending; no
/// entry below the n/k reporting threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyHitterList {
    pub entries: Vec<HeavyHitterEntry>,
    pub threshold: f64,
    pub laplace_draws: u64,
}

#[derive(Clone)]
struct Tuple {
    /// 0 = final tuple of a run (carries the noisy total), 1 = interior,
    /// 2 = sorting-network sentinel.
    flag: u8,
    item: u64,
    count: f64,
}

const SENTINEL_CELL: [u64; 2] = [u64::MAX, u64::MAX];

/// Finds items with frequency above n/k over domain `1..=m`.
///
/// Sorts by item, forward-scans emitting (item, running count) tuples to a
/// fixed-length list, backward-scans adding Lap(2/epsilon) to the last tuple
/// of each run (flag 0, one draw per distinct item), re-sorts by (flag asc,
/// noisy count desc), and reads the first min(k, n) slots, keeping entries
/// whose noisy count clears n/k. Both scans and sorts touch memory in an
/// order fixed by n alone.
pub fn heavy_hitters_odp(
    rec: &TraceRecorder,
    db: &Database,
    k: u64,
    m: u64,
    tau: f64,
    params: PrivacyParams,
    mode: NoiseMode,
    rng: &mut impl Rng,
) -> Result<HeavyHitterList, QueryError> {
    let n = db.len() as u64;
    if k == 0 || k > n {
        return Err(QueryError::BadK { k, n });
    }
    if !(tau > 1.0) {
        return Err(QueryError::BadTau(tau));
    }
    db.check_domain(m)?;
    let ratio = n as f64 / k as f64;
    let required = (tau / params.epsilon) * (m as f64).ln();
    if ratio <= required {
        return Err(QueryError::HeavyHitterPrecondition { ratio, required });
    }

    let padded = (n as usize).next_power_of_two();
    let input = load_input(rec, db);
    let mut work = rec.array(vec![SENTINEL_CELL; padded]);
    for j in 0..n as usize {
        let cell = input.read(j);
        work.write(j, cell);
    }
    oblivious_sort_by_key(&mut work, |cell| cell[1]);

    // Fixed-length tuple list; slots n..padded hold pre-placed sentinels so
    // the later sort runs on a power-of-two array without extra writes.
    let mut list = rec.array(vec![
        Tuple { flag: 2, item: u64::MAX, count: f64::NEG_INFINITY };
        padded
    ]);
    // Forward scan: private memory remembers only (previous type, counter).
    let mut prev_item = 0u64;
    let mut counter = 0f64;
    for j in 0..n as usize {
        let cell = work.read(j);
        let item = cell[1];
        if item == prev_item {
            counter += 1.0;
        } else {
            prev_item = item;
            counter = 1.0;
        }
        list.write(j, Tuple { flag: 1, item, count: counter });
    }

    // Backward scan: the first tuple of each run seen from the back is the
    // run's final tuple; it gets flag 0 and the Laplace noise.
    let scale = 2.0 / params.epsilon;
    let mut laplace_draws = 0u64;
    let mut last_seen = 0u64;
    for j in (0..n as usize).rev() {
        let tup = list.read(j);
        if tup.item != last_seen {
            last_seen = tup.item;
            let noise = match mode {
                NoiseMode::ZeroNoise => 0.0,
                _ => {
                    laplace_draws += 1;
                    sample_laplace(scale, rng).expect("positive scale")
                }
            };
            list.write(j, Tuple { flag: 0, item: tup.item, count: tup.count + noise });
        } else {
            list.write(j, Tuple { flag: 1, ..tup });
        }
    }

    // flag ascending, noisy count descending, item ascending as tie-break.
    oblivious_sort_by_key(&mut list, |t| (t.flag, Reverse(f64_sort_key(t.count)), t.item));

    let threshold = n as f64 / k as f64;
    let mut entries = Vec::new();
    for j in 0..(k.min(n) as usize) {
        let tup = list.read(j);
        if tup.flag == 0 && tup.count >= threshold {
            entries.push(HeavyHitterEntry { item: tup.item, noisy_count: tup.count });
        }
    }
    Ok(HeavyHitterList { entries, threshold, laplace_draws })
}

/// External accesses performed by [`heavy_hitters_odp`].
pub fn heavy_hitters_access_count(n: u64, k: u64) -> u64 {
    let padded = (n as usize).next_power_of_two();
    // copy + sort + forward scan + backward scan + sort + release reads
    2 * n + sort_access_count(padded) + 2 * n + 2 * n + sort_access_count(padded) + k.min(n)
}
