//! Data-oblivious building blocks: Batcher odd-even mergesort, a tag-based
//! oblivious shuffle, and a linear-scan ORAM.
//!
//! All three touch external memory in an order fixed by the array length
//! alone, so any two same-size inputs produce byte-identical traces.

use rand::{Rng, RngExt};

use crate::extmem::{ExternalArray, TraceRecorder};

/// Compare-exchange schedule of Batcher's odd-even mergesort for `n` cells.
/// `n` must be a power of two. The schedule depends only on `n`.
pub fn batcher_network(n: usize) -> Vec<(usize, usize)> {
    assert!(n.is_power_of_two(), "sorting network requires power-of-two size");
    let mut comparators = Vec::new();
    sort_range(0, n, &mut comparators);
    comparators
}

fn sort_range(lo: usize, n: usize, out: &mut Vec<(usize, usize)>) {
    if n > 1 {
        let m = n / 2;
        sort_range(lo, m, out);
        sort_range(lo + m, m, out);
        merge_range(lo, n, 1, out);
    }
}

fn merge_range(lo: usize, n: usize, r: usize, out: &mut Vec<(usize, usize)>) {
    let step = r * 2;
    if step < n {
        merge_range(lo, n, step, out);
        merge_range(lo + r, n, step, out);
        let mut i = lo + r;
        while i + r < lo + n {
            out.push((i, i + r));
            i += step;
        }
    } else {
        out.push((lo, lo + r));
    }
}

/// Number of compare-exchanges in [`batcher_network`] without materializing
/// it: `(p^2 - p + 4) 2^{p-2} - 1` for `n = 2^p`, and 0 for `n = 1`.
pub fn batcher_comparator_count(n: usize) -> u64 {
    assert!(n.is_power_of_two());
    match n {
        1 => 0,
        2 => 1,
        _ => {
            let p = n.trailing_zeros() as u64;
            (p * p - p + 4) * (1u64 << (p - 2)) - 1
        }
    }
}

/// External accesses performed by [`oblivious_sort_by_key`] on `n` cells:
/// two reads and two writes per compare-exchange.
pub fn sort_access_count(n: usize) -> u64 {
    4 * batcher_comparator_count(n)
}

/// External accesses performed by [`oblivious_shuffle`] on `len` cells.
pub fn shuffle_access_count(len: usize) -> u64 {
    let padded = len.next_power_of_two();
    // copy-in: len reads + padded writes; sort; copy-back: len reads + writes.
    len as u64 + padded as u64 + sort_access_count(padded) + 2 * len as u64
}

/// Sorts `arr` in place by `key`, nondecreasing. `arr.len()` must be a power
/// of two; callers pad with max-key sentinels. Comparisons happen in private
/// memory; every comparator issues two reads and two writes regardless of
/// the outcome.
pub fn oblivious_sort_by_key<T, K, F>(arr: &mut ExternalArray<T>, key: F)
where
    T: Clone,
    K: Ord,
    F: Fn(&T) -> K,
{
    for (i, j) in batcher_network(arr.len()) {
        let a = arr.read(i);
        let b = arr.read(j);
        if key(&a) <= key(&b) {
            arr.write(i, a);
            arr.write(j, b);
        } else {
            arr.write(i, b);
            arr.write(j, a);
        }
    }
}

#[derive(Clone)]
struct Tagged<T> {
    tag: u128,
    // Pre-shuffle position, breaking tag ties deterministically. A collision
    // of 128-bit tags biases the permutation by < 2^-64 per pair.
    slot: u64,
    value: Option<T>,
}

/// Permutes `arr` in place by a uniformly random hidden permutation.
///
/// Realized as random 128-bit tags plus an oblivious sort on the tags, so the
/// trace is the fixed tag-sort trace for this length and reveals nothing
/// about the permutation. Sentinel cells (`tag = MAX`) pad to the network
/// size and fall to the tail.
pub fn oblivious_shuffle<T: Clone>(
    rec: &TraceRecorder,
    arr: &mut ExternalArray<T>,
    rng: &mut impl Rng,
) {
    let len = arr.len();
    if len <= 1 {
        return;
    }
    let padded = len.next_power_of_two();
    let mut tagged: ExternalArray<Tagged<T>> =
        rec.array(vec![Tagged { tag: u128::MAX, slot: 0, value: None }; padded]);
    for i in 0..len {
        let v = arr.read(i);
        tagged.write(i, Tagged { tag: rng.random(), slot: i as u64, value: Some(v) });
    }
    for i in len..padded {
        tagged.write(i, Tagged { tag: u128::MAX, slot: i as u64, value: None });
    }
    oblivious_sort_by_key(&mut tagged, |c| (c.tag, c.slot));
    for i in 0..len {
        let c = tagged.read(i);
        arr.write(i, c.value.expect("sentinel sorted into live region"));
    }
}

/// Linear-scan ORAM over `k` cells: every logical access reads and writes
/// all k cells in fixed ascending order, so the trace never depends on the
/// requested index. Per-access cost is exactly 2k events. Stands in for the
/// polylog ORAM constructions, trading overhead for simplicity.
pub struct LinearScanOram<T> {
    backing: ExternalArray<T>,
}

impl<T: Clone> LinearScanOram<T> {
    pub fn new(rec: &TraceRecorder, cells: Vec<T>) -> Self {
        LinearScanOram { backing: rec.array(cells) }
    }

    pub fn len(&self) -> usize {
        self.backing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backing.is_empty()
    }

    pub fn array_id(&self) -> crate::extmem::ArrayId {
        self.backing.id()
    }

    /// Logical read of cell `i`. 2k events.
    pub fn read(&mut self, i: usize) -> T {
        assert!(i < self.len(), "oram read out of bounds: {} >= {}", i, self.len());
        let mut out = None;
        for j in 0..self.len() {
            let v = self.backing.read(j);
            if j == i {
                out = Some(v.clone());
            }
            self.backing.write(j, v);
        }
        out.unwrap()
    }

    /// Logical write of `value` to cell `i`. 2k events.
    pub fn write(&mut self, i: usize, value: T) {
        assert!(i < self.len(), "oram write out of bounds: {} >= {}", i, self.len());
        for j in 0..self.len() {
            let v = self.backing.read(j);
            self.backing.write(j, if j == i { value.clone() } else { v });
        }
    }

    /// Read-modify-write of cell `i` in a single pass: `f` is applied to the
    /// matching cell, every other cell gets a fake write-back. 2k events,
    /// half the cost of a separate read then write.
    pub fn update(&mut self, i: usize, f: impl Fn(&T) -> T) -> T {
        assert!(i < self.len(), "oram update out of bounds: {} >= {}", i, self.len());
        let mut old = None;
        for j in 0..self.len() {
            let v = self.backing.read(j);
            if j == i {
                old = Some(v.clone());
                self.backing.write(j, f(&v));
            } else {
                self.backing.write(j, v);
            }
        }
        old.unwrap()
    }

    /// Reads out all cells in one fixed pass (with fake write-backs).
    /// 2k events.
    pub fn scan_all(&mut self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.len() {
            let v = self.backing.read(j);
            self.backing.write(j, v.clone());
            out.push(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Iterative odd-even mergesort schedule (Sedgewick's formulation),
    /// independent of the recursive generator it checks.
    fn iterative_network(n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut p = 1;
        while p < n {
            let mut k = p;
            while k >= 1 {
                let mut j = k % p;
                while j + k < n {
                    for i in 0..k.min(n - j - k) {
                        if (i + j) / (2 * p) == (i + j + k) / (2 * p) {
                            out.push((i + j, i + j + k));
                        }
                    }
                    j += 2 * k;
                }
                k /= 2;
            }
            p *= 2;
        }
        out
    }

    fn sort_via(net: &[(usize, usize)], mut v: Vec<u64>) -> Vec<u64> {
        for &(i, j) in net {
            if v[i] > v[j] {
                v.swap(i, j);
            }
        }
        v
    }

    #[test]
    fn network_size_matches_oracle_and_formula() {
        for p in 0..=10usize {
            let n = 1 << p;
            let net = batcher_network(n);
            let oracle = iterative_network(n);
            assert_eq!(net.len(), oracle.len(), "n={n}");
            assert_eq!(net.len() as u64, batcher_comparator_count(n), "n={n}");
        }
        // n = 8 has the textbook 19 exchanges; 2 reads + 2 writes each.
        assert_eq!(batcher_comparator_count(8), 19);
        assert_eq!(sort_access_count(8), 76);
    }

    #[test]
    fn network_sorts_all_zero_one_inputs() {
        // 0-1 principle: a network sorting every 0/1 input sorts everything.
        for p in 0..=4usize {
            let n = 1 << p;
            let net = batcher_network(n);
            for bits in 0..(1u32 << n) {
                let v: Vec<u64> = (0..n).map(|i| ((bits >> i) & 1) as u64).collect();
                let sorted = sort_via(&net, v.clone());
                let mut expect = v;
                expect.sort();
                assert_eq!(sorted, expect);
            }
        }
    }

    #[test]
    fn oblivious_sort_matches_comparison_sort_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for trial in 0..10_000 {
            let n_raw = 1 + (trial % 64);
            let n = (n_raw as usize).next_power_of_two();
            let rec = TraceRecorder::counting_only();
            let keys: Vec<u64> = (0..n).map(|_| rng.random_range(0..1000)).collect();
            let mut arr = rec.array(keys.clone());
            oblivious_sort_by_key(&mut arr, |&k| k);
            let got: Vec<u64> = (0..n).map(|i| arr.read(i)).collect();
            let mut expect = keys;
            expect.sort();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn sort_trace_depends_only_on_length() {
        let run = |keys: Vec<u64>| {
            let (_, trace) = TraceRecorder::capture(|rec| {
                let mut arr = rec.array(keys);
                oblivious_sort_by_key(&mut arr, |&k| k);
            });
            trace.to_text()
        };
        assert_eq!(run(vec![3, 1, 2, 0]), run(vec![9, 8, 7, 6]));
    }

    #[test]
    fn sort_event_count_is_four_per_comparator() {
        let (_, trace) = TraceRecorder::capture(|rec| {
            let mut arr = rec.array((0..8u64).rev().collect());
            oblivious_sort_by_key(&mut arr, |&k| k);
        });
        assert_eq!(trace.len() as u64, 76);
    }

    #[test]
    fn shuffle_preserves_multiset_and_trace_is_fixed() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut texts = Vec::new();
        for _ in 0..10 {
            let rec = TraceRecorder::new();
            let mut arr = rec.array(vec![10u64, 20, 30, 40, 50]);
            oblivious_shuffle(&rec, &mut arr, &mut rng);
            let mut got: Vec<u64> = (0..5).map(|i| arr.read(i)).collect();
            let trace = rec.take_trace();
            // drop the 5 verification reads from the comparison
            let events = &trace.events[..trace.len() - 5];
            texts.push(
                events.iter().map(|e| format!("{:?}", (e.kind, e.array_id, e.index))).collect::<Vec<_>>(),
            );
            got.sort();
            assert_eq!(got, vec![10, 20, 30, 40, 50]);
        }
        assert!(texts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn shuffle_length_one_is_unchanged() {
        let rec = TraceRecorder::new();
        let mut arr = rec.array(vec![7u64]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        oblivious_shuffle(&rec, &mut arr, &mut rng);
        assert_eq!(arr.read(0), 7);
    }

    /// Chi-square upper quantiles at the 0.999 level.
    fn chi2_crit(df: usize) -> f64 {
        match df {
            1 => 10.828,
            5 => 20.515,
            23 => 49.728,
            _ => panic!("no tabulated quantile for df={df}"),
        }
    }

    #[test]
    fn shuffle_uniformity_chi_square() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for n in [2usize, 3, 4] {
            let perms: usize = (1..=n).product();
            let trials = 10_000 * perms;
            let mut counts = std::collections::HashMap::new();
            for _ in 0..trials {
                let rec = TraceRecorder::counting_only();
                let mut arr = rec.array((0..n as u64).collect());
                oblivious_shuffle(&rec, &mut arr, &mut rng);
                let order: Vec<u64> = (0..n).map(|i| arr.read(i)).collect();
                *counts.entry(order).or_insert(0u64) += 1;
            }
            assert_eq!(counts.len(), perms, "n={n}: some permutation never occurred");
            let expect = trials as f64 / perms as f64;
            let chi2: f64 =
                counts.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
            assert!(chi2 < chi2_crit(perms - 1), "n={n}: chi2 {chi2}");
        }
    }

    #[test]
    fn oram_read_write_semantics() {
        let rec = TraceRecorder::counting_only();
        let mut oram = LinearScanOram::new(&rec, vec![0u64; 8]);
        oram.write(3, 42);
        assert_eq!(oram.read(3), 42);
        assert_eq!(oram.read(0), 0);
        let old = oram.update(3, |v| v + 1);
        assert_eq!(old, 42);
        assert_eq!(oram.read(3), 43);
    }

    #[test]
    fn oram_access_cost_is_2k_and_trace_ignores_index() {
        let k = 8;
        let run = |i: usize| {
            let (_, trace) = TraceRecorder::capture(|rec| {
                let mut oram = LinearScanOram::new(rec, vec![0u64; k]);
                oram.read(i);
            });
            trace
        };
        let t3 = run(3);
        let t0 = run(0);
        assert_eq!(t3.len(), 2 * k);
        assert_eq!(t3.to_text(), t0.to_text());
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn oram_out_of_bounds() {
        let rec = TraceRecorder::new();
        let mut oram = LinearScanOram::new(&rec, vec![0u64; 4]);
        oram.read(4);
    }
}
