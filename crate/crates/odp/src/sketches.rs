//! Private-memory streaming summaries: a KMV bottom-k distinct-count sketch
//! and a count-min frequency sketch.
//!
//! Both live entirely in private memory, so feeding them contributes zero
//! external access events. Sketch state serializes to a versioned binary
//! blob so a noisy count-min table can be released as an artifact.

use thiserror::Error;

use crate::extmem::PrivateMemoryMeter;

const BLOB_MAGIC: &[u8; 4] = b"ODPS";
const BLOB_VERSION: u16 = 1;
const KIND_KMV: u8 = 1;
const KIND_COUNT_MIN: u8 = 2;
const KIND_RELEASED_COUNT_MIN: u8 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit seeded mixing hash. Only statistical quality is contractual;
/// uniformity is exercised by the sketch estimation tests.
fn seeded_hash(seed: u64, item: u64) -> u64 {
    splitmix64(item ^ splitmix64(seed))
}

/// KMV capacity t = ceil(3 / alpha^2): relative error <= alpha with
/// constant probability at this size, within the Theta(1/alpha^2)-word
/// envelope downstream theorems consume.
pub fn kmv_capacity(alpha: f64) -> usize {
    (3.0 / (alpha * alpha)).ceil() as usize
}

/// Count-min width w = ceil(e / alpha).
pub fn cm_width(alpha: f64) -> usize {
    (std::f64::consts::E / alpha).ceil() as usize
}

/// Count-min depth d = ceil(ln(1 / theta)).
pub fn cm_depth(theta: f64) -> usize {
    (1.0 / theta).ln().ceil() as usize
}

/// Bottom-k distinct-count sketch: keeps the t smallest distinct 64-bit
/// hashes seen, O(t) words of private memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KmvSketch {
    capacity: usize,
    seed: u64,
    // sorted ascending; len <= capacity
    smallest: Vec<u64>,
}

impl KmvSketch {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity >= 2, "kmv capacity must be at least 2");
        KmvSketch { capacity, seed, smallest: Vec::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts `item`'s hash iff it is among the t smallest distinct hashes.
    pub fn update(&mut self, item: u64) {
        let h = seeded_hash(self.seed, item);
        if self.smallest.len() == self.capacity && h >= *self.smallest.last().unwrap() {
            return;
        }
        match self.smallest.binary_search(&h) {
            Ok(_) => {} // duplicate hash: same item (or a negligible collision)
            Err(pos) => {
                self.smallest.insert(pos, h);
                if self.smallest.len() > self.capacity {
                    self.smallest.pop();
                }
            }
        }
    }

    /// Distinct-count estimate: (t-1)/v_t when full, exact set size below
    /// capacity, 0 when empty.
    pub fn estimate(&self) -> f64 {
        if self.smallest.len() < self.capacity {
            return self.smallest.len() as f64;
        }
        let v_t = *self.smallest.last().unwrap() as f64 / 2f64.powi(64);
        (self.capacity as f64 - 1.0) / v_t
    }

    /// Private-memory footprint in words: the retained hashes plus a couple
    /// of scalars.
    pub fn words(&self) -> u64 {
        self.capacity as u64 + 2
    }

    pub fn charge(&self, meter: &mut PrivateMemoryMeter) {
        meter.alloc(self.words());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = blob_header(KIND_KMV);
        out.extend((self.capacity as u64).to_le_bytes());
        out.extend(self.seed.to_le_bytes());
        out.extend((self.smallest.len() as u64).to_le_bytes());
        for h in &self.smallest {
            out.extend(h.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SketchDecodeError> {
        let mut r = BlobReader::open(bytes, KIND_KMV)?;
        let capacity = r.u64()?;
        let seed = r.u64()?;
        let count = r.u64()?;
        if capacity < 2 || count > capacity {
            return Err(SketchDecodeError::Inconsistent);
        }
        r.expect_remaining(count, 8)?;
        let mut smallest = Vec::with_capacity(count as usize);
        for _ in 0..count {
            smallest.push(r.u64()?);
        }
        if !smallest.windows(2).all(|w| w[0] < w[1]) {
            return Err(SketchDecodeError::Inconsistent);
        }
        r.finish()?;
        Ok(KmvSketch { capacity: capacity as usize, seed, smallest })
    }
}

/// Count-min frequency sketch: d rows of w nonnegative counters, one seeded
/// hash per row. Point estimate is the min over rows and never underestimates
/// before noise is added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMinSketch {
    width: usize,
    depth: usize,
    seeds: Vec<u64>,
    table: Vec<u64>, // row-major, depth x width
}

impl CountMinSketch {
    pub fn new(width: usize, depth: usize, seed: u64) -> Self {
        assert!(width >= 1 && depth >= 1);
        let seeds = (0..depth as u64).map(|r| splitmix64(seed ^ r)).collect();
        CountMinSketch { width, depth, seeds, table: vec![0; width * depth] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn cell(&self, row: usize, item: u64) -> usize {
        row * self.width + (seeded_hash(self.seeds[row], item) % self.width as u64) as usize
    }

    pub fn update(&mut self, item: u64) {
        for row in 0..self.depth {
            let c = self.cell(row, item);
            self.table[c] += 1;
        }
    }

    pub fn query(&self, item: u64) -> u64 {
        (0..self.depth).map(|row| self.table[self.cell(row, item)]).min().unwrap()
    }

    /// Releases the table with `noise(cell_value)` applied to every cell.
    pub fn release_with(&self, mut noise: impl FnMut(u64) -> f64) -> ReleasedCountMin {
        ReleasedCountMin {
            width: self.width,
            depth: self.depth,
            seeds: self.seeds.clone(),
            cells: self.table.iter().map(|&v| noise(v)).collect(),
        }
    }

    pub fn words(&self) -> u64 {
        (self.width * self.depth + self.depth) as u64 + 2
    }

    pub fn charge(&self, meter: &mut PrivateMemoryMeter) {
        meter.alloc(self.words());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = blob_header(KIND_COUNT_MIN);
        encode_table_header(&mut out, self.width, self.depth, &self.seeds);
        for v in &self.table {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SketchDecodeError> {
        let mut r = BlobReader::open(bytes, KIND_COUNT_MIN)?;
        let (width, depth, seeds, cells) = decode_table(&mut r)?;
        let table = cells.into_iter().map(|bits| bits).collect();
        Ok(CountMinSketch { width, depth, seeds, table })
    }
}

/// Noisy count-min table as released to the data collector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedCountMin {
    width: usize,
    depth: usize,
    seeds: Vec<u64>,
    cells: Vec<f64>,
}

impl ReleasedCountMin {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn query(&self, item: u64) -> f64 {
        (0..self.depth)
            .map(|row| {
                let col = (seeded_hash(self.seeds[row], item) % self.width as u64) as usize;
                self.cells[row * self.width + col]
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = blob_header(KIND_RELEASED_COUNT_MIN);
        encode_table_header(&mut out, self.width, self.depth, &self.seeds);
        for v in &self.cells {
            out.extend(v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SketchDecodeError> {
        let mut r = BlobReader::open(bytes, KIND_RELEASED_COUNT_MIN)?;
        let (width, depth, seeds, cells) = decode_table(&mut r)?;
        let cells = cells.into_iter().map(f64::from_bits).collect();
        Ok(ReleasedCountMin { width, depth, seeds, cells })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SketchDecodeError {
    #[error("not a sketch blob (bad magic)")]
    BadMagic,
    #[error("unsupported blob version {0}")]
    BadVersion(u16),
    #[error("unexpected sketch kind {got}, wanted {want}")]
    WrongKind { got: u8, want: u8 },
    #[error("blob truncated")]
    Truncated,
    #[error("trailing bytes after sketch payload")]
    TrailingBytes,
    #[error("inconsistent sketch fields")]
    Inconsistent,
}

fn blob_header(kind: u8) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(BLOB_MAGIC);
    out.extend(BLOB_VERSION.to_le_bytes());
    out.push(kind);
    out
}

fn encode_table_header(out: &mut Vec<u8>, width: usize, depth: usize, seeds: &[u64]) {
    out.extend((width as u64).to_le_bytes());
    out.extend((depth as u64).to_le_bytes());
    for s in seeds {
        out.extend(s.to_le_bytes());
    }
}

struct BlobReader<'a> {
    rest: &'a [u8],
}

impl<'a> BlobReader<'a> {
    fn open(bytes: &'a [u8], want_kind: u8) -> Result<Self, SketchDecodeError> {
        if bytes.len() < 7 {
            return Err(SketchDecodeError::Truncated);
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(SketchDecodeError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != BLOB_VERSION {
            return Err(SketchDecodeError::BadVersion(version));
        }
        let kind = bytes[6];
        if kind != want_kind {
            return Err(SketchDecodeError::WrongKind { got: kind, want: want_kind });
        }
        Ok(BlobReader { rest: &bytes[7..] })
    }

    fn u64(&mut self) -> Result<u64, SketchDecodeError> {
        if self.rest.len() < 8 {
            return Err(SketchDecodeError::Truncated);
        }
        let (head, tail) = self.rest.split_at(8);
        self.rest = tail;
        Ok(u64::from_le_bytes(head.try_into().unwrap()))
    }

    /// Guards length-prefixed reads: the declared element count must fit in
    /// the remaining bytes before anything is allocated.
    fn expect_remaining(&self, count: u64, elem_size: u64) -> Result<(), SketchDecodeError> {
        let need = count.checked_mul(elem_size).ok_or(SketchDecodeError::Inconsistent)?;
        if (self.rest.len() as u64) < need {
            return Err(SketchDecodeError::Truncated);
        }
        Ok(())
    }

    fn finish(self) -> Result<(), SketchDecodeError> {
        if self.rest.is_empty() { Ok(()) } else { Err(SketchDecodeError::TrailingBytes) }
    }
}

fn decode_table(
    r: &mut BlobReader<'_>,
) -> Result<(usize, usize, Vec<u64>, Vec<u64>), SketchDecodeError> {
    let width = r.u64()?;
    let depth = r.u64()?;
    if width == 0 || depth == 0 {
        return Err(SketchDecodeError::Inconsistent);
    }
    let cells_len = width.checked_mul(depth).ok_or(SketchDecodeError::Inconsistent)?;
    r.expect_remaining(depth + cells_len, 8)?;
    let mut seeds = Vec::with_capacity(depth as usize);
    for _ in 0..depth {
        seeds.push(r.u64()?);
    }
    let mut cells = Vec::with_capacity(cells_len as usize);
    for _ in 0..cells_len {
        cells.push(r.u64()?);
    }
    Ok((width as usize, depth as usize, seeds, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn kmv_duplicate_update_is_a_noop() {
        let mut s = KmvSketch::new(8, 1);
        s.update(42);
        let before = s.clone();
        s.update(42);
        assert_eq!(s, before);
    }

    #[test]
    fn kmv_exact_below_capacity() {
        let mut s = KmvSketch::new(64, 7);
        assert_eq!(s.estimate(), 0.0);
        for item in 0..50u64 {
            s.update(item);
            s.update(item); // repeats never change the estimate
        }
        assert_eq!(s.estimate(), 50.0);
    }

    #[test]
    fn kmv_monte_carlo_estimate_within_alpha() {
        // n* = 1e4 distinct items, t = ceil(3/alpha^2) at alpha = 0.1.
        // Oracle is the exact distinct count.
        let alpha = 0.1;
        let t = kmv_capacity(alpha);
        assert_eq!(t, 300);
        let n_star = 10_000u64;
        let trials = 1000;
        let mut within = 0;
        for seed in 0..trials {
            let mut s = KmvSketch::new(t, seed);
            for item in 0..n_star {
                s.update(item);
            }
            let est = s.estimate();
            if (est - n_star as f64).abs() <= alpha * n_star as f64 {
                within += 1;
            }
        }
        assert!(within >= 900, "only {within}/{trials} trials within (1±0.1)n*");
    }

    #[test]
    fn kmv_deterministic_under_seed() {
        let stream: Vec<u64> = (0..1000).map(|i| i * 17 % 251).collect();
        let mut a = KmvSketch::new(32, 5);
        let mut b = KmvSketch::new(32, 5);
        for &x in &stream {
            a.update(x);
            b.update(x);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn cm_never_underestimates() {
        let mut c = CountMinSketch::new(64, 4, 9);
        for _ in 0..3 {
            c.update(77);
        }
        assert!(c.query(77) >= 3);
        // a never-inserted item is bounded by total insertions
        assert!(c.query(1000) <= 3);
    }

    #[test]
    fn cm_query_monotone_as_stream_extends() {
        let mut c = CountMinSketch::new(32, 3, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut last = 0;
        for _ in 0..500 {
            c.update(rng.random_range(0..100u64));
            let q = c.query(42);
            assert!(q >= last);
            last = q;
        }
    }

    fn zipf_stream(n: usize, s: f64, domain: u64, rng: &mut impl Rng) -> Vec<u64> {
        let weights: Vec<f64> = (1..=domain).map(|i| (i as f64).powf(-s)).collect();
        let total: f64 = weights.iter().sum();
        let mut cdf = Vec::with_capacity(domain as usize);
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                cdf.partition_point(|&c| c < u) as u64 + 1
            })
            .collect()
    }

    #[test]
    fn cm_overestimate_bound_on_zipf_stream() {
        // Standard count-min guarantee: overestimate <= alpha N for at least
        // a 1 - e^{-d} fraction of queried items, vs an exact-count oracle.
        let alpha = 0.005;
        let (w, d) = (cm_width(alpha), cm_depth(0.01));
        assert_eq!((w, d), (544, 5));
        let n = 100_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let stream = zipf_stream(n, 1.2, 5000, &mut rng);
        let mut exact = std::collections::HashMap::new();
        let mut c = CountMinSketch::new(w, d, 17);
        for &x in &stream {
            c.update(x);
            *exact.entry(x).or_insert(0u64) += 1;
        }
        let bound = alpha * n as f64;
        let ok = exact.iter().filter(|&(&i, &cnt)| {
            let q = c.query(i);
            assert!(q >= cnt, "underestimate");
            (q - cnt) as f64 <= bound
        });
        let rate = ok.count() as f64 / exact.len() as f64;
        assert!(rate >= 1.0 - (-(d as f64)).exp(), "rate {rate}");
    }

    #[test]
    fn sketch_updates_generate_no_trace_events() {
        use crate::extmem::TraceRecorder;
        let (_, trace) = TraceRecorder::capture(|_rec| {
            let mut s = KmvSketch::new(16, 0);
            let mut c = CountMinSketch::new(16, 2, 0);
            for i in 0..100 {
                s.update(i);
                c.update(i);
            }
            (s.estimate(), c.query(5))
        });
        assert!(trace.is_empty());
    }

    #[test]
    fn kmv_memory_within_meter() {
        let t = 300;
        let mut meter = PrivateMemoryMeter::new(t as u64 + 8);
        let s = KmvSketch::new(t, 1);
        s.charge(&mut meter);
        assert!(meter.compliant());
    }

    #[test]
    fn blob_rejects_garbage() {
        assert_eq!(KmvSketch::decode(b"nope"), Err(SketchDecodeError::Truncated));
        assert_eq!(
            KmvSketch::decode(b"XXXX\x01\x00\x01"),
            Err(SketchDecodeError::BadMagic)
        );
        let mut blob = KmvSketch::new(4, 1).encode();
        blob[6] = KIND_COUNT_MIN;
        assert!(matches!(
            KmvSketch::decode(&blob),
            Err(SketchDecodeError::WrongKind { .. })
        ));
        // declared count far larger than the payload must fail before allocating
        let mut huge = blob_header(KIND_KMV);
        huge.extend(4u64.to_le_bytes());
        huge.extend(0u64.to_le_bytes());
        huge.extend(u64::MAX.to_le_bytes());
        assert!(KmvSketch::decode(&huge).is_err());
    }

    proptest! {
        #[test]
        fn kmv_blob_round_trips(items in proptest::collection::vec(any::<u64>(), 0..200), seed in any::<u64>()) {
            let mut s = KmvSketch::new(16, seed);
            for x in items {
                s.update(x);
            }
            prop_assert_eq!(KmvSketch::decode(&s.encode()).unwrap(), s);
        }

        #[test]
        fn released_cm_blob_round_trips(items in proptest::collection::vec(any::<u64>(), 0..100)) {
            let mut c = CountMinSketch::new(8, 3, 5);
            for x in items {
                c.update(x);
            }
            let released = c.release_with(|v| v as f64 + 0.5);
            prop_assert_eq!(ReleasedCountMin::decode(&released.encode()).unwrap(), released.clone());
            prop_assert_eq!(CountMinSketch::decode(&c.encode()).unwrap(), c);
        }
    }
}
