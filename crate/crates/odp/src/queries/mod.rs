//! The four obliviously differentially private query algorithms: distinct
//! count (sort-based and streaming), histogram (shuffle-based and
//! ORAM-based), heavy hitters, and the count-min frequency oracle.
//!
//! Each query owns its trace recorder and randomness tape; queries on
//! distinct recorders can run concurrently.

mod distinct;
mod freq_oracle;
mod heavy_hitters;
mod histogram;

pub use distinct::{
    distinct_sort_access_count, distinct_sort_odp, distinct_stream_odp, DistinctOutput,
};
pub use freq_oracle::{freq_oracle_build, FreqOracle};
pub use heavy_hitters::{
    heavy_hitters_access_count, heavy_hitters_odp, HeavyHitterEntry, HeavyHitterList,
};
pub use histogram::{
    histogram_odp, histogram_odp_access_count, histogram_oram, histogram_oram_access_count,
    naive_histogram, HistogramRun, NoisyHistogram,
};

use thiserror::Error;

use crate::dataset::{Database, DatasetError};
use crate::extmem::{ExternalArray, TraceRecorder};
use crate::noise::NoiseError;

/// Reserved type offsets: `domain + DUMMY_OFFSET` marks dummy padding
/// records, `domain + SENTINEL_OFFSET` marks sorting-network sentinels.
pub const DUMMY_OFFSET: u64 = 1;
pub const SENTINEL_OFFSET: u64 = 2;

/// Noise handling for a query run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Private operation: real Laplace noise, noise values not exposed.
    Standard,
    /// Real noise, and the drawn values are exposed on the output for
    /// harness cross-checks. Not private.
    Debug,
    /// All Laplace draws forced to zero (padding still applied). Not
    /// private; exists to enable exact oracle comparisons.
    ZeroNoise,
}

impl NoiseMode {
    pub fn is_private(self) -> bool {
        matches!(self, NoiseMode::Standard)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("k must satisfy 1 <= k <= n (k={k}, n={n})")]
    BadK { k: u64, n: u64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(
        "heavy-hitters precondition violated: n/k = {ratio} must exceed (tau/epsilon) ln m = {required}"
    )]
    HeavyHitterPrecondition { ratio: f64, required: f64 },
    #[error("tau must exceed 1, got {0}")]
    BadTau(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("theta must lie in (0, 1), got {0}")]
    BadTheta(f64),
}

/// Loads the database into a fresh external array of packed word-pair cells.
/// Allocation is not an access; the algorithm's input pass does the reads.
pub(crate) fn load_input(rec: &TraceRecorder, db: &Database) -> ExternalArray<[u64; 2]> {
    rec.array(db.records().iter().map(|r| r.pack()).collect())
}

/// Monotone map from f64 to u64 for sort keys (total order, negatives
/// included; inputs are never NaN).
pub(crate) fn f64_sort_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 { !bits } else { bits | (1 << 63) }
}
