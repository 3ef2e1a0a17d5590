//! Count-min frequency oracle: the sketch lives in private memory, so the
//! build trace is the input pass alone; the whole table is released after
//! adding Laplace noise to every cell.

use rand::{Rng, RngExt};

use crate::dataset::Database;
use crate::extmem::{PrivateMemoryMeter, TraceRecorder};
use crate::noise::{sample_laplace, PrivacyParams};
use crate::sketches::{cm_depth, cm_width, CountMinSketch, ReleasedCountMin};

use super::{load_input, NoiseMode, QueryError};

#[derive(Debug, Clone, PartialEq)]
pub struct FreqOracle {
    pub released: ReleasedCountMin,
    pub laplace_draws: u64,
}

/// Builds a count-min sketch in one input pass (zero non-input accesses),
/// then adds Lap(2d/epsilon) to every cell before release: one record
/// touches d cells in each neighboring database, so the released table has
/// L1 sensitivity 2d under same-size neighbors.
pub fn freq_oracle_build(
    rec: &TraceRecorder,
    db: &Database,
    alpha: f64,
    theta: f64,
    params: PrivacyParams,
    mode: NoiseMode,
    rng: &mut impl Rng,
    meter: &mut PrivateMemoryMeter,
) -> Result<FreqOracle, QueryError> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(QueryError::BadAlpha(alpha));
    }
    if !(0.0 < theta && theta < 1.0) {
        return Err(QueryError::BadTheta(theta));
    }
    let (w, d) = (cm_width(alpha), cm_depth(theta));
    let sketch_seed: u64 = rng.random();
    let mut sketch = CountMinSketch::new(w, d, sketch_seed);
    sketch.charge(meter);
    let input = load_input(rec, db);
    for j in 0..db.len() {
        let cell = input.read(j);
        sketch.update(cell[1]);
    }
    let scale = 2.0 * d as f64 / params.epsilon;
    let mut laplace_draws = 0u64;
    let released = sketch.release_with(|v| {
        let noise = match mode {
            NoiseMode::ZeroNoise => 0.0,
            _ => {
                laplace_draws += 1;
                sample_laplace(scale, rng).expect("positive scale")
            }
        };
        v as f64 + noise
    });
    meter.free(sketch.words());
    Ok(FreqOracle { released, laplace_draws })
}
