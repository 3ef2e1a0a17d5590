#![no_main]

use libfuzzer_sys::fuzz_target;
use odp::sketches::{CountMinSketch, KmvSketch, ReleasedCountMin};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = KmvSketch::decode(data) {
        assert_eq!(KmvSketch::decode(&s.encode()).expect("round trip"), s);
    }
    if let Ok(s) = CountMinSketch::decode(data) {
        assert_eq!(CountMinSketch::decode(&s.encode()).expect("round trip"), s);
    }
    if let Ok(s) = ReleasedCountMin::decode(data) {
        assert_eq!(ReleasedCountMin::decode(&s.encode()).expect("round trip"), s);
    }
});
