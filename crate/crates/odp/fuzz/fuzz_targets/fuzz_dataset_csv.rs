#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(db) = odp::dataset::parse_csv(text) {
        let reprinted = odp::dataset::to_csv(&db);
        let reparsed = odp::dataset::parse_csv(&reprinted).expect("round trip");
        assert_eq!(db, reparsed);
    }
});
