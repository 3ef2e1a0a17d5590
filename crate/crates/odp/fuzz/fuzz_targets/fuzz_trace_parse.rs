#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = odp::extmem::AccessTrace::parse(text) {
        // accepted traces must round-trip losslessly
        let reprinted = trace.to_text();
        let reparsed = odp::extmem::AccessTrace::parse(&reprinted).expect("round trip");
        assert_eq!(trace, reparsed);
    }
});
