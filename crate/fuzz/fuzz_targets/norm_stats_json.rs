#![no_main]
use libfuzzer_sys::fuzz_target;
use plumeshift::normalization::NormStats;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = NormStats::from_json(text) {
        assert!(s.instr_max > 0.0 && s.instr_max.is_finite());
        let back = NormStats::from_json(&s.to_json()).expect("serialised stats parse");
        assert_eq!(back, s);
    }
});
