#![no_main]
use libfuzzer_sys::fuzz_target;
use plumeshift::manifest::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::parse(text) {
        let again = DatasetManifest::parse(&m.to_tsv()).expect("serialised manifest parses");
        assert_eq!(again.to_tsv(), m.to_tsv());
    }
});
