#![no_main]
use libfuzzer_sys::fuzz_target;
use plumeshift::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let back = RunConfig::from_toml(&cfg.to_toml()).expect("serialised config parses");
        assert_eq!(back.hash(), cfg.hash());
    }
});
