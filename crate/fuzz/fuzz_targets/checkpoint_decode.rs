#![no_main]
use libfuzzer_sys::fuzz_target;
use plumeshift::classifier::ModelCheckpoint;
use plumeshift::translation::CycleGanCheckpoint;
use plumeshift_nn::Container;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        let again = Container::decode(&c.encode()).expect("re-encoded container decodes");
        assert_eq!(again.encode(), c.encode());
    }
    let _ = ModelCheckpoint::decode(data);
    let _ = CycleGanCheckpoint::decode(data);
});
