#![no_main]
use libfuzzer_sys::fuzz_target;
use plumeshift::cmft;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, grid)) = cmft::decode(data) {
        assert_eq!(grid.len(), w * h);
        let again = cmft::encode(w, h, &grid).expect("decoded tile re-encodes");
        let (w2, h2, back) = cmft::decode(&again).expect("re-encoded tile decodes");
        assert_eq!((w2, h2), (w, h));
        assert!(back
            .iter()
            .zip(&grid)
            .all(|(a, b)| a == b || (a.is_nan() && b.is_nan())));
    }
});
