//! Grid-field decoder: arbitrary bytes must be rejected cleanly, and any
//! accepted payload must survive an encode/parse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok((grid, planes)) = diffeo::io::parse_sgf(data) else {
        return;
    };
    let views: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    let bytes = diffeo::io::encode_sgf(&grid, &views);
    let (g2, p2) = diffeo::io::parse_sgf(&bytes).expect("re-encoded SGF must parse");
    assert_eq!(g2.sizes(), grid.sizes());
    assert_eq!(g2.lengths(), grid.lengths());
    assert_eq!(p2, planes);
});
