//! Time-velocity decoder: reject or round-trip, never panic. The parser
//! also rebuilds the metric, so inadmissible orders in the header are
//! exercised here too.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(u) = diffeo::io::parse_tvel(data) else {
        return;
    };
    let bytes = diffeo::io::encode_tvel(&u);
    let v = diffeo::io::parse_tvel(&bytes).expect("re-encoded TVEL must parse");
    assert_eq!(v.time_grid(), u.time_grid());
    assert_eq!(v.metric().order(), u.metric().order());
    assert_eq!(v.fields().len(), u.fields().len());
    for (a, b) in u.fields().iter().zip(v.fields()) {
        for c in 0..u.grid().dim() {
            assert_eq!(a.component(c), b.component(c));
        }
    }
});
