//! Landmark CSV reader: reject or round-trip. Row ids are regenerated on
//! encode, so equality is on the parsed content, not the raw bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(lf) = diffeo::io::parse_landmarks(data) else {
        return;
    };
    let text = diffeo::io::encode_landmarks(lf.dim, &lf.positions, lf.momenta.as_deref());
    let again =
        diffeo::io::parse_landmarks(text.as_bytes()).expect("re-encoded landmarks must parse");
    assert_eq!(again, lf);
});
