//! Config reader: lexing and resolution must be total over arbitrary UTF-8.
//! Resolution is tried for every subcommand since each consumes a different
//! key set.

#![no_main]

use diffeo::config::{Command, RawConfig, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(raw) = RawConfig::parse(text) else {
        return;
    };
    for cmd in [
        Command::Flow,
        Command::Distance,
        Command::Register,
        Command::Karcher,
        Command::Landmarks,
        Command::Selfcheck,
    ] {
        let _ = RunConfig::build(cmd, raw.clone());
    }
});
