#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::trec_io::{parse_run, write_run};

// Parsing must never panic, and write ∘ parse must be idempotent: once a
// run has been normalized to the wire format, re-parsing and re-writing it
// reproduces the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(run) = parse_run(data) {
        let mut first = Vec::new();
        write_run(&run, "fuzz", &mut first).unwrap();
        let reparsed = parse_run(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_run(&reparsed, "fuzz", &mut second).unwrap();
        assert_eq!(first, second);
    }
});
