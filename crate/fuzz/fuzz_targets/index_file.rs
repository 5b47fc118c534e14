#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::retriever::{load_index, save_index};

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = load_index(data) {
        // Anything the loader accepts must round-trip.
        let mut buf = Vec::new();
        save_index(&index, &mut buf).unwrap();
        let reloaded = load_index(buf.as_slice()).unwrap();
        assert_eq!(index, reloaded);
    }
});
