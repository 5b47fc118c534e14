#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::trec_io::parse_queries_jsonl;

fuzz_target!(|data: &[u8]| {
    let _ = parse_queries_jsonl(data);
});
