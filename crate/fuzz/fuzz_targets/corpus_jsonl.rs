#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::trec_io::parse_corpus_jsonl;

fuzz_target!(|data: &[u8]| {
    for doc in parse_corpus_jsonl(data) {
        match doc {
            Ok(doc) => {
                assert!(!doc.id().is_empty());
                assert!(!doc.id().chars().any(char::is_whitespace));
            }
            // The stream stops at the first error.
            Err(_) => break,
        }
    }
});
