#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::trec_io::parse_qrels;

fuzz_target!(|data: &[u8]| {
    if let Ok(qrels) = parse_qrels(data) {
        // Accepted qrels expose a consistent ideal-gain view per query.
        for qid in qrels.query_ids() {
            let gains = qrels.ideal_gains(qid);
            assert!(gains.windows(2).all(|w| w[0] >= w[1]));
        }
    }
});
