#![no_main]
use arbitrary::Arbitrary;
use libfuzzer_sys::fuzz_target;

use rankpipe::rerank::{parse_permutation, RepairPolicy};
use rankpipe::types::IdentifierScheme;

#[derive(Arbitrary, Debug)]
struct Input {
    text: String,
    window_size: u8,
    strict: bool,
}

// The generation parser faces raw model output. Under repair it must
// always produce a full valid permutation; under strict it must never
// panic.
fuzz_target!(|input: Input| {
    let k = 1 + (input.window_size as usize) % 26;
    let scheme = IdentifierScheme::uppercase(26).unwrap();
    let policy = if input.strict { RepairPolicy::Strict } else { RepairPolicy::Repair };

    match parse_permutation(&input.text, k, &scheme, policy) {
        Ok((perm, _notes)) => {
            assert_eq!(perm.len(), k);
            let mut seen = vec![false; k];
            for &p in perm.order() {
                assert!(p < k && !seen[p]);
                seen[p] = true;
            }
        }
        Err(_) => assert!(input.strict, "repair mode must never fail"),
    }
});
