#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::objective::load_model;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = load_model(data) {
        assert!(model.bias.is_finite());
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }
});
