#![no_main]
use libfuzzer_sys::fuzz_target;

use rankpipe::objective::{joint_loss, load_training_jsonl, LossConfig, ScoringModel};

fuzz_target!(|data: &[u8]| {
    if let Ok(windows) = load_training_jsonl(data) {
        // Anything the loader accepts must be usable by the objective.
        let cfg = LossConfig::default();
        for window in windows.iter().take(4) {
            let model = ScoringModel::zeros(window.dim());
            let scores = model.scores(window);
            let breakdown = joint_loss(&scores, window.gold_ranks(), &cfg).unwrap();
            assert!(breakdown.joint.is_finite());
        }
    }
});
