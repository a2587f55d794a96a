//! Shared fixtures for the benchmarks.

use y2net_core::synth::{synth_bundles, SynthConfig, TalkType};
use y2net_core::{FrameConfig, Fusion, PfInput, Signal, Y2NetConfig, YNetConfig};

/// One second of synthetic double talk: `(x, y)`.
pub fn double_talk(seconds: f64) -> (Signal, Signal) {
    let cfg = SynthConfig {
        n_utterances: 1,
        seed: 11,
        duration_s: seconds,
        talk: Some(TalkType::Double),
        ..SynthConfig::default()
    };
    let (_, b) = synth_bundles(&cfg).expect("synthetic corpus").remove(0);
    (b.x, b.y)
}

/// Two-stage model with `filters` maps in both Y-Nets.
pub fn two_stage(filters: usize) -> Y2NetConfig {
    let net = YNetConfig::new(filters, Fusion::Ef);
    Y2NetConfig::TwoStage { frame: FrameConfig::default(), aec: net, pf: net, pf_input: PfInput::Dhat }
}
