//! Runs the synthetic noisy-label benchmark for a few seeds and prints the
//! scenario accuracies plus the Fear/Disgust recalls.
//!
//! `cargo run --release --example simulate_benchmark -- [seeds] [--imbalanced]`

use std::time::Instant;

use wildlabel::simulate::{simulate, SimulationConfig};
use wildlabel::taxonomy::ExpressionLabel;
use wildlabel::trainer::ScenarioKind;

fn main() -> wildlabel::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.iter().find_map(|a| a.parse().ok()).unwrap_or(5);
    let imbalanced = args.iter().any(|a| a == "--imbalanced");

    for seed in 0..seeds {
        let config = if imbalanced {
            SimulationConfig::imbalanced(seed)
        } else {
            SimulationConfig::standard(seed)
        };
        let start = Instant::now();
        let report = simulate(&config)?;
        let acc = |s| report.accuracy(s);
        let recall = |s, l| report.report(s).recall_of(l).unwrap_or(0.0) * 100.0;
        println!(
            "seed {seed}: clean {:.2}  mix {:.2}  noisemix {:.2}  | fear {:.1}/{:.1}  disgust {:.1}/{:.1}  ({:.1?})",
            acc(ScenarioKind::CleanOnly),
            acc(ScenarioKind::NaiveMix),
            acc(ScenarioKind::NoiseModeledMix),
            recall(ScenarioKind::NaiveMix, ExpressionLabel::Fear),
            recall(ScenarioKind::NoiseModeledMix, ExpressionLabel::Fear),
            recall(ScenarioKind::NaiveMix, ExpressionLabel::Disgust),
            recall(ScenarioKind::NoiseModeledMix, ExpressionLabel::Disgust),
            start.elapsed(),
        );
    }
    Ok(())
}
