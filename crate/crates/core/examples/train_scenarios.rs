//! The three training regimes side by side on one synthetic dataset, with a
//! small MLP instead of the benchmark's affine model.
//!
//! Clean data trains alone; then clean plus query-labeled data naively; then
//! the same mix with the label-noise layer, whose matrix is estimated from
//! the clean pool's (true, query) pairs and refreshed during training.
//!
//! `cargo run --release --example train_scenarios`

use wildlabel::eval::{evaluate, ReportMeta};
use wildlabel::noisemodel::estimate_from_pairs;
use wildlabel::simulate::{generate, SimulationConfig};
use wildlabel::trainer::{self, ModelSpec, Phase, ScenarioKind};

fn main() -> wildlabel::Result<()> {
    let mut config = SimulationConfig::standard(11);
    config.model = ModelSpec::Mlp { input_dim: config.dims, hidden: 24 };
    let data = generate(&config);
    let pairs: Vec<_> = data.clean.iter().map(|s| s.label).zip(data.clean_noisy_labels.iter().copied()).collect();
    let estimate = estimate_from_pairs(&pairs, 1.0)?;
    println!("{} clean, {} noisy, {} test samples", data.clean.len(), data.noisy.len(), data.test.len());

    for scenario in ScenarioKind::ALL {
        let mut train = config.train.clone().with_scenario(scenario);
        if scenario == ScenarioKind::NoiseModeledMix {
            train.em_refresh_epochs = Some(1);
        }
        let mut model = config.model.build();
        let noise = (scenario == ScenarioKind::NoiseModeledMix).then_some(&estimate);
        let outcome = trainer::train(&data.clean, &data.noisy, noise, &mut model, &train)?;
        let meta = ReportMeta { scenario, model: "mlp24".into(), config_hash: train.hash() };
        let report = evaluate(&model, &data.test, meta)?;
        let phases: Vec<String> = [Phase::Pretrain, Phase::Main]
            .into_iter()
            .filter_map(|p| outcome.history.head_tail_means(p, 100).map(|(h, t)| format!("{p:?} loss {h:.3} -> {t:.3}")))
            .collect();
        println!("{:<36} accuracy {:6.2}%  {}", scenario.title(), report.accuracy, phases.join(", "));
        if let Some(q) = outcome.final_noise {
            println!("  refreshed matrix differs from the estimate by at most {:.3}", q.max_abs_diff(&estimate));
        }
    }
    Ok(())
}
