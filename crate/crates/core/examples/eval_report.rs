//! Evaluation reports and the scenario comparison in every output format.
//!
//! `cargo run --release --example eval_report -- [text|csv|json]`

use wildlabel::eval::ReportFormat;
use wildlabel::simulate::{simulate, SimulationConfig};
use wildlabel::trainer::ScenarioKind;

fn main() -> wildlabel::Result<()> {
    let format: ReportFormat = std::env::args().nth(1).as_deref().unwrap_or("text").parse()?;
    let result = simulate(&SimulationConfig::imbalanced(0))?;
    println!("{}", result.report(ScenarioKind::NoiseModeledMix).render(format)?);
    println!("{}", result.comparison.render(format)?);
    Ok(())
}
