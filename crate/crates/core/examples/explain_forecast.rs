//! Per-window explanation and an activation timeline.
//!
//! `cargo run --release -p protots --example explain_forecast`

use protots::data::{synth_generate, SynthConfig};
use protots::evaluation::{activation_report, explain};
use protots::model::{ModelConfig, ProtoTsModel};
use protots::trainer::{staged_train, TrainConfig, TrainData};

fn main() -> protots::Result<()> {
    let out = synth_generate(&SynthConfig { periods: 60, ..Default::default() }, 4)?;
    let (norm, data) = TrainData::prepare(&out.bundle, &out.schema, 1);
    let mc = ModelConfig { n_roots: 4, ..Default::default() };
    let mut model = ProtoTsModel::init(mc, out.schema.clone(), norm, 4)?;
    staged_train(&mut model, &data, &TrainConfig { lr: 1e-2, max_epochs: 8, ..Default::default() })?;

    let w = &data.test[0];
    let e = explain(&model, w)?;
    println!("window at row {} (phase {}):", e.instance, e.phase0);
    for c in &e.contributions {
        println!("  leaf {} weight {:.3} first steps {:?}", c.leaf, c.weight, &c.curve[..3]);
    }
    let max_residual = e.residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    println!("  contributions sum to the forecast within {max_residual:.1e}");

    let timeline = activation_report(&model, &data.test, 2)?;
    for entry in timeline.entries.iter().step_by(24).take(5) {
        println!("row {:>5}: {:?}", entry.instance, entry.leaves);
    }
    let csv = timeline.to_csv();
    println!("CSV export has {} lines", csv.lines().count());
    Ok(())
}
