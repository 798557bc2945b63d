//! Generate a planted-regime dataset, write it as CSV plus schema, read it
//! back and window it.
//!
//! `cargo run -p protots --example synth_dataset [out_dir]`

use std::path::PathBuf;

use protots::data::{load_csv, make_windows, synth_generate, write_csv, SynthConfig, VariableSchema};
use protots::io::write_json;

fn main() -> protots::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let cfg = SynthConfig {
        periods: 60,
        distractor_continuous: 1,
        distractor_discrete: 1,
        ..Default::default()
    };
    let out = synth_generate(&cfg, 11)?;
    let csv = dir.join("planted.csv");
    let schema_path = dir.join("planted_schema.json");
    write_csv(&csv, &out.bundle, &out.schema)?;
    write_json(&schema_path, &out.schema)?;

    let schema = VariableSchema::load(&schema_path)?;
    let bundle = load_csv(&csv, &schema)?;
    println!("{} rows, target `{}`", bundle.len(), schema.endogenous_name);
    for v in &schema.discrete_vars {
        println!("  discrete {} ({} values)", v.name, v.vocab_size);
    }
    for name in &schema.continuous_vars {
        println!("  continuous {name}");
    }
    let windows = make_windows(&bundle, &schema, 1);
    let w = &windows[0];
    println!(
        "{} windows; first starts at row {} with forecast phase {}",
        windows.len(),
        w.start,
        w.phase0
    );
    let mut counts = vec![0usize; cfg.regimes];
    for &r in &out.labels {
        counts[r] += 1;
    }
    println!("steps per regime: {counts:?}");
    Ok(())
}
