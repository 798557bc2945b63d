//! Staged training on a small dataset, then a checkpoint round trip.
//!
//! `cargo run --release -p protots --example train_and_checkpoint`

use protots::checkpoint::ModelCheckpoint;
use protots::data::{synth_generate, SynthConfig};
use protots::encoder::EncoderConfig;
use protots::evaluation::evaluate;
use protots::model::{ModelConfig, ProtoTsModel};
use protots::trainer::{staged_train, SplitTrigger, StagePlan, TrainConfig, TrainData};

fn main() -> protots::Result<()> {
    let out = synth_generate(&SynthConfig { periods: 80, ..Default::default() }, 2)?;
    let (norm, data) = TrainData::prepare(&out.bundle, &out.schema, 1);
    let mc = ModelConfig {
        encoder: EncoderConfig { d: 16, d_bottle: 4, ..Default::default() },
        n_roots: 4,
        ..Default::default()
    };
    let mut model = ProtoTsModel::init(mc, out.schema.clone(), norm, 2)?;
    let cfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 10,
        seed: 2,
        stages: vec![StagePlan { trigger: SplitTrigger::Rule { k: 1, alpha: 50.0 }, m: 2 }],
        ..Default::default()
    };
    let report = staged_train(&mut model, &data, &cfg)?;
    for e in &report.epochs {
        println!("stage {} epoch {:>2}: train {:.4} val MAE {:.4}", e.stage, e.epoch, e.train_loss, e.val_mae);
    }
    for s in &report.splits {
        println!("split after epoch {}: {:?} -> {:?}", s.after_epoch, s.parents, s.children);
    }

    let path = std::env::temp_dir().join("protots_example.ckpt");
    ModelCheckpoint::new(model.clone(), Some(cfg)).save(&path)?;
    let loaded = ModelCheckpoint::load(&path)?;
    let before = evaluate(&model, &data.test)?;
    let after = evaluate(&loaded.model, &data.test)?;
    println!(
        "test MAE {:.6} before save, {:.6} after load ({} bytes)",
        before.mae,
        after.mae,
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );
    Ok(())
}
