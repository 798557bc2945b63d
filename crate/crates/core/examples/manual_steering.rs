//! Expert edits without the HTTP layer: inspect the splitting rule, split a
//! chosen leaf, pin a pattern and retrain with it locked.
//!
//! `cargo run --release -p protots --example manual_steering`

use protots::data::{synth_generate, SynthConfig};
use protots::evaluation::evaluate;
use protots::model::{ModelConfig, ProtoTsModel};
use protots::prototypes::splitting_rule;
use protots::trainer::{train_stage, TrainConfig, TrainData, TrainReport};

fn main() -> protots::Result<()> {
    let synth = SynthConfig { periods: 60, ..Default::default() };
    let out = synth_generate(&synth, 5)?;
    let (norm, data) = TrainData::prepare(&out.bundle, &out.schema, 1);
    let mut model = ProtoTsModel::init(ModelConfig { n_roots: 3, ..Default::default() }, out.schema.clone(), norm, 5)?;
    let cfg = TrainConfig { lr: 1e-2, max_epochs: 6, ..Default::default() };
    let mut report = TrainReport::default();
    train_stage(&mut model, &data, &cfg, 0, &mut report, &mut |_| {})?;
    println!("root stage val MAE {:.4}", evaluate(&model, &data.val)?.mae);

    let (chosen, scores) = splitting_rule(&model, &data.train, 1, 50.0)?;
    for (i, leaf) in scores.leaves.iter().enumerate() {
        println!(
            "leaf {leaf}: {} instances, NormLoss {:.4}{}",
            scores.count[i],
            scores.norm_loss[i],
            if chosen.contains(leaf) { "  <- split" } else { "" }
        );
    }
    let target = *chosen.iter().next().expect("rule picks at least one leaf");
    let children = model.split(target, 2, 99)?;
    println!("split {target} into {children:?}");

    // Pin the first child to the regime-0 template, in normalized units.
    let template = out.templates[0].iter().map(|&v| model.normalizer.target.apply(v)).collect();
    model.tree.edit_pattern(children[0], template, true)?;
    let pinned = model.tree.node(children[0])?.pattern.clone();
    train_stage(&mut model, &data, &cfg, 1, &mut report, &mut |_| {})?;
    assert_eq!(model.tree.node(children[0])?.pattern, pinned);
    println!("after retraining val MAE {:.4}; pinned pattern unchanged", evaluate(&model, &data.val)?.mae);
    Ok(())
}
