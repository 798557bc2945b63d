//! Staged training: roots to convergence, rule-driven splits, refinement.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_windows, DatasetBundle, Normalizer, Split, VariableSchema, WindowInstance};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricReport};
use crate::model::ProtoTsModel;
use crate::prototypes::{splitting_rule, NodeId, SplitScores};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var, PROB_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

/// Which leaves a split round refines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitTrigger {
    /// Loss attribution over the top-`k` leaves, refining the top `alpha` percent.
    Rule { k: usize, alpha: f64 },
    /// An explicit expert-chosen set.
    Leaves { ids: Vec<NodeId> },
    AllLeaves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub trigger: SplitTrigger,
    /// Children per split leaf. Searched over {2, 3}.
    pub m: usize,
}

/// Training hyperparameters.
///
/// Search ranges used for tuning: fusion blocks in {1, 2, 3}, model
/// dimension `d` in {32, 64, 128, 256, 512}, initial prototypes in
/// {6, 8, 12}, tree depth in {1, 2, 3} (one split round per extra level),
/// children per split in {2, 3}. At most 30 epochs per stage with early
/// stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation MAE improvement before a stage stops.
    pub patience: usize,
    pub batch_size: usize,
    /// Entropy weight on the root weights.
    pub lambda: f64,
    /// Also regularize the entropy of every sibling group.
    pub entropy_all_groups: bool,
    pub seed: u64,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Split rounds, each followed by another training stage.
    pub stages: Vec<StagePlan>,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 30,
            patience: 5,
            batch_size: 32,
            lambda: 0.01,
            entropy_all_groups: false,
            seed: 0,
            clip_norm: 10.0,
            stages: vec![],
            loss_kind: LossKind::L1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite value >= 0");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be >= 0");
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.m < 2 {
                return Err(Error::Config(format!("stages[{i}].m must be >= 2")));
            }
            if let SplitTrigger::Rule { k, alpha } = s.trigger {
                if k == 0 || !(alpha > 0.0 && alpha <= 100.0) {
                    return Err(Error::Config(format!(
                        "stages[{i}] needs k >= 1 and 0 < alpha <= 100"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Windows for each partition.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<WindowInstance>,
    pub val: Vec<WindowInstance>,
    pub test: Vec<WindowInstance>,
}

impl TrainData {
    /// Windows every partition of an already-normalized bundle.
    pub fn from_bundle(bundle: &DatasetBundle, schema: &VariableSchema, stride: usize) -> Self {
        Self {
            train: split_windows(bundle, schema, Split::Train, stride),
            val: split_windows(bundle, schema, Split::Val, stride),
            test: split_windows(bundle, schema, Split::Test, stride),
        }
    }

    /// Fits a normalizer on the training rows, then windows every partition
    /// of the normalized bundle.
    pub fn prepare(bundle: &DatasetBundle, schema: &VariableSchema, stride: usize) -> (Normalizer, Self) {
        let norm = Normalizer::fit(bundle);
        let data = Self::from_bundle(&norm.apply(bundle), schema, stride);
        (norm, data)
    }
}

/// Per-instance objective: forecast error plus `-lambda Σ f ln f` on the
/// root weights.
pub fn loss(pred: &[f64], target: &[f64], root_weights: &[f64], lambda: f64, kind: LossKind) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} steps, target {}",
            pred.len(),
            target.len()
        )));
    }
    let err: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| match kind {
            LossKind::L1 => (a - b).abs(),
            LossKind::L2 => (a - b) * (a - b),
        })
        .sum();
    let plogp: f64 = root_weights.iter().map(|&f| f * f.max(PROB_CLAMP).ln()).sum();
    Ok(err - lambda * plogp)
}

/// Records the batch-mean objective on `tape`. The returned vars are the
/// parameter leaves in [`ProtoTsModel::param_values`] order.
pub fn batch_objective(
    model: &ProtoTsModel,
    tape: &mut Tape,
    batch: &[WindowInstance],
    cfg: &TrainConfig,
) -> Result<(Var, Vec<Var>)> {
    batch_objective_with(model, tape, batch, cfg, true)
}

/// Value of the batch-mean objective without recording gradients.
pub fn objective(model: &ProtoTsModel, batch: &[WindowInstance], cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (l, _) = batch_objective_with(model, &mut tape, batch, cfg, false)?;
    Ok(tape.value(l).data()[0])
}

fn batch_objective_with(
    model: &ProtoTsModel,
    tape: &mut Tape,
    batch: &[WindowInstance],
    cfg: &TrainConfig,
    trainable: bool,
) -> Result<(Var, Vec<Var>)> {
    if batch.is_empty() {
        return Err(Error::Contract("objective of an empty batch".into()));
    }
    let fwd = model.forward(tape, batch, trainable)?;
    let target: Vec<f64> = batch.iter().flat_map(|w| w.y_target.iter().copied()).collect();
    let err = match cfg.loss_kind {
        LossKind::L1 => tape.abs_diff_sum(fwd.prediction, &target)?,
        LossKind::L2 => tape.sq_diff_sum(fwd.prediction, &target)?,
    };
    let mut total = err;
    if cfg.lambda > 0.0 {
        let mut groups = vec![fwd.root_weights];
        if cfg.entropy_all_groups {
            groups.extend(&fwd.child_weights);
        }
        for g in groups {
            let plogp = tape.plogp_sum(g);
            let term = tape.scale(plogp, -cfg.lambda);
            total = tape.add(total, term)?;
        }
    }
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    let mut vars = fwd.encoder.vars.clone();
    vars.push(fwd.mu);
    vars.push(fwd.patterns);
    Ok((mean, vars))
}

/// Adam with per-entry update masks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![],
            v: vec![],
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], masks: &[Option<Vec<bool>>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let mask = masks.get(i).and_then(|m| m.as_ref());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                if mask.is_some_and(|mk| !mk[j]) {
                    continue;
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    /// Global, 1-based, increasing across stages.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub first_epoch: usize,
    pub epochs: usize,
    pub n_leaves: usize,
    /// Validation MAE before the stage's first update.
    pub initial_val_mae: f64,
    /// Validation MAE of the restored best parameters.
    pub best_val_mae: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    /// The stage that trains the new children.
    pub stage: usize,
    /// Epochs completed before the split.
    pub after_epoch: usize,
    pub m: usize,
    pub parents: Vec<NodeId>,
    pub children: Vec<Vec<NodeId>>,
    pub seeds: Vec<u64>,
    pub scores: Option<SplitScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stages: Vec<StageSummary>,
    pub splits: Vec<SplitEvent>,
    pub test: Option<MetricReport>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_maes(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_mae).collect()
    }
}

/// Progress notification after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub stage: usize,
    pub completed_epochs: usize,
    /// Upper bound on epochs over the whole run.
    pub planned_epochs: usize,
}

pub type ProgressFn<'a> = &'a mut dyn FnMut(Progress);

fn no_progress(_: Progress) {}

/// Trains the current tree for one stage and restores the parameters with
/// the best validation MAE, counting the starting point as a candidate.
pub fn train_stage(
    model: &mut ProtoTsModel,
    data: &TrainData,
    cfg: &TrainConfig,
    stage: usize,
    report: &mut TrainReport,
    progress: ProgressFn,
) -> Result<StageSummary> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation windows".into()));
    }
    let planned = cfg.max_epochs * (cfg.stages.len() + 1);
    let first_epoch = report.epochs.len() + 1;
    let initial_val = evaluate(model, &data.val)?.mae;
    let mut best = (initial_val, model.param_values(), None);
    let mut since_best = 0;
    let mut adam = Adam::new(cfg.lr);
    let masks = model.update_masks();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = 0;

    for e in 1..=cfg.max_epochs {
        let epoch = report.epochs.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[stage as u64, e as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<WindowInstance> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let mut tape = Tape::new();
            let (l, vars) = batch_objective(model, &mut tape, &batch, cfg)?;
            let lv = tape.value(l).data()[0];
            let mut params = model.param_values();
            if !lv.is_finite() {
                let norm = params.iter().map(|p| p.norm_sq()).sum::<f64>().sqrt();
                return Err(Error::NonFinite(format!(
                    "loss {lv} at stage {stage}, epoch {epoch}, batch {b}; parameter norm {norm:.6e}"
                )));
            }
            tape.backward(l)?;
            let mut grads: Vec<Tensor> = vars
                .iter()
                .zip(&params)
                .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut params, &grads, &masks);
            model.set_param_values(&params)?;
            total += lv * batch.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let val_mae = evaluate(model, &data.val)?.mae;
        if !val_mae.is_finite() {
            return Err(Error::NonFinite(format!("validation MAE at stage {stage}, epoch {epoch}")));
        }
        report.epochs.push(EpochRecord {
            stage,
            epoch,
            train_loss,
            val_mae,
        });
        epochs = e;
        log::info!("stage {stage} epoch {epoch}: train {train_loss:.6} val MAE {val_mae:.6}");
        progress(Progress {
            stage,
            completed_epochs: epoch,
            planned_epochs: planned,
        });
        if val_mae < best.0 {
            best = (val_mae, model.param_values(), Some(epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.set_param_values(&best.1)?;
    let summary = StageSummary {
        stage,
        first_epoch,
        epochs,
        n_leaves: model.tree.leaves().len(),
        initial_val_mae: initial_val,
        best_val_mae: best.0,
        best_epoch: best.2,
    };
    report.stages.push(summary.clone());
    Ok(summary)
}

fn apply_split_round(
    model: &mut ProtoTsModel,
    data: &TrainData,
    cfg: &TrainConfig,
    round: usize,
    after_epoch: usize,
) -> Result<SplitEvent> {
    let plan = &cfg.stages[round - 1];
    let (parents, scores): (BTreeSet<NodeId>, _) = match &plan.trigger {
        SplitTrigger::Rule { k, alpha } => {
            let (set, s) = splitting_rule(model, &data.train, *k, *alpha)?;
            (set, Some(s))
        }
        SplitTrigger::Leaves { ids } => {
            for id in ids {
                if id.0 >= model.tree.nodes.len() || !model.tree.nodes[id.0].is_leaf() {
                    return Err(Error::Contract(format!("prototype {id} is not a leaf")));
                }
            }
            (ids.iter().copied().collect(), None)
        }
        SplitTrigger::AllLeaves => (model.tree.leaves().into_iter().collect(), None),
    };
    if parents.is_empty() {
        log::warn!("split round {round} selected no leaves");
    }
    let mut children = Vec::new();
    let mut seeds = Vec::new();
    for &p in &parents {
        let s = seed::derive(cfg.seed, &[0x5317, round as u64, p.0 as u64]);
        children.push(model.split(p, plan.m, s)?);
        seeds.push(s);
    }
    Ok(SplitEvent {
        stage: round,
        after_epoch,
        m: plan.m,
        parents: parents.into_iter().collect(),
        children,
        seeds,
        scores,
    })
}

/// Root stage, then one split round plus refinement stage per plan entry.
pub fn staged_train(model: &mut ProtoTsModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainReport> {
    staged_train_with_progress(model, data, cfg, &mut no_progress)
}

pub fn staged_train_with_progress(
    model: &mut ProtoTsModel,
    data: &TrainData,
    cfg: &TrainConfig,
    progress: ProgressFn,
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = TrainReport::default();
    train_stage(model, data, cfg, 0, &mut report, progress)?;
    for round in 1..=cfg.stages.len() {
        let event = apply_split_round(model, data, cfg, round, report.epochs.len())?;
        report.splits.push(event);
        train_stage(model, data, cfg, round, &mut report, progress)?;
    }
    if !data.test.is_empty() {
        report.test = Some(evaluate(model, &data.test)?);
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_windows, synth_generate, Normalizer, Split, SynthConfig};
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;

    fn setup(n_roots: usize) -> (ProtoTsModel, TrainData) {
        let cfg = SynthConfig {
            periods: 20,
            period: 8,
            lookback: 8,
            horizon: 4,
            season_len: 3,
            ..Default::default()
        };
        let out = synth_generate(&cfg, 3).unwrap();
        let norm = Normalizer::fit(&out.bundle);
        let b = norm.apply(&out.bundle);
        let data = TrainData {
            train: split_windows(&b, &out.schema, Split::Train, 2),
            val: split_windows(&b, &out.schema, Split::Val, 2),
            test: split_windows(&b, &out.schema, Split::Test, 2),
        };
        let mc = ModelConfig {
            encoder: EncoderConfig {
                d: 8,
                d_bottle: 3,
                ..Default::default()
            },
            n_roots,
            ..Default::default()
        };
        (ProtoTsModel::init(mc, out.schema, norm, 1).unwrap(), data)
    }

    #[test]
    fn loss_examples() {
        let y = [0.3, -0.2];
        assert_eq!(loss(&y, &y, &[1.0], 0.0, LossKind::L1).unwrap(), 0.0);
        let u = loss(&y, &y, &[0.25; 4], 1.0, LossKind::L1).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        let one_hot = loss(&y, &y, &[1.0, 0.0, 0.0], 5.0, LossKind::L1).unwrap();
        assert!(one_hot.abs() < 1e-9);
        assert_eq!(loss(&[1.0, 1.0], &[0.0, 3.0], &[1.0], 0.0, LossKind::L2).unwrap(), 5.0);
        assert!(loss(&[1.0], &y, &[1.0], 0.0, LossKind::L1).is_err());
    }

    #[test]
    fn loss_increases_with_entropy() {
        let y = [0.0];
        let a = loss(&y, &y, &[0.9, 0.1], 0.5, LossKind::L1).unwrap();
        let b = loss(&y, &y, &[0.6, 0.4], 0.5, LossKind::L1).unwrap();
        assert!(a < b);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lambda: -0.1, ..Default::default() },
            TrainConfig {
                stages: vec![StagePlan { trigger: SplitTrigger::AllLeaves, m: 1 }],
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let parsed: TrainConfig =
            serde_json::from_str(r#"{"lr":0.01,"stages":[{"trigger":{"kind":"rule","k":1,"alpha":50},"m":2}]}"#).unwrap();
        assert_eq!(parsed.stages[0].trigger, SplitTrigger::Rule { k: 1, alpha: 50.0 });
        assert_eq!(parsed.max_epochs, 30);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (mut model, data) = setup(2);
        let before = model.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 3,
            patience: 10,
            ..Default::default()
        };
        staged_train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn single_instance_single_prototype_fits() {
        let (mut model, mut data) = setup(1);
        data.train.truncate(1);
        data.val = data.train.clone();
        let cfg = TrainConfig {
            lr: 1e-3,
            max_epochs: 2000,
            patience: 2000,
            batch_size: 1,
            lambda: 0.0,
            ..Default::default()
        };
        let mut report = TrainReport::default();
        train_stage(&mut model, &data, &cfg, 0, &mut report, &mut no_progress).unwrap();
        let l1 = evaluate(&model, &data.train).unwrap().mae * 4.0;
        assert!(l1 < 1e-3, "L1 {l1}");
    }

    #[test]
    fn all_leaves_plan_doubles_leaves_and_stages_do_not_regress() {
        let (mut model, data) = setup(3);
        let cfg = TrainConfig {
            lr: 0.01,
            max_epochs: 4,
            stages: vec![StagePlan { trigger: SplitTrigger::AllLeaves, m: 2 }],
            ..Default::default()
        };
        let report = staged_train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.tree.leaves().len(), 6);
        assert_eq!(report.splits[0].parents.len(), 3);
        assert!(report.stages[1].best_val_mae <= report.stages[0].best_val_mae + 1e-6);
        let epochs: Vec<usize> = report.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, (1..=epochs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_split_plan_matches_single_stage_and_is_deterministic() {
        let (m0, data) = setup(2);
        let cfg = TrainConfig {
            lr: 0.01,
            max_epochs: 3,
            ..Default::default()
        };
        let (mut a, mut b) = (m0.clone(), m0.clone());
        let ra = staged_train(&mut a, &data, &cfg).unwrap();
        let mut rb = TrainReport::default();
        train_stage(&mut b, &data, &cfg, 0, &mut rb, &mut no_progress).unwrap();
        assert_eq!(ra.train_losses(), rb.train_losses());
        assert_eq!(a, b);
        let mut c = m0.clone();
        let rc = staged_train(&mut c, &data, &cfg).unwrap();
        assert_eq!(ra.train_losses(), rc.train_losses());
    }

    #[test]
    fn locked_patterns_survive_training() {
        let (mut model, data) = setup(2);
        let p: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        model.tree.edit_pattern(NodeId(1), p.clone(), true).unwrap();
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 2,
            ..Default::default()
        };
        staged_train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.tree.nodes[1].pattern, p);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::vector(vec![30.0, 40.0])];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert_eq!(g[0].data(), &[6.0, 8.0]);
    }
}
