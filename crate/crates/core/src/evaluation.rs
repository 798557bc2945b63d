//! Forecast metrics, per-instance explanations and activation timelines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, WindowInstance};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ProtoTsModel;
use crate::prototypes::{align_pattern, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    /// MAE at each forecast step, averaged over instances.
    pub mae_per_step: Vec<f64>,
    pub count: usize,
    /// Whether errors are in original units rather than normalized space.
    pub denormalized: bool,
}

/// MSE/MAE over aligned prediction and target rows.
pub fn metrics(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::Contract("cannot evaluate zero windows".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape("prediction and target counts differ".into()));
    }
    let h = predictions[0].len();
    if predictions.iter().chain(targets).any(|r| r.len() != h) {
        return Err(Error::Shape("ragged forecast rows".into()));
    }
    let mut per_step = vec![0.0; h];
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, y) in predictions.iter().zip(targets) {
        for (t, (a, b)) in p.iter().zip(y).enumerate() {
            let e = a - b;
            se += e * e;
            ae += e.abs();
            per_step[t] += e.abs();
        }
    }
    let n = predictions.len() as f64;
    Ok(MetricReport {
        mse: se / (n * h as f64),
        mae: ae / (n * h as f64),
        mae_per_step: per_step.into_iter().map(|v| v / n).collect(),
        count: predictions.len(),
        denormalized: false,
    })
}

/// Metrics of `model` on `windows`, in normalized space.
pub fn evaluate(model: &ProtoTsModel, windows: &[WindowInstance]) -> Result<MetricReport> {
    evaluate_with(model, windows, false)
}

pub fn evaluate_with(model: &ProtoTsModel, windows: &[WindowInstance], denormalize: bool) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::Contract("cannot evaluate zero windows".into()));
    }
    let mut preds = model.predict(windows)?;
    let mut targets: Vec<Vec<f64>> = windows.iter().map(|w| w.y_target.clone()).collect();
    if denormalize {
        let norm = &model.normalizer;
        preds = preds.iter().map(|p| norm.invert_target(p)).collect();
        targets = targets.iter().map(|p| norm.invert_target(p)).collect();
    }
    let mut report = metrics(&preds, &targets)?;
    report.denormalized = denormalize;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub leaf: NodeId,
    pub label: Option<String>,
    pub weight: f64,
    /// `weight * aligned leaf pattern`.
    pub curve: Vec<f64>,
}

/// Exact decomposition of one forecast into leaf contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance: usize,
    pub phase0: usize,
    pub prediction: Vec<f64>,
    /// Sorted by weight, largest first.
    pub contributions: Vec<Contribution>,
    /// `prediction - Σ curves`.
    pub residual: Vec<f64>,
}

fn rank(mut weights: Vec<(NodeId, f64)>) -> Vec<(NodeId, f64)> {
    weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    weights
}

pub fn explain(model: &ProtoTsModel, instance: &WindowInstance) -> Result<Explanation> {
    let z = model.encode_batch(std::slice::from_ref(instance))?.remove(0);
    let h = model.horizon();
    let prediction = model.tree.hierarchical_predict(&z, instance.phase0, h);
    let contributions: Vec<Contribution> = rank(model.tree.path_weights(&z))
        .into_iter()
        .map(|(leaf, weight)| {
            let node = &model.tree.nodes[leaf.0];
            Contribution {
                leaf,
                label: node.label.clone(),
                weight,
                curve: align_pattern(&node.pattern, instance.phase0, h)
                    .into_iter()
                    .map(|v| v * weight)
                    .collect(),
            }
        })
        .collect();
    let residual = (0..h)
        .map(|t| prediction[t] - contributions.iter().map(|c| c.curve[t]).sum::<f64>())
        .collect();
    Ok(Explanation {
        instance: instance.start,
        phase0: instance.phase0,
        prediction,
        contributions,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationEntry {
    pub instance: usize,
    /// `(leaf, path weight)`, largest weight first.
    pub leaves: Vec<(NodeId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTimeline {
    pub k: usize,
    pub entries: Vec<ActivationEntry>,
}

/// Top-`k` leaves of every window, ordered by window position. `k` larger
/// than the leaf count is truncated.
pub fn activation_report(model: &ProtoTsModel, windows: &[WindowInstance], k: usize) -> Result<ActivationTimeline> {
    if k == 0 {
        return Err(Error::Contract("k must be >= 1".into()));
    }
    let k = k.min(model.tree.leaves().len());
    let queries = model.encode_batch(windows)?;
    let mut entries: Vec<ActivationEntry> = windows
        .iter()
        .zip(&queries)
        .map(|(w, z)| ActivationEntry {
            instance: w.start,
            leaves: rank(model.tree.path_weights(z)).into_iter().take(k).collect(),
        })
        .collect();
    entries.sort_by_key(|e| e.instance);
    Ok(ActivationTimeline { k, entries })
}

impl ActivationTimeline {
    /// Long-format CSV: `instance,rank,leaf,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,rank,leaf,weight\n");
        for e in &self.entries {
            for (r, (leaf, w)) in e.leaves.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", e.instance, r, leaf, w));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Forecasts the per-phase mean of the training target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNaive {
    pub phase_means: Vec<f64>,
}

impl SeasonalNaive {
    pub fn fit(bundle: &DatasetBundle, period: usize) -> Result<Self> {
        let r = bundle.splits.train.clone();
        if r.is_empty() || period == 0 {
            return Err(Error::Contract("seasonal baseline needs training rows and T >= 1".into()));
        }
        let mut sum = vec![0.0; period];
        let mut count = vec![0usize; period];
        for i in r {
            let ph = bundle.timestamps[i].rem_euclid(period as i64) as usize;
            sum[ph] += bundle.y[i];
            count[ph] += 1;
        }
        let overall = sum.iter().sum::<f64>() / count.iter().sum::<usize>() as f64;
        Ok(Self {
            phase_means: sum
                .iter()
                .zip(&count)
                .map(|(&s, &c)| if c > 0 { s / c as f64 } else { overall })
                .collect(),
        })
    }

    pub fn predict(&self, window: &WindowInstance) -> Vec<f64> {
        align_pattern(&self.phase_means, window.phase0, window.horizon())
    }

    pub fn evaluate(&self, windows: &[WindowInstance]) -> Result<MetricReport> {
        let preds: Vec<Vec<f64>> = windows.iter().map(|w| self.predict(w)).collect();
        let targets: Vec<Vec<f64>> = windows.iter().map(|w| w.y_target.clone()).collect();
        metrics(&preds, &targets)
    }
}

/// Majority regime over a window's forecast steps; ties go to the smaller id.
pub fn instance_regime(window: &WindowInstance, step_labels: &[usize]) -> usize {
    let start = window.first_forecast();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &step_labels[start..start + window.horizon()] {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub purity: f64,
    /// Majority regime assigned to each dominant leaf.
    pub leaf_regime: BTreeMap<NodeId, usize>,
}

/// Fraction of windows whose dominant leaf maps, by majority vote, to the
/// window's true regime.
pub fn purity(model: &ProtoTsModel, windows: &[WindowInstance], step_labels: &[usize]) -> Result<PurityReport> {
    if windows.is_empty() {
        return Err(Error::Contract("purity of zero windows".into()));
    }
    let timeline = activation_report(model, windows, 1)?;
    let by_start: BTreeMap<usize, NodeId> = timeline.entries.iter().map(|e| (e.instance, e.leaves[0].0)).collect();
    let mut votes: BTreeMap<NodeId, BTreeMap<usize, usize>> = BTreeMap::new();
    let labelled: Vec<(NodeId, usize)> = windows
        .iter()
        .map(|w| (by_start[&w.start], instance_regime(w, step_labels)))
        .collect();
    for &(leaf, regime) in &labelled {
        *votes.entry(leaf).or_default().entry(regime).or_default() += 1;
    }
    let leaf_regime: BTreeMap<NodeId, usize> = votes
        .into_iter()
        .map(|(leaf, v)| {
            let best = v
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(r, _)| r)
                .unwrap_or(0);
            (leaf, best)
        })
        .collect();
    let hits = labelled.iter().filter(|(leaf, r)| leaf_regime[leaf] == *r).count();
    Ok(PurityReport {
        purity: hits as f64 / windows.len() as f64,
        leaf_regime,
    })
}

/// Mean Shannon entropy (nats) of the root weights over `windows`.
pub fn mean_root_entropy(model: &ProtoTsModel, windows: &[WindowInstance]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Contract("entropy of zero windows".into()));
    }
    let queries = model.encode_batch(windows)?;
    let total: f64 = queries
        .iter()
        .map(|z| {
            -model
                .tree
                .root_similarity(z)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    Ok(total / windows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_off_by_one() {
        let y = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let r = metrics(&y, &y).unwrap();
        assert_eq!((r.mse, r.mae), (0.0, 0.0));
        let off: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        let r = metrics(&off, &y).unwrap();
        assert_eq!((r.mse, r.mae), (1.0, 1.0));
        assert_eq!(r.mae_per_step, vec![1.0, 1.0]);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn matches_two_line_recomputation_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<Vec<f64>> = (0..7).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..7).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let errs: Vec<f64> = p.concat().iter().zip(y.concat()).map(|(a, b)| a - b).collect();
        let mse = errs.iter().map(|e| e * e).sum::<f64>() / 35.0;
        let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / 35.0;
        let r = metrics(&p, &y).unwrap();
        assert!((r.mse - mse).abs() < 1e-12 && (r.mae - mae).abs() < 1e-12);
        let s = metrics(&y, &p).unwrap();
        assert_eq!((r.mse, r.mae), (s.mse, s.mae));
    }

    #[test]
    fn instance_regime_majority_with_ties_to_smaller() {
        let w = WindowInstance {
            start: 0,
            y_past: vec![0.0; 2],
            x_dis: vec![vec![]; 6],
            x_con: vec![vec![]; 6],
            y_target: vec![0.0; 4],
            phase0: 0,
        };
        assert_eq!(instance_regime(&w, &[9, 9, 1, 1, 2, 2]), 1);
        assert_eq!(instance_regime(&w, &[9, 9, 3, 2, 3, 3]), 3);
    }
}
