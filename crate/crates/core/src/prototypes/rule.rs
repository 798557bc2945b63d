//! Loss-attribution rule that picks which leaves to refine.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::WindowInstance;
use crate::error::{Error, Result};
use crate::model::ProtoTsModel;
use crate::prototypes::NodeId;

/// Per-leaf attribution statistics behind a split decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub leaves: Vec<NodeId>,
    pub loss: Vec<f64>,
    pub count: Vec<usize>,
    pub norm_loss: Vec<f64>,
}

/// Attribution core of the splitting rule.
///
/// `scores[i][l]` is the similarity of instance `i` to leaf `leaves[l]` and
/// `losses[i]` that instance's forecast MAE. Each instance adds its loss to
/// its `k` most similar leaves (ties to the smaller id). Leaves are ranked by
/// `Loss / Count`; the top `ceil(alpha% * n_leaves)` are returned, with every
/// leaf tied at the cutoff included. Leaves with zero normalized loss are
/// never selected.
pub fn select_split_candidates(
    leaves: &[NodeId],
    scores: &[Vec<f64>],
    losses: &[f64],
    k: usize,
    alpha: f64,
) -> Result<(BTreeSet<NodeId>, SplitScores)> {
    if leaves.is_empty() {
        return Err(Error::Contract("splitting rule needs at least one leaf".into()));
    }
    if k == 0 || !(alpha > 0.0 && alpha <= 100.0) {
        return Err(Error::Contract(format!(
            "splitting rule needs k >= 1 and 0 < alpha <= 100 (got k={k}, alpha={alpha})"
        )));
    }
    if scores.len() != losses.len() || scores.iter().any(|s| s.len() != leaves.len()) {
        return Err(Error::Shape("scores and losses disagree".into()));
    }
    let n = leaves.len();
    let mut loss = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    for (s, &l) in scores.iter().zip(losses) {
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(leaves[a].cmp(&leaves[b])));
        for &j in order.iter().take(k) {
            loss[j] += l;
            count[j] += 1;
        }
    }
    let norm_loss: Vec<f64> = loss
        .iter()
        .zip(&count)
        .map(|(&l, &c)| if c > 0 { l / c as f64 } else { 0.0 })
        .collect();

    let quota = ((alpha / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut ranked: Vec<usize> = (0..n).filter(|&j| norm_loss[j] > 0.0).collect();
    ranked.sort_by(|&a, &b| norm_loss[b].total_cmp(&norm_loss[a]).then(leaves[a].cmp(&leaves[b])));
    let selected = match ranked.get(quota.min(ranked.len()).wrapping_sub(1)) {
        Some(&cut) => {
            let cutoff = norm_loss[cut];
            ranked
                .iter()
                .filter(|&&j| norm_loss[j] >= cutoff)
                .map(|&j| leaves[j])
                .collect()
        }
        None => BTreeSet::new(),
    };
    Ok((
        selected,
        SplitScores {
            leaves: leaves.to_vec(),
            loss,
            count,
            norm_loss,
        },
    ))
}

/// Runs the splitting rule with the model's own predictions and leaf path
/// weights over `data`.
pub fn splitting_rule(
    model: &ProtoTsModel,
    data: &[WindowInstance],
    k: usize,
    alpha: f64,
) -> Result<(BTreeSet<NodeId>, SplitScores)> {
    let leaves = model.tree.leaves();
    let queries = model.encode_batch(data)?;
    let mut scores = Vec::with_capacity(data.len());
    let mut losses = Vec::with_capacity(data.len());
    for (w, z) in data.iter().zip(&queries) {
        let pred = model.tree.hierarchical_predict(z, w.phase0, w.horizon());
        let mae = pred.iter().zip(&w.y_target).map(|(p, y)| (p - y).abs()).sum::<f64>() / w.horizon() as f64;
        losses.push(mae);
        scores.push(model.tree.path_weights(z).into_iter().map(|(_, s)| s).collect());
    }
    select_split_candidates(&leaves, &scores, &losses, k, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_example() {
        let leaves = [NodeId(1), NodeId(2)];
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7]];
        let losses = [1.0, 2.0, 3.0];
        let (sel, s) = select_split_candidates(&leaves, &scores, &losses, 1, 50.0).unwrap();
        assert_eq!(s.norm_loss, vec![1.5, 3.0]);
        assert_eq!(sel, BTreeSet::from([NodeId(2)]));
    }

    #[test]
    fn unattributed_leaf_has_zero_norm_loss_and_is_not_selected() {
        let leaves = [NodeId(0), NodeId(1), NodeId(2)];
        let scores = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.7, 0.1]];
        let (sel, s) = select_split_candidates(&leaves, &scores, &[0.5, 0.4], 1, 100.0).unwrap();
        assert_eq!(s.count[2], 0);
        assert_eq!(s.norm_loss[2], 0.0);
        assert_eq!(sel, BTreeSet::from([NodeId(0), NodeId(1)]));
    }

    #[test]
    fn k_equal_to_leaf_count_counts_every_instance() {
        let leaves = [NodeId(0), NodeId(1), NodeId(2)];
        let scores = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.7, 0.1], vec![0.1, 0.1, 0.8]];
        let (_, s) = select_split_candidates(&leaves, &scores, &[1.0, 2.0, 3.0], 3, 10.0).unwrap();
        assert_eq!(s.count, vec![3, 3, 3]);
    }

    #[test]
    fn similarity_ties_break_towards_smaller_id() {
        let leaves = [NodeId(5), NodeId(3)];
        let scores = vec![vec![0.5, 0.5]];
        let (_, s) = select_split_candidates(&leaves, &scores, &[1.0], 1, 100.0).unwrap();
        assert_eq!(s.count, vec![0, 1]);
    }

    #[test]
    fn cutoff_ties_are_all_included() {
        let leaves = [NodeId(0), NodeId(1), NodeId(2)];
        let scores = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (sel, _) = select_split_candidates(&leaves, &scores, &[2.0, 2.0, 1.0], 1, 10.0).unwrap();
        assert_eq!(sel, BTreeSet::from([NodeId(0), NodeId(1)]));
    }

    #[test]
    fn contract_errors() {
        assert!(select_split_candidates(&[], &[], &[], 1, 50.0).is_err());
        assert!(select_split_candidates(&[NodeId(0)], &[], &[], 0, 50.0).is_err());
        assert!(select_split_candidates(&[NodeId(0)], &[], &[], 1, 0.0).is_err());
        assert!(select_split_candidates(&[NodeId(0)], &[], &[], 1, 100.5).is_err());
    }
}
