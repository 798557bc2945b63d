//! The prototype tree: similarity, phase-aligned prediction and refinement.
//!
//! Every node holds an embedding `mu` used for matching and a period-`T`
//! pattern used for forecasting. Roots compete in one softmax group; the
//! children of every split node form their own group. A leaf's path weight is
//! the product of group weights from its root down, and a forecast is the
//! path-weighted sum of the phase-aligned leaf patterns.

mod rule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::softmax_neg;

pub use rule::{select_split_candidates, splitting_rule, SplitScores};

/// Std of the jitter added to a parent's embedding when it is split.
pub const DEFAULT_SPLIT_JITTER: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// 1 for roots.
    pub level: usize,
    pub mu: Vec<f64>,
    pub pattern: Vec<f64>,
    pub children: Vec<NodeId>,
    pub label: Option<String>,
    pub pattern_locked: bool,
}

impl PrototypeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Arena of prototype nodes; a node's id is its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTree {
    pub d: usize,
    pub period: usize,
    pub roots: Vec<NodeId>,
    pub nodes: Vec<PrototypeNode>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Slice of a period-`T` pattern covering `horizon` steps starting at `phase0`.
pub fn align_pattern(pattern: &[f64], phase0: usize, horizon: usize) -> Vec<f64> {
    let t = pattern.len();
    (0..horizon).map(|i| pattern[(phase0 + i) % t]).collect()
}

impl PrototypeTree {
    /// `n_roots` roots with `mu ~ N(0, mu_std)` and `pattern ~ N(0, pattern_std)`.
    pub fn init(
        n_roots: usize,
        d: usize,
        period: usize,
        mu_std: f64,
        pattern_std: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if n_roots == 0 || d == 0 || period == 0 {
            return Err(Error::Config("tree needs at least one root, d >= 1 and T >= 1".into()));
        }
        let mu_dist = Normal::new(0.0, mu_std).map_err(|e| Error::Config(e.to_string()))?;
        let p_dist = Normal::new(0.0, pattern_std).map_err(|e| Error::Config(e.to_string()))?;
        let nodes: Vec<PrototypeNode> = (0..n_roots)
            .map(|i| PrototypeNode {
                id: NodeId(i),
                parent: None,
                level: 1,
                mu: (0..d).map(|_| mu_dist.sample(rng)).collect(),
                pattern: (0..period).map(|_| p_dist.sample(rng)).collect(),
                children: Vec::new(),
                label: None,
                pattern_locked: false,
            })
            .collect();
        Ok(Self {
            d,
            period,
            roots: (0..n_roots).map(NodeId).collect(),
            nodes,
        })
    }

    /// Builds a tree from explicit root embeddings and patterns.
    pub fn from_roots(roots: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let Some((mu0, p0)) = roots.first() else {
            return Err(Error::Config("tree needs at least one root".into()));
        };
        let (d, period) = (mu0.len(), p0.len());
        let nodes: Vec<PrototypeNode> = roots
            .into_iter()
            .enumerate()
            .map(|(i, (mu, pattern))| PrototypeNode {
                id: NodeId(i),
                parent: None,
                level: 1,
                mu,
                pattern,
                children: Vec::new(),
                label: None,
                pattern_locked: false,
            })
            .collect();
        let tree = Self {
            d,
            period,
            roots: (0..nodes.len()).map(NodeId).collect(),
            nodes,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn node(&self, id: NodeId) -> Result<&PrototypeNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Contract(format!("no prototype with id {id}")))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut PrototypeNode> {
        self.nodes
            .get_mut(id.0)
            .ok_or_else(|| Error::Contract(format!("no prototype with id {id}")))
    }

    pub fn n_roots(&self) -> usize {
        self.roots.len()
    }

    /// Leaves in depth-first order, roots first to last.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id.0];
            if n.is_leaf() {
                out.push(id);
            } else {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.roots.is_empty() {
            return bad("tree has no roots".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 != i {
                return bad(format!("node at index {i} carries id {}", n.id));
            }
            if n.mu.len() != self.d || n.pattern.len() != self.period {
                return bad(format!("node {i} has wrong mu or pattern length"));
            }
            if n.children.len() == 1 {
                return bad(format!("node {i} has exactly one child"));
            }
            for c in &n.children {
                let Some(child) = self.nodes.get(c.0) else {
                    return bad(format!("node {i} references missing child {c}"));
                };
                if child.parent != Some(n.id) || child.level != n.level + 1 {
                    return bad(format!("child {c} does not point back to {i}"));
                }
                parents[c.0] += 1;
            }
        }
        for r in &self.roots {
            let Some(root) = self.nodes.get(r.0) else {
                return bad(format!("missing root {r}"));
            };
            if root.parent.is_some() || root.level != 1 {
                return bad(format!("root {r} is not at level 1"));
            }
            parents[r.0] += 1;
        }
        if let Some(i) = parents.iter().position(|&p| p != 1) {
            return bad(format!("node {i} is reachable {} times", parents[i]));
        }
        Ok(())
    }

    /// Softmax of negative squared distances over the roots.
    pub fn root_similarity(&self, z: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = self.roots.iter().map(|r| sq_dist(z, &self.nodes[r.0].mu)).collect();
        softmax_neg(&d)
    }

    /// Softmax over one sibling group.
    pub fn child_similarity(&self, z: &[f64], parent: NodeId) -> Result<Vec<f64>> {
        let p = self.node(parent)?;
        if p.is_leaf() {
            return Err(Error::Contract(format!("prototype {parent} is a leaf")));
        }
        let d: Vec<f64> = p.children.iter().map(|c| sq_dist(z, &self.nodes[c.0].mu)).collect();
        Ok(softmax_neg(&d))
    }

    /// Path weight of every leaf, in [`PrototypeTree::leaves`] order.
    pub fn path_weights(&self, z: &[f64]) -> Vec<(NodeId, f64)> {
        let mut out = Vec::new();
        let root_w = self.root_similarity(z);
        let mut stack: Vec<(NodeId, f64)> = self.roots.iter().copied().zip(root_w).rev().collect();
        while let Some((id, w)) = stack.pop() {
            let n = &self.nodes[id.0];
            if n.is_leaf() {
                out.push((id, w));
            } else {
                let cw = self.child_similarity(z, id).expect("internal node");
                stack.extend(n.children.iter().copied().zip(cw).map(|(c, x)| (c, w * x)).rev());
            }
        }
        out
    }

    /// Root-level forecast: root weights times aligned root patterns.
    pub fn root_predict(&self, z: &[f64], phase0: usize, horizon: usize) -> Vec<f64> {
        let w = self.root_similarity(z);
        let mut out = vec![0.0; horizon];
        for (r, wi) in self.roots.iter().zip(w) {
            let p = align_pattern(&self.nodes[r.0].pattern, phase0, horizon);
            out.iter_mut().zip(p).for_each(|(o, v)| *o += wi * v);
        }
        out
    }

    /// Forecast from every root-to-leaf path.
    pub fn hierarchical_predict(&self, z: &[f64], phase0: usize, horizon: usize) -> Vec<f64> {
        let mut out = vec![0.0; horizon];
        for (id, w) in self.path_weights(z) {
            let p = align_pattern(&self.nodes[id.0].pattern, phase0, horizon);
            out.iter_mut().zip(p).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    /// Splits a leaf into `m` children. Each child copies the parent's
    /// pattern and gets the parent's embedding plus `N(0, jitter)` noise.
    /// Returns the new child ids.
    pub fn split(&mut self, id: NodeId, m: usize, seed: u64, jitter: f64) -> Result<Vec<NodeId>> {
        let parent = self.node(id)?;
        if !parent.is_leaf() {
            return Err(Error::Contract(format!("prototype {id} is not a leaf")));
        }
        if m < 2 {
            return Err(Error::Contract(format!("split needs at least 2 children, got {m}")));
        }
        let noise = Normal::new(0.0, jitter).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (mu, pattern, level) = (parent.mu.clone(), parent.pattern.clone(), parent.level);
        let first = self.nodes.len();
        let ids: Vec<NodeId> = (first..first + m).map(NodeId).collect();
        for &cid in &ids {
            self.nodes.push(PrototypeNode {
                id: cid,
                parent: Some(id),
                level: level + 1,
                mu: mu.iter().map(|v| v + noise.sample(&mut rng)).collect(),
                pattern: pattern.clone(),
                children: Vec::new(),
                label: None,
                pattern_locked: false,
            });
        }
        self.nodes[id.0].children = ids.clone();
        Ok(ids)
    }

    /// Replaces a node's pattern; `lock` excludes it from gradient updates.
    pub fn edit_pattern(&mut self, id: NodeId, pattern: Vec<f64>, lock: bool) -> Result<()> {
        let period = self.period;
        let node = self.node_mut(id)?;
        if pattern.len() != period {
            return Err(Error::Contract(format!(
                "pattern has {} points, expected {period}",
                pattern.len()
            )));
        }
        if pattern.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("pattern contains non-finite values".into()));
        }
        node.pattern = pattern;
        node.pattern_locked = lock;
        Ok(())
    }

    pub fn set_label(&mut self, id: NodeId, label: Option<String>) -> Result<()> {
        self.node_mut(id)?.label = label;
        Ok(())
    }

    /// Patterns that receive gradient: unlocked leaves.
    pub fn pattern_trainable(&self, id: NodeId) -> bool {
        let n = &self.nodes[id.0];
        n.is_leaf() && !n.pattern_locked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn random_tree(rng: &mut ChaCha8Rng, d: usize, t: usize, n_roots: usize) -> PrototypeTree {
        let mut tree = PrototypeTree::init(n_roots, d, t, 1.0, 1.0, rng).unwrap();
        for n in tree.nodes.iter_mut() {
            n.pattern.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        tree
    }

    /// Enumerates root-to-leaf paths independently of `path_weights`.
    fn brute_force_predict(tree: &PrototypeTree, z: &[f64], phase0: usize, h: usize) -> Vec<f64> {
        fn group(tree: &PrototypeTree, z: &[f64], ids: &[NodeId]) -> Vec<f64> {
            let e: Vec<f64> = ids.iter().map(|i| (-sq_dist(z, &tree.nodes[i.0].mu)).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        }
        fn walk(tree: &PrototypeTree, z: &[f64], ids: &[NodeId], w: f64, acc: &mut Vec<(usize, f64)>) {
            for (id, g) in ids.iter().zip(group(tree, z, ids)) {
                let n = &tree.nodes[id.0];
                if n.children.is_empty() {
                    acc.push((id.0, w * g));
                } else {
                    walk(tree, z, &n.children, w * g, acc);
                }
            }
        }
        let mut paths = Vec::new();
        walk(tree, z, &tree.roots, 1.0, &mut paths);
        (0..h)
            .map(|t| {
                paths
                    .iter()
                    .map(|&(i, w)| w * tree.nodes[i].pattern[(phase0 + t) % tree.period])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn root_similarity_examples() {
        let tree = PrototypeTree::from_roots(vec![(vec![1.0, 0.0], vec![0.0]), (vec![-1.0, 0.0], vec![0.0])]).unwrap();
        assert!(close(&tree.root_similarity(&[0.0, 3.0]), &[0.5, 0.5], 1e-12));

        let tree = PrototypeTree::from_roots(vec![
            (vec![0.0, 0.0], vec![0.0]),
            (vec![3f64.ln().sqrt(), 0.0], vec![0.0]),
        ])
        .unwrap();
        assert!(close(&tree.root_similarity(&[0.0, 0.0]), &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn root_similarity_matches_direct_exp_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = random_tree(&mut rng, 4, 5, 3);
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = tree.nodes.iter().map(|n| (-sq_dist(&z, &n.mu)).exp()).collect();
        let s: f64 = e.iter().sum();
        let expect: Vec<f64> = e.iter().map(|v| v / s).collect();
        assert!(close(&tree.root_similarity(&z), &expect, 1e-12));
    }

    #[test]
    fn align_pattern_examples() {
        let p = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(align_pattern(&p, 2, 3), vec![3.0, 4.0, 1.0]);
        assert_eq!(align_pattern(&p, 0, 4), p.to_vec());
        assert_eq!(align_pattern(&p, 0, 8), [p, p].concat());
    }

    #[test]
    fn root_predict_examples() {
        let tree = PrototypeTree::from_roots(vec![(vec![0.0], vec![1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(tree.root_predict(&[5.0], 1, 4), vec![2.0, 3.0, 1.0, 2.0]);

        let tree = PrototypeTree::from_roots(vec![
            (vec![0.0], vec![1.0, 1.0]),
            (vec![3f64.ln().sqrt()], vec![-1.0, 3.0]),
        ])
        .unwrap();
        assert!(close(&tree.root_predict(&[0.0], 0, 2), &[0.5, 1.5], 1e-12));
    }

    #[test]
    fn root_predict_matches_dense_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = random_tree(&mut rng, 8, 24, 6);
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = tree.root_similarity(&z);
        let dense: Vec<f64> = (0..96)
            .map(|t| (0..6).map(|i| w[i] * tree.nodes[i].pattern[(7 + t) % 24]).sum())
            .collect();
        assert!(close(&tree.root_predict(&z, 7, 96), &dense, 1e-10));
    }

    #[test]
    fn child_similarity_examples() {
        let mut tree = PrototypeTree::from_roots(vec![(vec![0.0, 0.0], vec![0.0])]).unwrap();
        let kids = tree.split(NodeId(0), 2, 0, 0.0).unwrap();
        assert!(close(&tree.child_similarity(&[1.0, 1.0], NodeId(0)).unwrap(), &[0.5, 0.5], 1e-12));

        tree.nodes[kids[0].0].mu = vec![0.0, 0.0];
        tree.nodes[kids[1].0].mu = vec![20f64.sqrt(), 0.0];
        let w = tree.child_similarity(&[0.0, 0.0], NodeId(0)).unwrap();
        let e = (-20f64).exp();
        assert!(close(&w, &[1.0 / (1.0 + e), e / (1.0 + e)], 1e-15));
        assert!(matches!(tree.child_similarity(&[0.0, 0.0], kids[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn child_similarity_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tree = random_tree(&mut rng, 5, 4, 2);
        let kids = tree.split(NodeId(1), 3, 9, 1.0).unwrap();
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = kids.iter().map(|k| (-sq_dist(&z, &tree.nodes[k.0].mu)).exp()).collect();
        let s: f64 = e.iter().sum();
        let expect: Vec<f64> = e.iter().map(|v| v / s).collect();
        assert!(close(&tree.child_similarity(&z, NodeId(1)).unwrap(), &expect, 1e-12));
    }

    #[test]
    fn unsplit_hierarchy_equals_root_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = random_tree(&mut rng, 4, 6, 5);
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(tree.hierarchical_predict(&z, 3, 10), tree.root_predict(&z, 3, 10));
    }

    #[test]
    fn split_children_with_parent_pattern_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tree = random_tree(&mut rng, 4, 6, 3);
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = tree.hierarchical_predict(&z, 2, 9);
        tree.split(NodeId(1), 3, 11, 0.5).unwrap();
        let after = tree.hierarchical_predict(&z, 2, 9);
        assert!(close(&before, &after, 1e-12));
    }

    #[test]
    fn hierarchical_predict_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tree = random_tree(&mut rng, 4, 6, 3);
        tree.split(NodeId(0), 2, 1, 1.0).unwrap();
        tree.split(NodeId(3), 3, 2, 1.0).unwrap();
        tree.split(NodeId(2), 2, 3, 1.0).unwrap();
        for n in tree.nodes.iter_mut() {
            n.pattern.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        assert_eq!(tree.depth(), 3);
        tree.validate().unwrap();
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let phase = rng.random_range(0..6);
            assert!(close(
                &tree.hierarchical_predict(&z, phase, 13),
                &brute_force_predict(&tree, &z, phase, 13),
                1e-10
            ));
        }
    }

    #[test]
    fn split_contract_errors_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = random_tree(&mut rng, 4, 6, 2);
        let mut a = base.clone();
        let mut b = base.clone();
        a.split(NodeId(0), 2, 42, DEFAULT_SPLIT_JITTER).unwrap();
        b.split(NodeId(0), 2, 42, DEFAULT_SPLIT_JITTER).unwrap();
        assert_eq!(a, b);
        assert!(matches!(a.split(NodeId(0), 2, 1, 0.01), Err(Error::Contract(_))));
        assert!(matches!(a.split(NodeId(99), 2, 1, 0.01), Err(Error::Contract(_))));
        assert_eq!(a.node(NodeId(0)).unwrap().children.len(), 2);
        assert_eq!(a.leaves(), vec![NodeId(2), NodeId(3), NodeId(1)]);
    }

    #[test]
    fn jittered_split_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tree = random_tree(&mut rng, 8, 24, 4);
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = tree.hierarchical_predict(&z, 0, 24);
        for r in 0..4 {
            tree.split(NodeId(r), 2, r as u64, DEFAULT_SPLIT_JITTER).unwrap();
        }
        assert!(close(&before, &tree.hierarchical_predict(&z, 0, 24), 0.02));
    }

    #[test]
    fn edit_pattern_contract() {
        let mut tree = PrototypeTree::from_roots(vec![(vec![0.0], vec![0.0; 4])]).unwrap();
        tree.edit_pattern(NodeId(0), vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
        assert_eq!(tree.hierarchical_predict(&[0.3], 1, 3), vec![2.0, 3.0, 4.0]);
        assert!(!tree.pattern_trainable(NodeId(0)));
        assert!(tree.edit_pattern(NodeId(0), vec![1.0; 3], false).is_err());
        assert!(tree.edit_pattern(NodeId(0), vec![f64::NAN; 4], false).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn ragged_tree(seed: u64, n_roots: usize, splits: &[(usize, usize)]) -> PrototypeTree {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tree = random_tree(&mut rng, 3, 5, n_roots);
            for (k, &(pick, m)) in splits.iter().enumerate() {
                let leaves: Vec<NodeId> = tree
                    .leaves()
                    .into_iter()
                    .filter(|l| tree.nodes[l.0].level < 3)
                    .collect();
                if leaves.is_empty() || tree.leaves().len() + m - 1 > 30 {
                    break;
                }
                let id = leaves[pick % leaves.len()];
                tree.split(id, m, k as u64, 1.0).unwrap();
                for c in tree.nodes[id.0].children.clone() {
                    tree.nodes[c.0].pattern.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                }
            }
            tree
        }

        proptest! {
            #[test]
            fn group_softmaxes_and_path_weights_conserve_mass(
                seed in any::<u64>(),
                n_roots in 1usize..5,
                splits in prop::collection::vec((any::<usize>(), 2usize..4), 0..8),
                z in prop::collection::vec(-3.0f64..3.0, 3),
            ) {
                let tree = ragged_tree(seed, n_roots, &splits);
                prop_assert!((tree.root_similarity(&z).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for n in tree.nodes.iter().filter(|n| !n.is_leaf()) {
                    let w = tree.child_similarity(&z, n.id).unwrap();
                    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                let total: f64 = tree.path_weights(&z).iter().map(|(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }

            #[test]
            fn prediction_is_a_convex_combination(
                seed in any::<u64>(),
                splits in prop::collection::vec((any::<usize>(), 2usize..4), 0..6),
                z in prop::collection::vec(-3.0f64..3.0, 3),
                phase in 0usize..5,
            ) {
                let tree = ragged_tree(seed, 3, &splits);
                let pred = tree.hierarchical_predict(&z, phase, 7);
                for (t, v) in pred.iter().enumerate() {
                    let vals: Vec<f64> = tree.leaves().iter()
                        .map(|l| tree.nodes[l.0].pattern[(phase + t) % 5]).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }

            #[test]
            fn similarity_is_translation_invariant(
                seed in any::<u64>(),
                splits in prop::collection::vec((any::<usize>(), 2usize..4), 0..6),
                z in prop::collection::vec(-3.0f64..3.0, 3),
                shift in prop::collection::vec(-10.0f64..10.0, 3),
            ) {
                let tree = ragged_tree(seed, 3, &splits);
                let mut moved = tree.clone();
                for n in moved.nodes.iter_mut() {
                    n.mu.iter_mut().zip(&shift).for_each(|(m, s)| *m += s);
                }
                let z2: Vec<f64> = z.iter().zip(&shift).map(|(a, b)| a + b).collect();
                for ((_, a), (_, b)) in tree.path_weights(&z).iter().zip(moved.path_weights(&z2)) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
