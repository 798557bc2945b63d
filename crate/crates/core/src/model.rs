//! The forecasting model: encoder plus prototype tree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, VariableSchema, WindowInstance};
use crate::encoder::{BoundEncoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::prototypes::{NodeId, PrototypeTree, DEFAULT_SPLIT_JITTER};
use crate::tensor::{Tape, Tensor, Var};

/// Windows encoded per tape during inference.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_roots: usize,
    pub mu_init_std: f64,
    pub pattern_init_std: f64,
    pub split_jitter: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            n_roots: 6,
            mu_init_std: 0.1,
            pattern_init_std: 0.1,
            split_jitter: DEFAULT_SPLIT_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoTsModel {
    pub config: ModelConfig,
    pub schema: VariableSchema,
    pub normalizer: Normalizer,
    pub encoder: EncoderParams,
    pub tree: PrototypeTree,
    /// Seeds consumed so far: initialization first, then one per split.
    pub seed_lineage: Vec<u64>,
}

/// Graph handles of one taped forward pass.
#[derive(Debug)]
pub struct TapedForward {
    pub encoder: BoundEncoder,
    pub mu: Var,
    pub patterns: Var,
    pub query: Var,
    /// `[B, H]` forecasts.
    pub prediction: Var,
    /// `[B, N]` root weights.
    pub root_weights: Var,
    /// `[B, M]` weights of every sibling group, one var per split node.
    pub child_weights: Vec<Var>,
}

impl ProtoTsModel {
    pub fn init(config: ModelConfig, schema: VariableSchema, normalizer: Normalizer, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&config.encoder, &schema, &mut rng)?;
        let tree = PrototypeTree::init(
            config.n_roots,
            config.encoder.d,
            schema.period,
            config.mu_init_std,
            config.pattern_init_std,
            &mut rng,
        )?;
        Ok(Self {
            config,
            schema,
            normalizer,
            encoder,
            tree,
            seed_lineage: vec![seed],
        })
    }

    pub fn horizon(&self) -> usize {
        self.schema.horizon
    }

    /// Query representations, one `d`-vector per window.
    pub fn encode_batch(&self, windows: &[WindowInstance]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let enc = self.encoder.bind(&mut tape, false);
            let q = enc.encode(&mut tape, chunk)?;
            let t = tape.value(q);
            out.extend((0..chunk.len()).map(|r| t.row(r).to_vec()));
        }
        Ok(out)
    }

    /// Forecasts in normalized space.
    pub fn predict(&self, windows: &[WindowInstance]) -> Result<Vec<Vec<f64>>> {
        let q = self.encode_batch(windows)?;
        Ok(windows
            .iter()
            .zip(&q)
            .map(|(w, z)| self.tree.hierarchical_predict(z, w.phase0, self.horizon()))
            .collect())
    }

    pub fn predict_one(&self, window: &WindowInstance) -> Result<Vec<f64>> {
        Ok(self.predict(std::slice::from_ref(window))?.remove(0))
    }

    fn mu_matrix(&self) -> Tensor {
        let data = self.tree.nodes.iter().flat_map(|n| n.mu.iter().copied()).collect();
        Tensor::matrix(self.tree.nodes.len(), self.tree.d, data).expect("tree shape")
    }

    fn pattern_matrix(&self) -> Tensor {
        let data = self.tree.nodes.iter().flat_map(|n| n.pattern.iter().copied()).collect();
        Tensor::matrix(self.tree.nodes.len(), self.tree.period, data).expect("tree shape")
    }

    /// Records the full forward pass of a batch on `tape`.
    pub fn forward(&self, tape: &mut Tape, windows: &[WindowInstance], trainable: bool) -> Result<TapedForward> {
        let encoder = self.encoder.bind(tape, trainable);
        let (mu, patterns) = if trainable {
            (tape.param(self.mu_matrix()), tape.param(self.pattern_matrix()))
        } else {
            (tape.constant(self.mu_matrix()), tape.constant(self.pattern_matrix()))
        };
        let query = encoder.encode(tape, windows)?;
        let dist = tape.sq_dist(query, mu)?;
        let tree = &self.tree;

        let root_idx: Vec<usize> = tree.roots.iter().map(|r| r.0).collect();
        let root_d = tape.gather_cols(dist, &root_idx)?;
        let root_weights = tape.softmax_neg(root_d);

        // (group matrix, column) holding each node's path weight
        let mut path: Vec<Option<(Var, usize)>> = vec![None; tree.nodes.len()];
        for (c, r) in tree.roots.iter().enumerate() {
            path[r.0] = Some((root_weights, c));
        }
        let mut child_weights = Vec::new();
        let mut leaf_cols = Vec::new();
        let mut stack: Vec<NodeId> = tree.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let node = &tree.nodes[id.0];
            let (mat, col) = path[id.0].expect("parent visited first");
            if node.is_leaf() {
                leaf_cols.push(tape.gather_cols(mat, &[col])?);
                continue;
            }
            let parent_w = tape.gather_cols(mat, &[col])?;
            let idx: Vec<usize> = node.children.iter().map(|c| c.0).collect();
            let cd = tape.gather_cols(dist, &idx)?;
            let cw = tape.softmax_neg(cd);
            child_weights.push(cw);
            let pw = tape.mul_col(cw, parent_w)?;
            for (j, c) in node.children.iter().enumerate() {
                path[c.0] = Some((pw, j));
            }
            stack.extend(node.children.iter().rev());
        }
        let leaf_w = tape.concat_cols(&leaf_cols)?;
        let leaf_rows: Vec<usize> = tree.leaves().iter().map(|l| l.0).collect();
        let leaf_p = tape.gather_rows(patterns, &leaf_rows)?;
        let phases: Vec<usize> = windows.iter().map(|w| w.phase0).collect();
        let prediction = tape.phase_mix(leaf_w, leaf_p, &phases, self.horizon())?;
        Ok(TapedForward {
            encoder,
            mu,
            patterns,
            query,
            prediction,
            root_weights,
            child_weights,
        })
    }

    /// Every trainable tensor with a stable name, including the tree's
    /// `[nodes, d]` embeddings and `[nodes, T]` patterns.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .encoder
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        out.push(("tree.mu".into(), self.mu_matrix()));
        out.push(("tree.pattern".into(), self.pattern_matrix()));
        out
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Inverse of [`ProtoTsModel::param_values`].
    pub fn set_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        let n_enc = self.encoder.params_mut().len();
        if values.len() != n_enc + 2 {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                n_enc + 2,
                values.len()
            )));
        }
        for (dst, src) in self.encoder.params_mut().into_iter().zip(values) {
            if dst.shape() != src.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        let (mu, pat) = (&values[n_enc], &values[n_enc + 1]);
        let n = self.tree.nodes.len();
        if mu.shape() != [n, self.tree.d] || pat.shape() != [n, self.tree.period] {
            return Err(Error::Shape("tree parameter shapes changed".into()));
        }
        for (i, node) in self.tree.nodes.iter_mut().enumerate() {
            node.mu.copy_from_slice(mu.row(i));
            node.pattern.copy_from_slice(pat.row(i));
        }
        Ok(())
    }

    /// Per-tensor update masks aligned with [`ProtoTsModel::param_values`];
    /// `None` means every entry is trainable. Pattern rows of internal or
    /// locked nodes are frozen.
    pub fn update_masks(&self) -> Vec<Option<Vec<bool>>> {
        let n_enc = self.encoder.named_params().len();
        let mut masks = vec![None; n_enc + 1];
        let t = self.tree.period;
        let mask = self
            .tree
            .nodes
            .iter()
            .flat_map(|n| std::iter::repeat_n(self.tree.pattern_trainable(n.id), t))
            .collect();
        masks.push(Some(mask));
        masks
    }

    /// Splits a leaf, recording the seed in the lineage.
    pub fn split(&mut self, id: NodeId, m: usize, seed: u64) -> Result<Vec<NodeId>> {
        let ids = self.tree.split(id, m, seed, self.config.split_jitter)?;
        self.seed_lineage.push(seed);
        Ok(ids)
    }

    pub fn is_finite(&self) -> bool {
        self.param_values().iter().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_windows, synth_generate, Split, SynthConfig};

    fn small() -> (ProtoTsModel, Vec<WindowInstance>) {
        let cfg = SynthConfig {
            periods: 12,
            lookback: 8,
            horizon: 6,
            period: 12,
            ..Default::default()
        };
        let out = synth_generate(&cfg, 1).unwrap();
        let norm = Normalizer::fit(&out.bundle);
        let bundle = norm.apply(&out.bundle);
        let windows = split_windows(&bundle, &out.schema, Split::Train, 5);
        let mc = ModelConfig {
            encoder: EncoderConfig {
                d: 8,
                d_bottle: 3,
                ..Default::default()
            },
            n_roots: 3,
            mu_init_std: 0.5,
            ..Default::default()
        };
        (ProtoTsModel::init(mc, out.schema, norm, 9).unwrap(), windows)
    }

    #[test]
    fn taped_forward_matches_plain_prediction() {
        let (mut model, windows) = small();
        model.split(NodeId(1), 2, 3).unwrap();
        model.split(NodeId(4), 3, 4).unwrap();
        for n in model.tree.nodes.iter_mut() {
            for (i, v) in n.pattern.iter_mut().enumerate() {
                *v += (i as f64 + n.id.0 as f64).sin();
            }
        }
        let plain = model.predict(&windows).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &windows, false).unwrap();
        let taped = tape.value(fwd.prediction);
        for (r, p) in plain.iter().enumerate() {
            for (a, b) in taped.row(r).iter().zip(p) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(fwd.child_weights.len(), 2);
    }

    #[test]
    fn param_round_trip_and_masks() {
        let (mut model, _) = small();
        model.split(NodeId(0), 2, 1).unwrap();
        model.tree.edit_pattern(NodeId(2), vec![0.5; 12], true).unwrap();
        let values = model.param_values();
        let before = model.clone();
        model.set_param_values(&values).unwrap();
        assert_eq!(model, before);
        let masks = model.update_masks();
        assert_eq!(masks.len(), values.len());
        let pmask = masks.last().unwrap().as_ref().unwrap();
        let row = |i: usize| pmask[i * 12];
        // internal root, free root, locked root, two free children
        assert_eq!((0..5).map(row).collect::<Vec<_>>(), vec![false, true, false, true, true]);
    }
}
