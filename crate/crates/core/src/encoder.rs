//! Multi-channel embedding, bottleneck mixer fusion and temporal aggregation.
//!
//! A window of `S = L + H` steps is embedded step by step into `[S, d]`,
//! mixed by a stack of [`FusionBlock`]s and collapsed to a single `d`-vector
//! by the learned time projection `w_agg`.
//!
//! Fusion blocks have no residual connection: a block whose weights and
//! biases are all zero maps any input to zero.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{VariableSchema, WindowInstance};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Std of the normal init for embedding tables.
const TABLE_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d: usize,
    pub d_bottle: usize,
    /// Hidden width of the time-mixing perceptron; `max(4, S / 8)` when unset.
    pub t_bottle: Option<usize>,
    pub n_blocks: usize,
    /// Separate channels per variable type. `false` concatenates every
    /// variable per step into one shared perceptron.
    pub multi_channel: bool,
    /// Compress through `d_bottle`/`t_bottle`. `false` keeps full width.
    pub bottleneck: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 32,
            d_bottle: 8,
            t_bottle: None,
            n_blocks: 1,
            multi_channel: true,
            bottleneck: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_bottle == 0 {
            return Err(Error::Config("d and d_bottle must be >= 1".into()));
        }
        if self.bottleneck && self.d_bottle >= self.d {
            return Err(Error::Config(format!(
                "d_bottle ({}) must be smaller than d ({})",
                self.d_bottle, self.d
            )));
        }
        if self.t_bottle == Some(0) {
            return Err(Error::Config("t_bottle must be >= 1".into()));
        }
        Ok(())
    }

    fn hidden_widths(&self, window_len: usize) -> (usize, usize) {
        if self.bottleneck {
            let t = self.t_bottle.unwrap_or_else(|| (window_len / 8).max(4));
            (self.d_bottle, t)
        } else {
            (self.d, window_len)
        }
    }
}

/// Two-layer perceptron `in -> hidden -> out` with a ReLU in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp2 {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: uniform_matrix(input, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: uniform_matrix(hidden, output, rng),
            b2: Tensor::zeros(&[output]),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Feature-axis then time-axis bottleneck perceptrons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBlock {
    pub mlp_feature: Mlp2,
    pub mlp_time: Mlp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Channels {
    Multi {
        /// Endogenous channel, `1 -> d`.
        gamma: Mlp2,
        /// One `(vocab + 1) x d` table per discrete variable; row 0 is UNK.
        tables: Vec<Tensor>,
        /// One `1 -> d` perceptron per continuous variable.
        psi: Vec<Mlp2>,
    },
    /// Single shared perceptron over `[y, codes / vocab, continuous]`.
    Single(Mlp2),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub d: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub vocab_sizes: Vec<usize>,
    pub n_continuous: usize,
    pub channels: Channels,
    pub blocks: Vec<FusionBlock>,
    /// `[L + H, 1]` temporal aggregation.
    pub w_agg: Tensor,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, schema: &VariableSchema, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        schema.validate()?;
        let d = cfg.d;
        let s = schema.window_len();
        let vocab_sizes: Vec<usize> = schema.discrete_vars.iter().map(|v| v.vocab_size).collect();
        let n_continuous = schema.continuous_vars.len();
        let channels = if cfg.multi_channel {
            let gamma = Mlp2::init(1, d, d, rng);
            let normal = Normal::new(0.0, TABLE_INIT_STD).expect("finite std");
            let tables = vocab_sizes
                .iter()
                .map(|&v| {
                    let data = (0..(v + 1) * d).map(|_| normal.sample(rng)).collect();
                    Tensor::matrix(v + 1, d, data).expect("shape")
                })
                .collect();
            let psi = (0..n_continuous).map(|_| Mlp2::init(1, d, d, rng)).collect();
            Channels::Multi { gamma, tables, psi }
        } else {
            let input = 1 + vocab_sizes.len() + n_continuous;
            Channels::Single(Mlp2::init(input, d, d, rng))
        };
        let (fb, tb) = cfg.hidden_widths(s);
        let blocks = (0..cfg.n_blocks)
            .map(|_| FusionBlock {
                mlp_feature: Mlp2::init(d, fb, d, rng),
                mlp_time: Mlp2::init(s, tb, s, rng),
            })
            .collect();
        Ok(Self {
            d,
            lookback: schema.lookback,
            horizon: schema.horizon,
            vocab_sizes,
            n_continuous,
            channels,
            blocks,
            w_agg: uniform_matrix(s, 1, rng),
        })
    }

    pub fn window_len(&self) -> usize {
        self.lookback + self.horizon
    }

    /// Every parameter tensor with a stable dotted name.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        fn mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: String, m: &'a Mlp2) {
            for (n, t) in ["w1", "b1", "w2", "b2"].iter().zip(m.tensors()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        match &self.channels {
            Channels::Multi { gamma, tables, psi } => {
                mlp(&mut out, "encoder.gamma".into(), gamma);
                for (j, t) in tables.iter().enumerate() {
                    out.push((format!("encoder.table{j}"), t));
                }
                for (j, m) in psi.iter().enumerate() {
                    mlp(&mut out, format!("encoder.psi{j}"), m);
                }
            }
            Channels::Single(m) => mlp(&mut out, "encoder.single".into(), m),
        }
        for (l, b) in self.blocks.iter().enumerate() {
            mlp(&mut out, format!("encoder.block{l}.feature"), &b.mlp_feature);
            mlp(&mut out, format!("encoder.block{l}.time"), &b.mlp_time);
        }
        out.push(("encoder.w_agg".into(), &self.w_agg));
        out
    }

    /// Mutable view in the same order as [`EncoderParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.channels {
            Channels::Multi { gamma, tables, psi } => {
                out.extend(gamma.tensors_mut());
                out.extend(tables.iter_mut());
                for m in psi.iter_mut() {
                    out.extend(m.tensors_mut());
                }
            }
            Channels::Single(m) => out.extend(m.tensors_mut()),
        }
        for b in self.blocks.iter_mut() {
            out.extend(b.mlp_feature.tensors_mut());
            out.extend(b.mlp_time.tensors_mut());
        }
        out.push(&mut self.w_agg);
        out
    }

    /// Records every parameter on `tape`. Returned vars follow
    /// [`EncoderParams::named_params`] order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        let mut vars = Vec::new();
        let mut leaf = |tape: &mut Tape, t: &Tensor| {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            vars.push(v);
            v
        };
        let bind_mlp = |tape: &mut Tape, m: &Mlp2, leaf: &mut dyn FnMut(&mut Tape, &Tensor) -> Var| BoundMlp {
            w1: leaf(tape, &m.w1),
            b1: leaf(tape, &m.b1),
            w2: leaf(tape, &m.w2),
            b2: leaf(tape, &m.b2),
        };
        let channels = match &self.channels {
            Channels::Multi { gamma, tables, psi } => {
                let gamma = bind_mlp(tape, gamma, &mut leaf);
                let tables = tables.iter().map(|t| leaf(tape, t)).collect();
                let psi = psi.iter().map(|m| bind_mlp(tape, m, &mut leaf)).collect();
                BoundChannels::Multi { gamma, tables, psi }
            }
            Channels::Single(m) => BoundChannels::Single(bind_mlp(tape, m, &mut leaf)),
        };
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                (
                    bind_mlp(tape, &b.mlp_feature, &mut leaf),
                    bind_mlp(tape, &b.mlp_time, &mut leaf),
                )
            })
            .collect();
        let w_agg = leaf(tape, &self.w_agg);
        BoundEncoder {
            d: self.d,
            lookback: self.lookback,
            horizon: self.horizon,
            vocab_sizes: self.vocab_sizes.clone(),
            channels,
            blocks,
            w_agg,
            vars,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl BoundMlp {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, self.w2)?;
        tape.add_row(o, self.b2)
    }
}

#[derive(Debug, Clone)]
enum BoundChannels {
    Multi {
        gamma: BoundMlp,
        tables: Vec<Var>,
        psi: Vec<BoundMlp>,
    },
    Single(BoundMlp),
}

/// Encoder parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    d: usize,
    lookback: usize,
    horizon: usize,
    vocab_sizes: Vec<usize>,
    channels: BoundChannels,
    blocks: Vec<(BoundMlp, BoundMlp)>,
    w_agg: Var,
    /// Parameter vars in `named_params` order.
    pub vars: Vec<Var>,
}

/// Table row for a discrete code; codes outside the vocabulary hit UNK.
pub fn table_row(code: u32, vocab: usize) -> usize {
    if (code as usize) < vocab {
        code as usize + 1
    } else {
        0
    }
}

impl BoundEncoder {
    fn check(&self, w: &WindowInstance) -> Result<()> {
        let s = self.lookback + self.horizon;
        if w.y_past.len() != self.lookback
            || w.y_target.len() != self.horizon
            || w.x_dis.len() != s
            || w.x_con.len() != s
            || w.x_dis.iter().any(|r| r.len() != self.vocab_sizes.len())
        {
            return Err(Error::Shape(format!(
                "window at {} does not match encoder geometry L={} H={}",
                w.start, self.lookback, self.horizon
            )));
        }
        Ok(())
    }

    /// Per-step embeddings of a batch, `[B * S, d]`.
    pub fn embed(&self, tape: &mut Tape, windows: &[WindowInstance]) -> Result<Var> {
        for w in windows {
            self.check(w)?;
        }
        if windows.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let s = self.lookback + self.horizon;
        let rows = windows.len() * s;
        let y_col: Vec<f64> = windows
            .iter()
            .flat_map(|w| w.y_past.iter().copied().chain(std::iter::repeat_n(0.0, self.horizon)))
            .collect();
        match &self.channels {
            BoundChannels::Multi { gamma, tables, psi } => {
                let y = tape.constant(Tensor::matrix(rows, 1, y_col)?);
                let mask: Vec<f64> = windows
                    .iter()
                    .flat_map(|_| {
                        std::iter::repeat_n(1.0, self.lookback).chain(std::iter::repeat_n(0.0, self.horizon))
                    })
                    .collect();
                let mask = tape.constant(Tensor::matrix(rows, 1, mask)?);
                let g = gamma.forward(tape, y)?;
                let mut z = tape.mul_col(g, mask)?;
                for (j, (&table, &vocab)) in tables.iter().zip(&self.vocab_sizes).enumerate() {
                    let idx: Vec<usize> = windows
                        .iter()
                        .flat_map(|w| w.x_dis.iter().map(move |r| table_row(r[j], vocab)))
                        .collect();
                    let e = tape.gather_rows(table, &idx)?;
                    z = tape.add(z, e)?;
                }
                for (j, m) in psi.iter().enumerate() {
                    let col: Vec<f64> = windows.iter().flat_map(|w| w.x_con.iter().map(move |r| r[j])).collect();
                    let x = tape.constant(Tensor::matrix(rows, 1, col)?);
                    let e = m.forward(tape, x)?;
                    z = tape.add(z, e)?;
                }
                Ok(z)
            }
            BoundChannels::Single(m) => {
                let width = 1 + self.vocab_sizes.len() + windows[0].x_con.first().map_or(0, |r| r.len());
                let mut data = Vec::with_capacity(rows * width);
                for (r, w) in windows.iter().flat_map(|w| (0..s).map(move |t| (t, w))) {
                    data.push(y_col_value(w, r, self.lookback));
                    for (&code, &vocab) in w.x_dis[r].iter().zip(&self.vocab_sizes) {
                        data.push(table_row(code, vocab) as f64 / (vocab + 1) as f64);
                    }
                    data.extend_from_slice(&w.x_con[r]);
                }
                let x = tape.constant(Tensor::matrix(rows, width, data)?);
                m.forward(tape, x)
            }
        }
    }

    /// Applies every fusion block to `[B * S, d]` embeddings.
    pub fn fuse(&self, tape: &mut Tape, z: Var, batch: usize) -> Result<Var> {
        let s = self.lookback + self.horizon;
        let d = self.d;
        let mut z = z;
        for (feature, time) in &self.blocks {
            let f = feature.forward(tape, z)?;
            let f = tape.reshape(f, &[batch, s, d])?;
            let ft = tape.swap_last2(f)?;
            let ft = tape.reshape(ft, &[batch * d, s])?;
            let m = time.forward(tape, ft)?;
            let m = tape.reshape(m, &[batch, d, s])?;
            let m = tape.swap_last2(m)?;
            z = tape.reshape(m, &[batch * s, d])?;
        }
        Ok(z)
    }

    /// Collapses fused `[B * S, d]` embeddings to queries `[B, d]`.
    pub fn aggregate(&self, tape: &mut Tape, z: Var, batch: usize) -> Result<Var> {
        let s = self.lookback + self.horizon;
        let z = tape.reshape(z, &[batch, s, self.d])?;
        let zt = tape.swap_last2(z)?;
        let zt = tape.reshape(zt, &[batch * self.d, s])?;
        let q = tape.matmul(zt, self.w_agg)?;
        tape.reshape(q, &[batch, self.d])
    }

    /// Query representations `[B, d]` for a batch of windows.
    pub fn encode(&self, tape: &mut Tape, windows: &[WindowInstance]) -> Result<Var> {
        let z = self.embed(tape, windows)?;
        let z = self.fuse(tape, z, windows.len())?;
        self.aggregate(tape, z, windows.len())
    }
}

fn y_col_value(w: &WindowInstance, t: usize, lookback: usize) -> f64 {
    if t < lookback {
        w.y_past[t]
    } else {
        0.0
    }
}

/// Embedding of step `t` (1-based, `1..=L+H`) of one window.
pub fn embed_timestep(instance: &WindowInstance, t: usize, params: &EncoderParams) -> Result<Tensor> {
    let s = params.window_len();
    if t == 0 || t > s {
        return Err(Error::Contract(format!("step {t} outside 1..={s}")));
    }
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false);
    let z = enc.embed(&mut tape, std::slice::from_ref(instance))?;
    Ok(Tensor::vector(tape.value(z).row(t - 1).to_vec()))
}

/// Applies the fusion stack to one `[S, d]` embedding matrix.
pub fn fuse(z: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let s = params.window_len();
    if z.shape() != [s, params.d] {
        return Err(Error::Shape(format!(
            "fuse expects [{s}, {}], got {:?}",
            params.d,
            z.shape()
        )));
    }
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let out = enc.fuse(&mut tape, zv, 1)?;
    Ok(tape.value(out).clone())
}

/// Query representation of one window, a length-`d` vector.
pub fn encode(instance: &WindowInstance, params: &EncoderParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false);
    let q = enc.encode(&mut tape, std::slice::from_ref(instance))?;
    Ok(Tensor::vector(tape.value(q).data().to_vec()))
}
