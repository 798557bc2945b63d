//! Dense row-major tensors and a reverse-mode tape.
//!
//! Every differentiable computation in the crate is recorded on a [`Tape`].
//! Nodes are stored in an arena in creation order, so the recorded order is
//! already topological and [`Tape::backward`] walks it once in reverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        let cols = *self.shape.last().unwrap_or(&1);
        (self.data.len() / cols.max(1), cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.as_matrix_dims();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [n]` broadcast over rows.
    AddRow(Var, Var),
    /// `[m, n] * [m, 1]` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reshape(Var),
    /// Batched transpose of the last two axes, `[b, m, n] -> [b, n, m]`.
    SwapLast2 {
        x: Var,
        batch: usize,
        m: usize,
        n: usize,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    GatherCols {
        x: Var,
        index: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SqDist(Var, Var),
    SoftmaxNeg(Var),
    PhaseMix {
        weights: Var,
        patterns: Var,
        phases: Vec<usize>,
        horizon: usize,
    },
    AbsDiffSum {
        x: Var,
        target: Vec<f64>,
    },
    SqDiffSum {
        x: Var,
        target: Vec<f64>,
    },
    PlogpSum(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of recorded operations with a reverse-mode backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    t.as_matrix_dims()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::Shape(format!(
                "matmul of {:?} and {:?}",
                ta.shape, tb.shape
            )));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&ta.data, &tb.data, &mut out, m, k, n);
        let t = Tensor {
            shape: vec![m, n],
            data: out,
        };
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::Shape(format!("add of {:?} and {:?}", ta.shape, tb.shape)));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = dims2(tx);
        if tb.len() != n {
            return Err(Error::Shape(format!(
                "row broadcast of {:?} onto {:?}",
                tb.shape, tx.shape
            )));
        }
        let mut data = tx.data.clone();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&tb.data) {
                *v += b;
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        Ok(self.push(t, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Multiplies every row `r` of `[m, n]` by `col[r]` of an `[m, 1]` tensor.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(col));
        let (m, n) = dims2(tx);
        if tc.len() != m {
            return Err(Error::Shape(format!(
                "column broadcast of {:?} onto {:?}",
                tc.shape, tx.shape
            )));
        }
        let mut data = tx.data.clone();
        for (row, c) in data.chunks_mut(n).zip(&tc.data) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        Ok(self.push(t, Op::MulCol(x, col), &[x, col]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|v| v * factor).collect(),
        };
        self.push(t, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n: usize = shape.iter().product();
        if n != tx.len() {
            return Err(Error::Shape(format!("reshape {:?} to {shape:?}", tx.shape)));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: tx.data.clone(),
        };
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Transposes the last two axes of a `[batch, m, n]` tensor.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape.len() != 3 {
            return Err(Error::Shape(format!("swap_last2 needs 3 axes, got {:?}", tx.shape)));
        }
        let (batch, m, n) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let data = transpose_batched(&tx.data, batch, m, n);
        let t = Tensor {
            shape: vec![batch, n, m],
            data,
        };
        Ok(self.push(t, Op::SwapLast2 { x, batch, m, n }, &[x]))
    }

    /// Copies the requested rows of a `[v, d]` table into an `[index.len(), d]`
    /// matrix. Backward scatters into the selected rows only.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = dims2(tt);
        if let Some(&bad) = index.iter().find(|&&i| i >= v) {
            return Err(Error::OutOfVocabulary { index: bad, size: v });
        }
        if index.is_empty() {
            return Err(Error::Shape("gather of zero rows".into()));
        }
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(&tt.data[i * d..(i + 1) * d]);
        }
        let t = Tensor {
            shape: vec![index.len(), d],
            data,
        };
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                index: index.to_vec(),
            },
            &[table],
        ))
    }

    /// Single-row lookup returning a `[d]` vector.
    pub fn gather_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let d = dims2(self.value(table)).1;
        let rows = self.gather_rows(table, &[index])?;
        self.reshape(rows, &[d])
    }

    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = dims2(tx);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("column {bad} out of range for {:?}", tx.shape)));
        }
        if index.is_empty() {
            return Err(Error::Shape("gather of zero columns".into()));
        }
        let k = index.len();
        let mut data = Vec::with_capacity(m * k);
        for r in 0..m {
            let row = &tx.data[r * n..(r + 1) * n];
            data.extend(index.iter().map(|&c| row[c]));
        }
        let t = Tensor {
            shape: vec![m, k],
            data,
        };
        Ok(self.push(
            t,
            Op::GatherCols {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let m = dims2(self.value(first)).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = dims2(self.value(p));
            if pm != m {
                return Err(Error::Shape(format!(
                    "concat rows {pm} vs {m} for {:?}",
                    self.value(p).shape
                )));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor {
            shape: vec![m, total],
            data,
        };
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Pairwise squared Euclidean distance between the rows of `z: [b, d]` and
    /// `mu: [n, d]`, giving `[b, n]`.
    pub fn sq_dist(&mut self, z: Var, mu: Var) -> Result<Var> {
        let (tz, tm) = (self.value(z), self.value(mu));
        let (b, d) = dims2(tz);
        let (n, dm) = dims2(tm);
        if d != dm {
            return Err(Error::Shape(format!(
                "distance between {:?} and {:?}",
                tz.shape, tm.shape
            )));
        }
        let mut data = Vec::with_capacity(b * n);
        for r in 0..b {
            let zr = &tz.data[r * d..(r + 1) * d];
            for c in 0..n {
                let mr = &tm.data[c * d..(c + 1) * d];
                data.push(zr.iter().zip(mr).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        let t = Tensor {
            shape: vec![b, n],
            data,
        };
        Ok(self.push(t, Op::SqDist(z, mu), &[z, mu]))
    }

    /// Row-wise `softmax(-d)` over the last axis.
    pub fn softmax_neg(&mut self, d: Var) -> Var {
        let td = self.value(d);
        let (_, n) = dims2(td);
        let mut data = Vec::with_capacity(td.len());
        for row in td.data.chunks(n) {
            data.extend(softmax_neg(row));
        }
        let t = Tensor {
            shape: td.shape.clone(),
            data,
        };
        self.push(t, Op::SoftmaxNeg(d), &[d])
    }

    /// `out[b, t] = Σ_l weights[b, l] · patterns[l, (phases[b] + t) mod T]`.
    pub fn phase_mix(
        &mut self,
        weights: Var,
        patterns: Var,
        phases: &[usize],
        horizon: usize,
    ) -> Result<Var> {
        let (tw, tp) = (self.value(weights), self.value(patterns));
        let (b, nl) = dims2(tw);
        let (np, period) = dims2(tp);
        if nl != np || phases.len() != b || horizon == 0 {
            return Err(Error::Shape(format!(
                "phase mix of weights {:?}, patterns {:?}, {} phases",
                tw.shape,
                tp.shape,
                phases.len()
            )));
        }
        let mut data = vec![0.0; b * horizon];
        for (r, &phase) in phases.iter().enumerate() {
            let out = &mut data[r * horizon..(r + 1) * horizon];
            for l in 0..nl {
                let w = tw.data[r * nl + l];
                let p = &tp.data[l * period..(l + 1) * period];
                for (t, o) in out.iter_mut().enumerate() {
                    *o += w * p[(phase + t) % period];
                }
            }
        }
        let t = Tensor {
            shape: vec![b, horizon],
            data,
        };
        Ok(self.push(
            t,
            Op::PhaseMix {
                weights,
                patterns,
                phases: phases.to_vec(),
                horizon,
            },
            &[weights, patterns],
        ))
    }

    /// `Σ |x - target|` as a scalar. Subgradient at zero is zero.
    pub fn abs_diff_sum(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != target.len() {
            return Err(Error::Shape(format!(
                "L1 of {:?} against {} targets",
                tx.shape,
                target.len()
            )));
        }
        let s = tx.data.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::AbsDiffSum {
                x,
                target: target.to_vec(),
            },
            &[x],
        ))
    }

    pub fn sq_diff_sum(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != target.len() {
            return Err(Error::Shape(format!(
                "L2 of {:?} against {} targets",
                tx.shape,
                target.len()
            )));
        }
        let s = tx.data.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::SqDiffSum {
                x,
                target: target.to_vec(),
            },
            &[x],
        ))
    }

    /// `Σ f · ln(max(f, 1e-12))` over every element.
    pub fn plogp_sum(&mut self, f: Var) -> Var {
        let s = self
            .value(f)
            .data
            .iter()
            .map(|&p| p * p.max(PROB_CLAMP).ln())
            .sum();
        self.push(Tensor::scalar(s), Op::PlogpSum(f), &[f])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from a scalar `loss`. Gradients are reset first, then
    /// accumulated additively across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad).map(|data| Tensor {
                    shape: node.value.shape.clone(),
                    data,
                })
            })
            .collect();
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                acc(*a, &mut |ga| {
                    // ga += g · bᵀ
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let brow = &tb.data[c * n..(c + 1) * n];
                            ga[r * k + c] += dot(grow, brow);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // gb += aᵀ · g
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let av = ta.data[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            let out = &mut gb[c * n..(c + 1) * n];
                            for (o, gv) in out.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MulCol(x, col) => {
                let (tx, tc) = (&nodes[x.0].value, &nodes[col.0].value);
                let n = dims2(tx).1;
                acc(*x, &mut |gx| {
                    for ((gr, gin), c) in gx.chunks_mut(n).zip(g.chunks(n)).zip(&tc.data) {
                        for (o, v) in gr.iter_mut().zip(gin) {
                            *o += v * c;
                        }
                    }
                });
                acc(*col, &mut |gc| {
                    for (r, (xr, gr)) in tx.data.chunks(n).zip(g.chunks(n)).enumerate() {
                        gc[r] += dot(xr, gr);
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |gx| {
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += v * f;
                }
            }),
            Op::Relu(x) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, v), xv) in gx.iter_mut().zip(g).zip(&tx.data) {
                        if *xv > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::SwapLast2 { x, batch, m, n } => {
                let back = transpose_batched(g, *batch, *n, *m);
                acc(*x, &mut |gx| add_into(gx, &back));
            }
            Op::GatherRows { table, index } => {
                let d = dims2(&nodes[table.0].value).1;
                acc(*table, &mut |gt| {
                    for (r, &row) in index.iter().enumerate() {
                        add_into(&mut gt[row * d..(row + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::GatherCols { x, index } => {
                let n = dims2(&nodes[x.0].value).1;
                let k = index.len();
                acc(*x, &mut |gx| {
                    for (gr, gin) in gx.chunks_mut(n).zip(g.chunks(k)) {
                        for (&c, v) in index.iter().zip(gin) {
                            gr[c] += v;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = nodes[i].value.shape[1];
                let mut offset = 0;
                for p in parts {
                    let w = dims2(&nodes[p.0].value).1;
                    acc(*p, &mut |gp| {
                        for (gr, gin) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(gr, &gin[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SqDist(z, mu) => {
                let (tz, tm) = (&nodes[z.0].value, &nodes[mu.0].value);
                let (b, d) = dims2(tz);
                let n = dims2(tm).0;
                acc(*z, &mut |gz| {
                    for r in 0..b {
                        for c in 0..n {
                            let gv = 2.0 * g[r * n + c];
                            for k in 0..d {
                                gz[r * d + k] += gv * (tz.data[r * d + k] - tm.data[c * d + k]);
                            }
                        }
                    }
                });
                acc(*mu, &mut |gm| {
                    for r in 0..b {
                        for c in 0..n {
                            let gv = 2.0 * g[r * n + c];
                            for k in 0..d {
                                gm[c * d + k] -= gv * (tz.data[r * d + k] - tm.data[c * d + k]);
                            }
                        }
                    }
                });
            }
            Op::SoftmaxNeg(d) => {
                let y = &nodes[i].value;
                let n = dims2(y).1;
                acc(*d, &mut |gd| {
                    // y = softmax(-d): dL/dd_j = -y_j (g_j - Σ_k g_k y_k)
                    for ((gr, yr), gin) in gd.chunks_mut(n).zip(y.data.chunks(n)).zip(g.chunks(n)) {
                        let s = dot(yr, gin);
                        for ((o, yv), gv) in gr.iter_mut().zip(yr).zip(gin) {
                            *o -= yv * (gv - s);
                        }
                    }
                });
            }
            Op::PhaseMix {
                weights,
                patterns,
                phases,
                horizon,
            } => {
                let (tw, tp) = (&nodes[weights.0].value, &nodes[patterns.0].value);
                let nl = dims2(tw).1;
                let period = dims2(tp).1;
                let h = *horizon;
                acc(*weights, &mut |gw| {
                    for (r, &phase) in phases.iter().enumerate() {
                        let gr = &g[r * h..(r + 1) * h];
                        for l in 0..nl {
                            let p = &tp.data[l * period..(l + 1) * period];
                            gw[r * nl + l] +=
                                gr.iter().enumerate().map(|(t, gv)| gv * p[(phase + t) % period]).sum::<f64>();
                        }
                    }
                });
                acc(*patterns, &mut |gp| {
                    for (r, &phase) in phases.iter().enumerate() {
                        let gr = &g[r * h..(r + 1) * h];
                        for l in 0..nl {
                            let w = tw.data[r * nl + l];
                            let p = &mut gp[l * period..(l + 1) * period];
                            for (t, gv) in gr.iter().enumerate() {
                                p[(phase + t) % period] += w * gv;
                            }
                        }
                    }
                });
            }
            Op::AbsDiffSum { x, target } => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, xv), tv) in gx.iter_mut().zip(&tx.data).zip(target) {
                        let diff = xv - tv;
                        if diff > 0.0 {
                            *o += g[0];
                        } else if diff < 0.0 {
                            *o -= g[0];
                        }
                    }
                });
            }
            Op::SqDiffSum { x, target } => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, xv), tv) in gx.iter_mut().zip(&tx.data).zip(target) {
                        *o += 2.0 * (xv - tv) * g[0];
                    }
                });
            }
            Op::PlogpSum(f) => {
                let tf = &nodes[f.0].value;
                acc(*f, &mut |gf| {
                    for (o, &p) in gf.iter_mut().zip(&tf.data) {
                        // d/dp [p ln(max(p, c))]
                        let d = if p > PROB_CLAMP { p.ln() + 1.0 } else { PROB_CLAMP.ln() };
                        *o += g[0] * d;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

fn transpose_batched(src: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for bi in 0..batch {
        let s = &src[bi * m * n..(bi + 1) * m * n];
        let o = &mut out[bi * m * n..(bi + 1) * m * n];
        for r in 0..m {
            for c in 0..n {
                o[c * m + r] = s[r * n + c];
            }
        }
    }
    out
}

/// Numerically shifted `softmax(-d)` of a single group of distances.
pub fn softmax_neg(d: &[f64]) -> Vec<f64> {
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.iter().map(|&x| (min - x).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
