//! Reverse-mode autodiff over matrix-level operations.
//!
//! The tape records every forward op as a node holding its value; `backward`
//! walks the nodes in reverse, pushing adjoints to the inputs. Values are
//! matrices (a scalar is 1x1, a bias row is 1xn). All reductions use the
//! fixed-order pairwise sum from [`crate::tensor`], so gradients are
//! bit-stable for a given graph.

use crate::error::{Error, Result};
use crate::nnet::{matmul, Activation, VectorFieldParams};
use crate::tensor::{pairwise_sum_by, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { slot: Option<usize> },
    MatMul(usize, usize),
    /// (m x n) + broadcast (1 x n)
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Activate(usize, Activation),
    ConcatCols(usize, usize),
    /// Sum of squares of all elements -> 1x1
    SumSq(usize),
    /// Per-row sum of squares -> m x 1
    RowSumSq(usize),
    /// Sum of all elements -> 1x1
    SumAll(usize),
    /// Elementwise sum of same-shaped vars
    SumVars(Vec<usize>),
    /// Elementwise -log(sigmoid(x))
    NegLogSigmoid(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_slots: usize,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// -log(sigmoid(x)) = softplus(-x), computed without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    let z = -x;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let (r, c) = self.dims(v);
        if (r, c) != (1, 1) {
            return Err(Error::contract(format!("expected scalar node, got {r}x{c}")));
        }
        Ok(self.nodes[v.0].value[0])
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(Op::Leaf { slot: None }, rows, cols, value)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(1, 1, vec![value])
    }

    /// Parameter leaf; gradient is collected under the returned slot in
    /// creation order.
    pub fn param(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        let slot = self.n_slots;
        self.n_slots += 1;
        self.push(Op::Leaf { slot: Some(slot) }, rows, cols, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul(&self.nodes[a.0].value, m, k, &self.nodes[b.0].value, n, &mut out);
        Ok(self.push(Op::MatMul(a.0, b.0), m, n, out))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (br, bn) = self.dims(bias);
        if br != 1 || bn != n {
            return Err(Error::shape(format!("add_row {m}x{n} + {br}x{bn}")));
        }
        let bv = self.nodes[bias.0].value.clone();
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        Ok(self.push(Op::AddRow(a.0, bias.0), m, n, out))
    }

    fn binary(&mut self, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        if da != self.dims(b) {
            return Err(Error::shape(format!("{op}: {da:?} vs {:?}", self.dims(b))));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.binary(a, b, "add")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a.0, b.0), m, n, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.binary(a, b, "sub")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub(a.0, b.0), m, n, out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a.0, c), m, n, out)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|x| x + c).collect();
        self.push(Op::AddConst(a.0), m, n, out)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| act.apply(x)).collect();
        self.push(Op::Activate(a.0, act), m, n, out)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n1) = self.dims(a);
        let (m2, n2) = self.dims(b);
        if m != m2 {
            return Err(Error::shape(format!("concat_cols row counts {m} vs {m2}")));
        }
        let n = n1 + n2;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend_from_slice(&self.nodes[a.0].value[i * n1..(i + 1) * n1]);
            out.extend_from_slice(&self.nodes[b.0].value[i * n2..(i + 1) * n2]);
        }
        Ok(self.push(Op::ConcatCols(a.0, b.0), m, n, out))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = pairwise_sum_by(&self.nodes[a.0].value, |x| x * x);
        self.push(Op::SumSq(a.0), 1, 1, vec![v])
    }

    pub fn row_sum_sq(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = (0..m)
            .map(|i| pairwise_sum_by(&self.nodes[a.0].value[i * n..(i + 1) * n], |x| x * x))
            .collect();
        self.push(Op::RowSumSq(a.0), m, 1, out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = crate::tensor::pairwise_sum(&self.nodes[a.0].value);
        self.push(Op::SumAll(a.0), 1, 1, vec![v])
    }

    pub fn sum_vars(&mut self, vars: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = vars.split_first() else {
            return Err(Error::contract("sum_vars over an empty list".to_string()));
        };
        let (m, n) = self.dims(first);
        let mut out = self.nodes[first.0].value.clone();
        for &v in rest {
            if self.dims(v) != (m, n) {
                return Err(Error::shape("sum_vars shape mismatch".to_string()));
            }
            for (o, x) in out.iter_mut().zip(&self.nodes[v.0].value) {
                *o += x;
            }
        }
        Ok(self.push(Op::SumVars(vars.iter().map(|v| v.0).collect()), m, n, out))
    }

    pub fn neg_log_sigmoid_of(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| neg_log_sigmoid(x)).collect();
        self.push(Op::NegLogSigmoid(a.0), m, n, out)
    }

    /// Reverse pass from a scalar loss. Returns one gradient tensor per
    /// parameter slot, in slot order; untouched parameters get zeros.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>> {
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(Error::contract(format!(
                "loss must be a scalar, got {r}x{c}"
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[loss.0] = Some(vec![1.0]);

        let mut slot_grads: Vec<Option<Tensor>> = vec![None; self.n_slots];

        for idx in (0..=loss.0).rev() {
            let Some(d_out) = adjoint[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { slot } => {
                    if let Some(s) = slot {
                        let t = Tensor::from_vec(vec![node.rows, node.cols], d_out)?;
                        slot_grads[*s] = Some(match slot_grads[*s].take() {
                            Some(acc) => acc.add(&t)?,
                            None => t,
                        });
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                    let n = self.nodes[*b].cols;
                    // dA = dC * B^T
                    let bt = transpose(&self.nodes[*b].value, k, n);
                    let mut da = vec![0.0; m * k];
                    matmul(&d_out, m, n, &bt, k, &mut da);
                    accumulate(&mut adjoint[*a], &da);
                    // dB = A^T * dC
                    let at = transpose(&self.nodes[*a].value, m, k);
                    let mut db = vec![0.0; k * n];
                    matmul(&at, k, m, &d_out, n, &mut db);
                    accumulate(&mut adjoint[*b], &db);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut adjoint[*a], &d_out);
                    let n = node.cols;
                    let m = node.rows;
                    let mut db = vec![0.0; n];
                    for j in 0..n {
                        let col: Vec<f64> = (0..m).map(|i| d_out[i * n + j]).collect();
                        db[j] = crate::tensor::pairwise_sum(&col);
                    }
                    accumulate(&mut adjoint[*bias], &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoint[*a], &d_out);
                    accumulate(&mut adjoint[*b], &d_out);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoint[*a], &d_out);
                    let neg: Vec<f64> = d_out.iter().map(|v| -v).collect();
                    accumulate(&mut adjoint[*b], &neg);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = d_out.iter().map(|v| v * c).collect();
                    accumulate(&mut adjoint[*a], &da);
                }
                Op::AddConst(a) => {
                    accumulate(&mut adjoint[*a], &d_out);
                }
                Op::Activate(a, act) => {
                    let da: Vec<f64> = d_out
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(d, &x)| d * act.derivative(x))
                        .collect();
                    accumulate(&mut adjoint[*a], &da);
                }
                Op::ConcatCols(a, b) => {
                    let (m, n1) = (self.nodes[*a].rows, self.nodes[*a].cols);
                    let n2 = self.nodes[*b].cols;
                    let n = n1 + n2;
                    let mut da = vec![0.0; m * n1];
                    let mut db = vec![0.0; m * n2];
                    for i in 0..m {
                        da[i * n1..(i + 1) * n1].copy_from_slice(&d_out[i * n..i * n + n1]);
                        db[i * n2..(i + 1) * n2].copy_from_slice(&d_out[i * n + n1..(i + 1) * n]);
                    }
                    accumulate(&mut adjoint[*a], &da);
                    accumulate(&mut adjoint[*b], &db);
                }
                Op::SumSq(a) => {
                    let d = d_out[0];
                    let da: Vec<f64> = self.nodes[*a].value.iter().map(|&x| 2.0 * x * d).collect();
                    accumulate(&mut adjoint[*a], &da);
                }
                Op::RowSumSq(a) => {
                    let n = self.nodes[*a].cols;
                    let da: Vec<f64> = self.nodes[*a]
                        .value
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| 2.0 * x * d_out[i / n])
                        .collect();
                    accumulate(&mut adjoint[*a], &da);
                }
                Op::SumAll(a) => {
                    let d = d_out[0];
                    let da = vec![d; self.nodes[*a].value.len()];
                    accumulate(&mut adjoint[*a], &da);
                }
                Op::SumVars(vs) => {
                    for &v in vs {
                        accumulate(&mut adjoint[v], &d_out);
                    }
                }
                Op::NegLogSigmoid(a) => {
                    let da: Vec<f64> = d_out
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(d, &x)| d * (sigmoid(x) - 1.0))
                        .collect();
                    accumulate(&mut adjoint[*a], &da);
                }
            }
        }

        let mut out = Vec::with_capacity(self.n_slots);
        let mut slot = 0;
        for node in &self.nodes {
            if let Op::Leaf { slot: Some(s) } = node.op {
                debug_assert_eq!(s, slot);
                out.push(match slot_grads[s].take() {
                    Some(t) => t,
                    None => Tensor::zeros(vec![node.rows, node.cols]),
                });
                slot += 1;
            }
        }
        Ok(out)
    }
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn accumulate(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(acc) => {
            for (a, s) in acc.iter_mut().zip(src) {
                *a += s;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

/// Parameter tensors of a network bound as tape leaves.
pub struct NetVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub cond_table: Option<Var>,
}

/// Gradient tensors congruent to [`VectorFieldParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Tensor, Tensor)>,
    pub cond_table: Option<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &VectorFieldParams) -> Gradients {
        Gradients {
            layers: params
                .layers()
                .iter()
                .map(|l| (Tensor::zeros(l.weight.shape().to_vec()), Tensor::zeros(l.bias.shape().to_vec())))
                .collect(),
            cond_table: params.cond().map(|c| Tensor::zeros(c.table.shape().to_vec())),
        }
    }

    /// Flattened in checkpoint order, matching `VectorFieldParams::flat`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        if let Some(c) = &self.cond_table {
            out.extend_from_slice(c.data());
        }
        out
    }
}

impl VectorFieldParams {
    /// Bind every parameter tensor as a gradient leaf, in checkpoint order.
    pub fn bind(&self, tape: &mut Tape) -> NetVars {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in self.layers() {
            weights.push(tape.param(l.in_dim(), l.out_dim(), l.weight.data().to_vec()));
            biases.push(tape.param(1, l.out_dim(), l.bias.data().to_vec()));
        }
        let cond_table = self
            .cond()
            .map(|c| tape.param(c.rows(), c.dim(), c.table.data().to_vec()));
        NetVars { weights, biases, cond_table }
    }

    /// Record the batched forward pass on the tape. `xs` is (B x data_dim).
    /// Returns the (B x data_dim) output var.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &NetVars,
        xs: &Tensor,
        ts: &[f64],
        ys: &[Option<usize>],
    ) -> Result<Var> {
        if xs.shape().len() != 2 || xs.shape()[1] != self.data_dim() {
            return Err(Error::shape(format!(
                "batch shape {:?}, expected [B, {}]",
                xs.shape(),
                self.data_dim()
            )));
        }
        let b = xs.shape()[0];
        if ts.len() != b || ys.len() != b {
            return Err(Error::shape("timestep/condition count mismatch".to_string()));
        }

        // Constant block: [x | time features].
        let fixed_cols = self.data_dim() + self.time().dim();
        let mut fixed = Vec::with_capacity(b * fixed_cols);
        for i in 0..b {
            fixed.extend_from_slice(&xs.data()[i * self.data_dim()..(i + 1) * self.data_dim()]);
            fixed.extend_from_slice(self.time().embed(ts[i])?.data());
        }
        let fixed = tape.constant(b, fixed_cols, fixed);

        let mut h = match (self.cond(), vars.cond_table) {
            (Some(c), Some(table)) => {
                let rows = c.rows();
                let mut onehot = vec![0.0; b * rows];
                for (i, y) in ys.iter().enumerate() {
                    onehot[i * rows + self.cond_row(*y)?] = 1.0;
                }
                let onehot = tape.constant(b, rows, onehot);
                let emb = tape.matmul(onehot, table)?;
                tape.concat_cols(fixed, emb)?
            }
            (None, None) => {
                if ys.iter().any(|y| y.is_some()) {
                    return Err(Error::config(
                        "condition id given but network has no condition table".to_string(),
                    ));
                }
                fixed
            }
            _ => return Err(Error::contract("NetVars does not match params".to_string())),
        };

        for ((w, bias), act) in vars
            .weights
            .iter()
            .zip(&vars.biases)
            .zip(self.activations())
        {
            let z = tape.matmul(h, *w)?;
            let z = tape.add_row(z, *bias)?;
            h = tape.activate(z, *act);
        }
        Ok(h)
    }

    /// Gradient of a scalar loss built from tape ops over this network's
    /// parameters. The closure receives the tape and the bound parameter
    /// vars and must return the scalar loss var.
    pub fn grad_scalar<F>(&self, build: F) -> Result<(f64, Gradients)>
    where
        F: FnOnce(&mut Tape, &NetVars) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let loss = build(&mut tape, &vars)?;
        let value = tape.scalar_value(loss)?;
        let slots = tape.backward(loss)?;
        Ok((value, self.grads_from_slots(slots)?))
    }

    /// Reassemble slot-ordered gradient tensors (the `bind` order: weight,
    /// bias per layer, then the condition table) into a [`Gradients`].
    fn grads_from_slots(&self, slots: Vec<Tensor>) -> Result<Gradients> {
        let expected = 2 * self.layers().len() + usize::from(self.cond().is_some());
        if slots.len() != expected {
            return Err(Error::contract(format!(
                "{} gradient slots, expected {expected}",
                slots.len()
            )));
        }
        let mut it = slots.into_iter();
        let mut layers = Vec::with_capacity(self.layers().len());
        for l in self.layers() {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            // Bias leaves are bound 1xN; restore the vector shape.
            let b = Tensor::from_vec(vec![l.out_dim()], b.into_data())?;
            layers.push((w, b));
        }
        let cond_table = self.cond().map(|_| it.next().unwrap());
        Ok(Gradients { layers, cond_table })
    }
}
