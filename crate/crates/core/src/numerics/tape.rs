//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every backward rule is itself expressed with tape operations, so the
//! gradient returned by [`Tape::grad`] is an ordinary node that can be
//! differentiated again. The gradient penalty relies on this: it takes the
//! norm of an input gradient and backpropagates through it into the
//! discriminator weights.

use std::collections::BTreeMap;

use super::array::Array2;
use super::params::ParamStore;
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
#[allow(dead_code)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MulConst(Var, Array2),
    BroadcastRows(Var, usize),
    SumRows(Var),
    BroadcastCols(Var, usize),
    SumCols(Var),
    BroadcastScalar(Var, usize, usize),
    SumAll(Var),
    Unfold(Var, usize),
    Fold(Var, usize),
    SliceRows(Var, usize, usize),
    PadRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    PadCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Sqrt(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            ConcatRows(v) | ConcatCols(v) => v.clone(),
            Transpose(a)
            | Scale(a, _)
            | AddScalar(a, _)
            | MulConst(a, _)
            | BroadcastRows(a, _)
            | SumRows(a)
            | BroadcastCols(a, _)
            | SumCols(a)
            | BroadcastScalar(a, _, _)
            | SumAll(a)
            | Unfold(a, _)
            | Fold(a, _)
            | SliceRows(a, _, _)
            | PadRows(a, _, _)
            | SliceCols(a, _, _)
            | PadCols(a, _, _)
            | GatherRows(a, _)
            | ScatterRows(a, _, _)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Recip(a)
            | Sqrt(a)
            | LeakyRelu(a, _)
            | Clamp(a, _, _)
            | SoftmaxRows(a) => vec![*a],
        }
    }
}

/// Leaf nodes created for every entry of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl Binding {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' is not bound")))
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Array2>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2 {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0].item()
    }

    fn push(&mut self, value: Array2, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.leaf(Array2::scalar(v))
    }

    /// Creates one leaf per parameter. Gradients can only flow back into
    /// a store through a trainable binding.
    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> Binding {
        let mut vars = BTreeMap::new();
        for (name, value) in store.values() {
            let v = self.leaf(value.clone());
            vars.insert(name.to_string(), v);
        }
        Binding { vars, trainable }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.values[a.0].transpose();
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.values[a.0].check_same_shape(&self.values[b.0], what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].map(|x| x + c);
        self.push(out, Op::AddScalar(a, c))
    }

    /// Elementwise product with a constant (non-differentiable) matrix.
    pub fn mul_const(&mut self, a: Var, c: Array2) -> Result<Var> {
        self.values[a.0].check_same_shape(&c, "mul_const")?;
        let out = self.values[a.0].zip_map(&c, |x, y| x * y);
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    /// `[1 x C] -> [n x C]`
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if src.rows() != 1 {
            return dim_err(format!(
                "broadcast_rows expects one row, got {:?}",
                src.shape()
            ));
        }
        let mut data = Vec::with_capacity(n * src.cols());
        for _ in 0..n {
            data.extend_from_slice(src.data());
        }
        let out = Array2::from_vec(n, src.cols(), data)?;
        Ok(self.push(out, Op::BroadcastRows(a, n)))
    }

    /// Column sums: `[n x C] -> [1 x C]`
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let src = &self.values[a.0];
        let mut acc = vec![0.0; src.cols()];
        for row in src.iter_rows() {
            for (s, v) in acc.iter_mut().zip(row) {
                *s += v;
            }
        }
        let out = Array2::from_vec(1, acc.len(), acc).expect("shape");
        self.push(out, Op::SumRows(a))
    }

    /// `[n x 1] -> [n x C]`
    pub fn broadcast_cols(&mut self, a: Var, c: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if src.cols() != 1 {
            return dim_err(format!(
                "broadcast_cols expects one column, got {:?}",
                src.shape()
            ));
        }
        let mut data = Vec::with_capacity(src.rows() * c);
        for &v in src.data() {
            data.extend(std::iter::repeat_n(v, c));
        }
        let out = Array2::from_vec(src.rows(), c, data)?;
        Ok(self.push(out, Op::BroadcastCols(a, c)))
    }

    /// Row sums: `[n x C] -> [n x 1]`
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = &self.values[a.0];
        let data: Vec<f64> = src.iter_rows().map(|r| r.iter().sum()).collect();
        let out = Array2::from_vec(src.rows(), 1, data).expect("shape");
        self.push(out, Op::SumCols(a))
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if src.len() != 1 {
            return dim_err(format!(
                "broadcast_scalar expects 1x1, got {:?}",
                src.shape()
            ));
        }
        let out = Array2::filled(rows, cols, src.item());
        Ok(self.push(out, Op::BroadcastScalar(a, rows, cols)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::scalar(self.values[a.0].sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Centered im2col: row `l` of the output holds input rows
    /// `l - (k-1)/2 ..= l + (k-1)/2`, zero outside the sequence.
    pub fn unfold(&mut self, a: Var, k: usize) -> Result<Var> {
        let out = unfold_value(&self.values[a.0], k)?;
        Ok(self.push(out, Op::Unfold(a, k)))
    }

    /// Adjoint of [`Tape::unfold`].
    pub fn fold(&mut self, a: Var, k: usize) -> Result<Var> {
        let out = fold_value(&self.values[a.0], k)?;
        Ok(self.push(out, Op::Fold(a, k)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if start + len > src.rows() {
            return dim_err(format!(
                "slice_rows {start}+{len} beyond {} rows",
                src.rows()
            ));
        }
        let out = src.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(a, start, len)))
    }

    pub fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if start + src.rows() > total {
            return dim_err("pad_rows target too short");
        }
        let mut out = Array2::zeros(total, src.cols());
        let c = src.cols();
        out.data_mut()[start * c..(start + src.rows()) * c].copy_from_slice(src.data());
        Ok(self.push(out, Op::PadRows(a, start, total)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if start + len > src.cols() {
            return dim_err(format!(
                "slice_cols {start}+{len} beyond {} cols",
                src.cols()
            ));
        }
        let mut out = Array2::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start, len)))
    }

    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if start + src.cols() > total {
            return dim_err("pad_cols target too narrow");
        }
        let mut out = Array2::zeros(src.rows(), total);
        for r in 0..src.rows() {
            out.row_mut(r)[start..start + src.cols()].copy_from_slice(src.row(r));
        }
        Ok(self.push(out, Op::PadCols(a, start, total)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| self.values[p.0].cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = &self.values[p.0];
            if v.cols() != cols {
                return dim_err("concat_rows: column mismatch");
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Array2::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.values[p.0].rows());
        let total: usize = parts.iter().map(|p| self.values[p.0].cols()).sum();
        let mut out = Array2::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let v = &self.values[p.0];
            if v.rows() != rows {
                return dim_err("concat_cols: row mismatch");
            }
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let src = &self.values[table.0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= src.rows()) {
            return dim_err(format!(
                "gather index {bad} outside table of {} rows",
                src.rows()
            ));
        }
        let mut out = Array2::zeros(ids.len(), src.cols());
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec())))
    }

    pub fn scatter_rows(&mut self, a: Var, ids: &[usize], n: usize) -> Result<Var> {
        let src = &self.values[a.0];
        if src.rows() != ids.len() || ids.iter().any(|&i| i >= n) {
            return dim_err("scatter_rows: bad indices");
        }
        let mut out = Array2::zeros(n, src.cols());
        for (r, &i) in ids.iter().enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterRows(a, ids.to_vec(), n)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|x| 1.0 / x);
        self.push(out, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.values[a.0].map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.values[a.0].map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = super::ops::softmax_rows(&self.values[a.0]);
        self.push(out, Op::SoftmaxRows(a))
    }

    /// `x [L x Cin] -> x * W + b` for `w [Cin x Cout]`, `b [1 x Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let rows = self.shape(y).0;
        let bb = self.broadcast_rows(b, rows)?;
        self.add(y, bb)
    }

    /// Centered, zero-padded 1-D convolution. `w` is `[(K*Cin) x Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, k: usize) -> Result<Var> {
        let cin = self.shape(x).1;
        if self.shape(w).0 != k * cin {
            return dim_err(format!(
                "conv1d: kernel rows {} != {k} * {cin}",
                self.shape(w).0
            ));
        }
        let u = self.unfold(x, k)?;
        self.linear(u, w, b)
    }

    /// Builds gradient nodes of the scalar `output` with respect to `wrt`.
    ///
    /// The returned nodes live on this tape and may be differentiated again.
    /// Inputs with no path to `output` get an all-zero gradient.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.values[output.0].len() != 1 {
            return Err(Error::Contract(format!(
                "gradient requires a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] && self.ops[i].inputs().iter().any(|v| needs[v.0]) {
                needs[i] = true;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if needs[output.0] {
            grads[output.0] = Some(self.leaf(Array2::scalar(1.0)));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.ops[i].clone();
            for (input, contrib) in self.vjp(Var(i), &op, g)? {
                if !needs[input.0] {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let (r, c) = self.shape(*w);
                    Ok(self.leaf(Array2::zeros(r, c)))
                }
            })
            .collect()
    }

    /// Accumulates d`loss`/d`param` into the store's gradient buffers for every
    /// parameter bound trainably in `binding`.
    pub fn backward(&mut self, loss: Var, binding: &Binding, store: &mut ParamStore) -> Result<()> {
        if !binding.trainable {
            return Err(Error::Contract("backward through a frozen binding".into()));
        }
        let names: Vec<String> = binding.vars.keys().cloned().collect();
        let vars: Vec<Var> = binding.vars.values().copied().collect();
        let grads = self.grad(loss, &vars)?;
        for (name, g) in names.iter().zip(grads) {
            store.accumulate_grad(name, &self.values[g.0])?;
        }
        Ok(())
    }

    /// [`Tape::backward`] for several bindings with a single sweep.
    pub fn backward_multi(
        &mut self,
        loss: Var,
        targets: &mut [(&Binding, &mut ParamStore)],
    ) -> Result<()> {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for (i, (binding, _)) in targets.iter().enumerate() {
            if !binding.trainable {
                return Err(Error::Contract("backward through a frozen binding".into()));
            }
            for (name, v) in &binding.vars {
                names.push((i, name.clone()));
                vars.push(*v);
            }
        }
        let grads = self.grad(loss, &vars)?;
        for ((i, name), g) in names.into_iter().zip(grads) {
            targets[i].1.accumulate_grad(&name, &self.values[g.0])?;
        }
        Ok(())
    }

    fn vjp(&mut self, out: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        use Op::*;
        Ok(match op {
            Leaf => vec![],
            MatMul(a, b) => {
                let bt = self.transpose(*b);
                let ga = self.matmul(g, bt)?;
                let at = self.transpose(*a);
                let gb = self.matmul(at, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Transpose(a) => vec![(*a, self.transpose(g))],
            Add(a, b) => vec![(*a, g), (*b, g)],
            Sub(a, b) => {
                let neg = self.scale(g, -1.0);
                vec![(*a, g), (*b, neg)]
            }
            Mul(a, b) => {
                let ga = self.mul(g, *b)?;
                let gb = self.mul(g, *a)?;
                vec![(*a, ga), (*b, gb)]
            }
            Scale(a, c) => vec![(*a, self.scale(g, *c))],
            AddScalar(a, _) => vec![(*a, g)],
            MulConst(a, c) => vec![(*a, self.mul_const(g, c.clone())?)],
            BroadcastRows(a, _) => vec![(*a, self.sum_rows(g))],
            SumRows(a) => {
                let n = self.shape(*a).0;
                vec![(*a, self.broadcast_rows(g, n)?)]
            }
            BroadcastCols(a, _) => vec![(*a, self.sum_cols(g))],
            SumCols(a) => {
                let c = self.shape(*a).1;
                vec![(*a, self.broadcast_cols(g, c)?)]
            }
            BroadcastScalar(a, _, _) => vec![(*a, self.sum_all(g))],
            SumAll(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, self.broadcast_scalar(g, r, c)?)]
            }
            Unfold(a, k) => vec![(*a, self.fold(g, *k)?)],
            Fold(a, k) => vec![(*a, self.unfold(g, *k)?)],
            SliceRows(a, start, _) => {
                let total = self.shape(*a).0;
                vec![(*a, self.pad_rows(g, *start, total)?)]
            }
            PadRows(a, start, _) => {
                let len = self.shape(*a).0;
                vec![(*a, self.slice_rows(g, *start, len)?)]
            }
            SliceCols(a, start, _) => {
                let total = self.shape(*a).1;
                vec![(*a, self.pad_cols(g, *start, total)?)]
            }
            PadCols(a, start, _) => {
                let len = self.shape(*a).1;
                vec![(*a, self.slice_cols(g, *start, len)?)]
            }
            ConcatRows(parts) => {
                let mut off = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = self.shape(*p).0;
                    res.push((*p, self.slice_rows(g, off, len)?));
                    off += len;
                }
                res
            }
            ConcatCols(parts) => {
                let mut off = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = self.shape(*p).1;
                    res.push((*p, self.slice_cols(g, off, len)?));
                    off += len;
                }
                res
            }
            GatherRows(a, ids) => {
                let n = self.shape(*a).0;
                vec![(*a, self.scatter_rows(g, ids, n)?)]
            }
            ScatterRows(a, ids, _) => vec![(*a, self.gather_rows(g, ids)?)],
            Tanh(a) => {
                // 1 - y^2
                let y2 = self.mul(out, out)?;
                let neg = self.scale(y2, -1.0);
                let d = self.add_scalar(neg, 1.0);
                vec![(*a, self.mul(g, d)?)]
            }
            Sigmoid(a) => {
                let neg = self.scale(out, -1.0);
                let one_minus = self.add_scalar(neg, 1.0);
                let d = self.mul(out, one_minus)?;
                vec![(*a, self.mul(g, d)?)]
            }
            Exp(a) => vec![(*a, self.mul(g, out)?)],
            Log(a) => {
                let r = self.recip(*a);
                vec![(*a, self.mul(g, r)?)]
            }
            Recip(a) => {
                let y2 = self.mul(out, out)?;
                let t = self.mul(g, y2)?;
                vec![(*a, self.scale(t, -1.0))]
            }
            Sqrt(a) => {
                let r = self.recip(out);
                let t = self.mul(g, r)?;
                vec![(*a, self.scale(t, 0.5))]
            }
            LeakyRelu(a, slope) => {
                let mask = self.values[a.0].map(|x| if x > 0.0 { 1.0 } else { *slope });
                vec![(*a, self.mul_const(g, mask)?)]
            }
            Clamp(a, lo, hi) => {
                let mask = self.values[a.0].map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                vec![(*a, self.mul_const(g, mask)?)]
            }
            SoftmaxRows(a) => {
                // y * (g - rowsum(g * y))
                let gy = self.mul(g, out)?;
                let s = self.sum_cols(gy);
                let c = self.shape(out).1;
                let sb = self.broadcast_cols(s, c)?;
                let diff = self.sub(g, sb)?;
                vec![(*a, self.mul(out, diff)?)]
            }
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn unfold_value(x: &Array2, k: usize) -> Result<Array2> {
    if k.is_multiple_of(2) {
        return dim_err(format!("kernel width {k} must be odd"));
    }
    let (l, c) = x.shape();
    let half = (k - 1) / 2;
    let mut out = Array2::zeros(l, k * c);
    for row in 0..l {
        let dst = out.row_mut(row);
        for j in 0..k {
            let src = row as isize + j as isize - half as isize;
            if src >= 0 && (src as usize) < l {
                dst[j * c..(j + 1) * c].copy_from_slice(x.row(src as usize));
            }
        }
    }
    Ok(out)
}

pub(crate) fn fold_value(u: &Array2, k: usize) -> Result<Array2> {
    if k.is_multiple_of(2) || !u.cols().is_multiple_of(k) {
        return dim_err(format!(
            "fold: width {} incompatible with kernel {k}",
            u.cols()
        ));
    }
    let l = u.rows();
    let c = u.cols() / k;
    let half = (k - 1) / 2;
    let mut out = Array2::zeros(l, c);
    for row in 0..l {
        for j in 0..k {
            let dst = row as isize + j as isize - half as isize;
            if dst >= 0 && (dst as usize) < l {
                let src = &u.row(row)[j * c..(j + 1) * c];
                for (o, v) in out.row_mut(dst as usize).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}
