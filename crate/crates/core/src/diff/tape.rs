use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParameterStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::DiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    RowNormalize(Var, f64),
    SoftmaxRows(Var),
    MeanRows(Var),
    RowSum(Var),
    SumAll(Var),
    SquaredError(Var, Var),
    CrossEntropy(Var, Arc<[usize]>),
    L2(Vec<Var>),
    GatherMean(Var, Arc<Vec<Vec<usize>>>),
    GatherRows(Var, Arc<[usize]>),
    HeadDot(Var, Var, usize, f64),
    HeadScale(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Records a computation so that [`Tape::backward`] can replay it in reverse.
///
/// Nodes are appended in execution order, so every input id is smaller than
/// the id of the node consuming it.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T: Scalar>(op: &'static str, ts: &[&Tensor<T>]) -> DiffError {
    DiffError::Shape {
        op,
        shapes: ts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn is_matrix<T: Scalar>(t: &Tensor<T>) -> bool {
    t.shape().len() == 2
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant; no gradient flows past it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v` that is cut off from the gradient.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    /// Leaf bound to a stored parameter. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_matrix(ta) || !is_matrix(tb) || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let out = ta.matmul(tb)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op_name, &[ta, tb]));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 x m` bias row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if !is_matrix(ta) || tb.len() != ta.cols() {
            return Err(shape_err("add_row", &[ta, tb]));
        }
        let mut out = ta.clone();
        let m = ta.cols();
        for r in 0..out.rows() {
            for (x, &b) in out.row_slice_mut(r).iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        debug_assert_eq!(out.cols(), m);
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// `x * w + b`, the usual affine layer on row vectors.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        let out = self.value(a).map(|x| x * f);
        self.push(out, Op::Scale(a, factor))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Shape {
                op: "concat",
                shapes: vec![],
            });
        };
        let rows = self.value(first).rows();
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        if tensors.iter().any(|t| !is_matrix(t) || t.rows() != rows) {
            return Err(shape_err("concat", &tensors));
        }
        let cols: usize = tensors.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in &tensors {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    /// Rescales every row to Euclidean norm `norm`, using
    /// `sqrt(|x|^2 + eps)` with a fixed `eps = 1e-12` so zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var, norm: f64) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if !is_matrix(ta) {
            return Err(shape_err("row_normalize", &[ta]));
        }
        let mut out = ta.clone();
        let s = T::from_f64_lossy(norm);
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let n = row_norm(row);
            row.iter_mut().for_each(|x| *x = *x * s / n);
        }
        Ok(self.push(out, Op::RowNormalize(a, norm)))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if !is_matrix(ta) {
            return Err(shape_err("softmax_rows", &[ta]));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_slice_mut(r));
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Mean over rows: `n x m -> 1 x m`. An empty input yields zeros.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if !is_matrix(ta) {
            return Err(shape_err("mean_rows", &[ta]));
        }
        let (n, m) = (ta.rows(), ta.cols());
        let mut out = Tensor::zeros(&[1, m]);
        if n > 0 {
            let inv = T::one() / T::from_usize(n).unwrap();
            for r in 0..n {
                for (o, &x) in out.data_mut().iter_mut().zip(ta.row_slice(r)) {
                    *o += x * inv;
                }
            }
        }
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Sum along each row: `n x m -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if !is_matrix(ta) {
            return Err(shape_err("row_sum", &[ta]));
        }
        let data = (0..ta.rows())
            .map(|r| ta.row_slice(r).iter().copied().sum())
            .collect();
        let out = Tensor::new(vec![ta.rows(), 1], data)?;
        Ok(self.push(out, Op::RowSum(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Mean over rows of the squared L2 distance between matching rows.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var, DiffError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() || !is_matrix(tp) {
            return Err(shape_err("squared_error", &[tp, tt]));
        }
        if tp.rows() == 0 {
            return Err(DiffError::EmptyBatch("squared_error"));
        }
        let total: T = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let out = Tensor::scalar(total / T::from_usize(tp.rows()).unwrap());
        Ok(self.push(out, Op::SquaredError(pred, target)))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy_with_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, DiffError> {
        let tl = self.value(logits);
        if !is_matrix(tl) || tl.rows() != targets.len() {
            return Err(shape_err("cross_entropy", &[tl]));
        }
        if targets.is_empty() {
            return Err(DiffError::EmptyBatch("cross_entropy"));
        }
        let c = tl.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(DiffError::TargetOutOfRange {
                target: bad,
                classes: c,
            });
        }
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row_slice(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / T::from_usize(targets.len()).unwrap());
        Ok(self.push(out, Op::CrossEntropy(logits, targets.into())))
    }

    /// Sum of squares over every element of every operand.
    pub fn l2_penalty(&mut self, params: &[Var]) -> Var {
        let s: T = params.iter().map(|&p| self.value(p).sum_squares()).sum();
        self.push(Tensor::scalar(s), Op::L2(params.to_vec()))
    }

    /// `out[g] = mean(src[i] for i in groups[g])`; empty groups give zero rows.
    pub fn gather_mean(
        &mut self,
        src: Var,
        groups: Arc<Vec<Vec<usize>>>,
    ) -> Result<Var, DiffError> {
        let ts = self.value(src);
        if !is_matrix(ts) || groups.iter().flatten().any(|&i| i >= ts.rows()) {
            return Err(shape_err("gather_mean", &[ts]));
        }
        let d = ts.cols();
        let mut out = Tensor::zeros(&[groups.len(), d]);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let inv = T::one() / T::from_usize(members.len()).unwrap();
            let row = out.row_slice_mut(g);
            for &i in members {
                for (o, &x) in row.iter_mut().zip(ts.row_slice(i)) {
                    *o += x * inv;
                }
            }
        }
        Ok(self.push(out, Op::GatherMean(src, groups)))
    }

    /// Row lookup: `out[i] = src[idx[i]]`.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let ts = self.value(src);
        if !is_matrix(ts) || idx.iter().any(|&i| i >= ts.rows()) {
            return Err(shape_err("gather_rows", &[ts]));
        }
        let d = ts.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(ts.row_slice(i));
        }
        let out = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.push(out, Op::GatherRows(src, idx.into())))
    }

    /// Per-head scaled dot product: `n x d, n x d -> n x heads`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize, scale: f64) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || !is_matrix(ta) || heads == 0 || ta.cols() % heads != 0 {
            return Err(shape_err("head_dot", &[ta, tb]));
        }
        let (n, d) = (ta.rows(), ta.cols());
        let dh = d / heads;
        let s = T::from_f64_lossy(scale);
        let mut out = Tensor::zeros(&[n, heads]);
        for r in 0..n {
            let (ra, rb) = (ta.row_slice(r), tb.row_slice(r));
            for h in 0..heads {
                let dot: T = (h * dh..(h + 1) * dh).map(|j| ra[j] * rb[j]).sum();
                out.data_mut()[r * heads + h] = dot * s;
            }
        }
        Ok(self.push(out, Op::HeadDot(a, b, heads, scale)))
    }

    /// Scales each head block of `x` (`n x d`) by `gates` (`n x heads`).
    pub fn head_scale(&mut self, gates: Var, x: Var) -> Result<Var, DiffError> {
        let (tg, tx) = (self.value(gates), self.value(x));
        if !is_matrix(tg)
            || !is_matrix(tx)
            || tg.rows() != tx.rows()
            || tg.cols() == 0
            || tx.cols() % tg.cols() != 0
        {
            return Err(shape_err("head_scale", &[tg, tx]));
        }
        let heads = tg.cols();
        let dh = tx.cols() / heads;
        let mut out = tx.clone();
        for r in 0..tx.rows() {
            let grow = tg.row_slice(r).to_vec();
            for (j, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v *= grow[j / dh];
            }
        }
        Ok(self.push(out, Op::HeadScale(gates, x)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Reverse pass from a scalar `loss`. Returns one gradient slot per node;
    /// nodes the loss does not depend on keep `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(DiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.backprop_node(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(
        &self,
        loss: Var,
        store: &mut ParameterStore<T>,
    ) -> Result<(), DiffError> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.grad_mut(id).add_assign(g);
            }
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), DiffError> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_t(false, val(*b), true)?;
                let db = val(*a).matmul_t(true, g, false)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let m = g.cols();
                let mut db = vec![T::zero(); m];
                for r in 0..g.rows() {
                    for (d, &x) in db.iter_mut().zip(g.row_slice(r)) {
                        *d += x;
                    }
                }
                let shape = val(*b).shape().to_vec();
                accumulate(grads, *b, Tensor::new(shape, db)?);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                accumulate(grads, *a, zip(g, tb, |x, y| x * y));
                accumulate(grads, *b, zip(g, ta, |x, y| x * y));
            }
            Op::Scale(a, f) => {
                let f = T::from_f64_lossy(*f);
                accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(grads, p, Tensor::new(vec![rows, c], data)?);
                }
            }
            Op::Relu(a) => {
                let y = &node.value;
                accumulate(grads, *a, zip(g, y, |gi, yi| if yi > T::zero() { gi } else { T::zero() }));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(grads, *a, zip(g, y, |gi, yi| gi * yi * (T::one() - yi)));
            }
            Op::Exp(a) => {
                accumulate(grads, *a, zip(g, &node.value, |gi, yi| gi * yi));
            }
            Op::RowNormalize(a, norm) => {
                let x = val(*a);
                let s = T::from_f64_lossy(*norm);
                let mut da = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    let (xr, gr) = (x.row_slice(r), g.row_slice(r));
                    let n = row_norm(xr);
                    let dot: T = xr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    let n3 = n * n * n;
                    for (o, (&p, &q)) in da.row_slice_mut(r).iter_mut().zip(xr.iter().zip(gr)) {
                        *o = s * (q / n - p * dot / n3);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for (o, (&p, &q)) in da.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let ta = val(*a);
                let n = ta.rows();
                let mut da = Tensor::zeros(ta.shape());
                if n > 0 {
                    let inv = T::one() / T::from_usize(n).unwrap();
                    for r in 0..n {
                        for (o, &x) in da.row_slice_mut(r).iter_mut().zip(g.data()) {
                            *o = x * inv;
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::RowSum(a) => {
                let ta = val(*a);
                let mut da = Tensor::zeros(ta.shape());
                for r in 0..ta.rows() {
                    let gr = g.data()[r];
                    da.row_slice_mut(r).iter_mut().for_each(|o| *o = gr);
                }
                accumulate(grads, *a, da);
            }
            Op::SumAll(a) => {
                let ta = val(*a);
                accumulate(grads, *a, Tensor::full(ta.shape(), g.data()[0]));
            }
            Op::SquaredError(p, t) => {
                let (tp, tt) = (val(*p), val(*t));
                let k = T::from_f64_lossy(2.0) * g.data()[0] / T::from_usize(tp.rows()).unwrap();
                let dp = zip(tp, tt, |x, y| (x - y) * k);
                accumulate(grads, *t, dp.map(|x| -x));
                accumulate(grads, *p, dp);
            }
            Op::CrossEntropy(logits, targets) => {
                let tl = val(*logits);
                let scale = g.data()[0] / T::from_usize(targets.len()).unwrap();
                let mut dl = tl.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = dl.row_slice_mut(r);
                    softmax_in_place(row);
                    row[t] -= T::one();
                    row.iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(grads, *logits, dl);
            }
            Op::L2(parts) => {
                let k = T::from_f64_lossy(2.0) * g.data()[0];
                for &p in parts {
                    accumulate(grads, p, val(p).map(|x| x * k));
                }
            }
            Op::GatherMean(src, groups) => {
                let ts = val(*src);
                let mut ds = Tensor::zeros(ts.shape());
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::from_usize(members.len()).unwrap();
                    let grow = g.row_slice(gi);
                    for &i in members {
                        for (o, &x) in ds.row_slice_mut(i).iter_mut().zip(grow) {
                            *o += x * inv;
                        }
                    }
                }
                accumulate(grads, *src, ds);
            }
            Op::GatherRows(src, idx) => {
                let ts = val(*src);
                let mut ds = Tensor::zeros(ts.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &x) in ds.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *src, ds);
            }
            Op::HeadDot(a, b, heads, scale) => {
                let (ta, tb) = (val(*a), val(*b));
                let dh = ta.cols() / heads;
                let s = T::from_f64_lossy(*scale);
                let mut da = Tensor::zeros(ta.shape());
                let mut db = Tensor::zeros(tb.shape());
                for r in 0..ta.rows() {
                    let gr = g.row_slice(r);
                    let (ra, rb) = (ta.row_slice(r), tb.row_slice(r));
                    let rda = da.row_slice_mut(r);
                    for j in 0..ra.len() {
                        rda[j] = gr[j / dh] * s * rb[j];
                    }
                    let rdb = db.row_slice_mut(r);
                    for j in 0..ra.len() {
                        rdb[j] = gr[j / dh] * s * ra[j];
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::HeadScale(gates, x) => {
                let (tg, tx) = (val(*gates), val(*x));
                let heads = tg.cols();
                let dh = tx.cols() / heads;
                let mut dg = Tensor::zeros(tg.shape());
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..tx.rows() {
                    let (gr, xr, gate) = (g.row_slice(r), tx.row_slice(r), tg.row_slice(r));
                    let rdx = dx.row_slice_mut(r);
                    for j in 0..xr.len() {
                        rdx[j] = gr[j] * gate[j / dh];
                    }
                    let rdg = dg.row_slice_mut(r);
                    for j in 0..xr.len() {
                        rdg[j / dh] += gr[j] * xr[j];
                    }
                }
                accumulate(grads, *gates, dg);
                accumulate(grads, *x, dx);
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                accumulate(grads, *a, g.clone().reshape(&shape)?);
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when unreached.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    let sq: T = row.iter().map(|&x| x * x).sum();
    (sq + T::from_f64_lossy(1e-12)).sqrt()
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}
