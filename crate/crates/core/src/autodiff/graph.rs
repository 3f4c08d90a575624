use super::params::{ParamGrads, ParamId, ParamStore};
use super::{AutodiffError, Result, Tensor};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScalarMul(Var, f64),
    Relu(Var),
    Exp(Var),
    Sum(Var),
    SumRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    GatherRows(Var, Vec<usize>),
    SliceCols { src: Var, start: usize },
    Reshape(Var),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    SmoothL1(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run computation graph. Nodes are appended in evaluation order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<(ParamId, Var)>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` is upstream of the root.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| AutodiffError::InvalidArgument {
        op,
        reason: format!("expected rank 1 or 2, got {:?}", t.shape()),
    })
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
fn gemm_nt_acc(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = dcrow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += s;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
fn gemm_tn_acc(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf holding a value. Gradients are computed for it but never applied anywhere.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push("input", t, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return Ok(v);
        }
        let v = self.push("param", store.get(id).clone(), Op::Param)?;
        self.param_vars.push((id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let (m, k) = dims2("matmul", ta)?;
        let (k2, n) = dims2("matmul", tb)?;
        if ta.shape().len() != 2 || tb.shape().len() != 2 || k != k2 {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.len() == 1 {
            let y = tb.data()[0];
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x, y)).collect())?
        } else if ta.len() == 1 {
            let x = ta.data()[0];
            Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|y| f(x, *y)).collect())?
        } else {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        };
        self.push(name, value, op)
    }

    /// Elementwise sum; shapes must match or one operand must hold a single element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-n row to every row of an m×n matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ta = self.value(a);
        let tr = self.value(row);
        let (m, n) = dims2("add_row", ta)?;
        if tr.len() != n {
            return Err(mismatch("add_row", ta.shape(), tr.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let shape = ta.shape().to_vec();
        self.push("add_row", Tensor::new(shape, data)?, Op::AddRow(a, row))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        self.push("scalar_mul", value, Op::ScalarMul(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.max(0.0)).collect())?;
        self.push("relu", value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.exp()).collect())?;
        self.push("exp", value, Op::Exp(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("reduce_sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let s = self.reduce_sum(a)?;
        self.scalar_mul(s, 1.0 / n as f64)
    }

    /// Column sums of an m×n matrix, as a 1×n matrix.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2("sum_rows", t)?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&t.data()[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        self.push("sum_rows", Tensor::new(vec![1, n], out)?, Op::SumRows(a))
    }

    /// Juxtaposes tensors along `axis`; every other dimension must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| AutodiffError::InvalidArgument {
            op: "concat",
            reason: "no parts".into(),
        })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push("concat", Tensor::new(shape, data)?, op)
    }

    /// Rows of a 2-D tensor picked by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2("gather_rows", t)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row {bad} out of range for {m} rows"),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        self.push("gather_rows", value, Op::GatherRows(a, rows.to_vec()))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims2("slice_cols", t)?;
        if start + len > n {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of range for {n}", start + len),
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.data()[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], data)?;
        self.push("slice_cols", value, Op::SliceCols { src: a, start })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())
            .map_err(|_| mismatch("reshape", t.shape(), shape))?;
        self.push("reshape", value, Op::Reshape(a))
    }

    /// Softmax over all elements; output keeps the input shape.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "softmax",
                reason: "empty input".into(),
            });
        }
        let probs = softmax_values(t.data());
        let value = Tensor::new(t.shape().to_vec(), probs)?;
        self.push("softmax", value, Op::Softmax(a))
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = dims2("softmax_cross_entropy", t)?;
        if n != targets.len() || n == 0 {
            return Err(mismatch("softmax_cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (i, &tgt) in targets.iter().enumerate() {
            if tgt >= c {
                return Err(AutodiffError::TargetOutOfRange { target: tgt, classes: c });
            }
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[tgt];
            probs.extend(row.iter().map(|x| (x - lse).exp()));
        }
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", Tensor::scalar(loss / n as f64), op)
    }

    /// Mean Huber-style loss with unit transition point.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let tp = self.value(pred);
        let tt = self.value(target);
        if tp.shape() != tt.shape() {
            return Err(mismatch("smooth_l1", tp.shape(), tt.shape()));
        }
        if tp.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "smooth_l1",
                reason: "empty input".into(),
            });
        }
        let sum: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| huber(p - t))
            .sum();
        let value = Tensor::scalar(sum / tp.len() as f64);
        self.push("smooth_l1", value, Op::SmoothL1(pred, target))
    }

    /// Checks the invariant that every node value is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().position(|n| !n.value.all_finite()) {
            Some(_) => Err(AutodiffError::NonFinite { op: "graph" }),
            None => Ok(()),
        }
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = ParamGrads::zeros_like(store);
        for &(pid, var) in &self.param_vars {
            if let Some(g) = &grads[var.0] {
                let dst = params.get_mut(pid);
                if dst.len() != g.len() {
                    return Err(mismatch("backward", dst.shape(), &[g.len()]));
                }
                for (d, s) in dst.data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                acc(*a, &mut |da| gemm_nt_acc(g, tb.data(), da, m, k, n));
                acc(*b, &mut |db| gemm_tn_acc(ta.data(), g, db, m, k, n));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |da| broadcast_acc(da, g, 1.0));
                acc(*b, &mut |db| broadcast_acc(db, g, sign));
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                acc(*a, &mut |da| mul_grad_acc(da, g, tb.data()));
                acc(*b, &mut |db| mul_grad_acc(db, g, ta.data()));
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).len();
                acc(*a, &mut |da| add_into(da, g, 1.0));
                acc(*row, &mut |dr| {
                    for chunk in g.chunks(n) {
                        add_into(dr, chunk, 1.0);
                    }
                });
            }
            Op::ScalarMul(a, c) => acc(*a, &mut |da| add_into(da, g, *c)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |da| {
                    for ((d, gv), xv) in da.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |da| {
                for ((d, gv), y) in da.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y;
                }
            }),
            Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::SumRows(a) => {
                let n = out.len();
                acc(*a, &mut |da| {
                    for chunk in da.chunks_mut(n) {
                        add_into(chunk, g, 1.0);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let row_len = out.len() / outer.max(1);
                let mut offset = 0;
                for p in parts {
                    let chunk = self.value(*p).shape()[*axis] * inner;
                    acc(*p, &mut |dp| {
                        for o in 0..outer {
                            let src = &g[o * row_len + offset..o * row_len + offset + chunk];
                            add_into(&mut dp[o * chunk..(o + 1) * chunk], src, 1.0);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::GatherRows(a, rows) => {
                let n = out.dims2().unwrap().1;
                acc(*a, &mut |da| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut da[r * n..(r + 1) * n], &g[k * n..(k + 1) * n], 1.0);
                    }
                });
            }
            Op::SliceCols { src, start } => {
                let (m, len) = out.dims2().unwrap();
                let n = self.value(*src).dims2().unwrap().1;
                acc(*src, &mut |ds| {
                    for i in 0..m {
                        add_into(
                            &mut ds[i * n + start..i * n + start + len],
                            &g[i * len..(i + 1) * len],
                            1.0,
                        );
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |da| add_into(da, g, 1.0)),
            Op::Softmax(a) => {
                let y = out.data();
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                acc(*a, &mut |da| {
                    for ((d, gv), yv) in da.iter_mut().zip(g).zip(y) {
                        *d += yv * (gv - dot);
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                acc(*logits, &mut |dl| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::SmoothL1(p, t) => {
                let tp = self.value(*p).data();
                let tt = self.value(*t).data();
                let scale = g[0] / tp.len() as f64;
                let dh: Vec<f64> = tp.iter().zip(tt).map(|(a, b)| huber_grad(a - b)).collect();
                acc(*p, &mut |dp| add_into(dp, &dh, scale));
                acc(*t, &mut |dt| add_into(dt, &dh, -scale));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Accumulates `g` into `dst`, summing when `dst` is the broadcast scalar side.
fn broadcast_acc(dst: &mut [f64], g: &[f64], sign: f64) {
    if dst.len() == g.len() {
        add_into(dst, g, sign);
    } else {
        dst[0] += sign * g.iter().sum::<f64>();
    }
}

fn mul_grad_acc(dst: &mut [f64], g: &[f64], other: &[f64]) {
    if dst.len() == g.len() {
        if other.len() == g.len() {
            for ((d, gv), o) in dst.iter_mut().zip(g).zip(other) {
                *d += gv * o;
            }
        } else {
            for (d, gv) in dst.iter_mut().zip(g) {
                *d += gv * other[0];
            }
        }
    } else {
        dst[0] += g.iter().zip(other).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn huber(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn huber_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Max-shifted softmax of a slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::matrix(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_arithmetic() {
        let mut g = Graph::new();
        let i2 = g.input(mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let m = g.input(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.input(mat(&[&[1.0, 0.0]])).unwrap();
        let b = g.input(mat(&[&[0.0], &[5.0]])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 1]);
        assert_eq!(g.value(c).data(), &[0.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn concat_values_and_identity() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.input(Tensor::vector(vec![3.0])).unwrap();
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = g.concat(&[a], 0).unwrap();
        assert_eq!(g.value(single), g.value(a));
    }

    #[test]
    fn concat_gradient_is_ones() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let a = g.input(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let b = g.input(mat(&[&[5.0], &[6.0]])).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.reduce_sum(c).unwrap();
        let grads = g.backward(s, &store).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0; 4]);
        assert_eq!(grads.wrt(b).unwrap(), &[1.0; 2]);
    }

    #[test]
    fn concat_rejects_incompatible() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 2])).unwrap();
        let b = g.input(Tensor::zeros(&[3, 1])).unwrap();
        assert!(g.concat(&[a, b], 1).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![-2.0, 3.0])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 3.0]);
        let s = g.reduce_sum(r).unwrap();
        let grads = g.backward(s, &store).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.0, 1.0]);

        let z = g.input(Tensor::scalar(0.0)).unwrap();
        let e = g.exp(z).unwrap();
        assert_eq!(g.value(e).item(), 1.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1.5)).unwrap();
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y, &store).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_stable() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[1, 4])).unwrap();
        let ce = g.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-12);

        let big = g.input(mat(&[&[1000.0, 0.0, 0.0]])).unwrap();
        let ce = g.softmax_cross_entropy(big, &[0]).unwrap();
        assert!(g.value(ce).item().abs() < 1e-12);

        assert!(matches!(
            g.softmax_cross_entropy(l, &[4]),
            Err(AutodiffError::TargetOutOfRange { target: 4, classes: 4 })
        ));
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let rows = [[0.3, -1.2, 0.7], [1.1, 0.2, -0.4]];
        let targets = [2usize, 0];
        let mut naive = 0.0;
        for (r, &t) in rows.iter().zip(&targets) {
            let z: f64 = r.iter().map(|v: &f64| v.exp()).sum();
            naive += -(r[t].exp() / z).ln();
        }
        naive /= 2.0;
        let mut g = Graph::new();
        let l = g.input(mat(&[&rows[0], &rows[1]])).unwrap();
        let ce = g.softmax_cross_entropy(l, &targets).unwrap();
        assert!((g.value(ce).item() - naive).abs() < 1e-14);
    }

    #[test]
    fn smooth_l1_values() {
        let mut g = Graph::new();
        let t = g.input(Tensor::vector(vec![0.0])).unwrap();
        for (d, want) in [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)] {
            let p = g.input(Tensor::vector(vec![d])).unwrap();
            let l = g.smooth_l1(p, t).unwrap();
            assert_eq!(g.value(l).item(), want);
        }
        let p = g.input(Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(g.smooth_l1(p, t).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let s = g.input(Tensor::vector(vec![1.0; 4])).unwrap();
        let w = g.softmax(s).unwrap();
        assert_eq!(g.value(w).data(), &[0.25; 4]);
        let one = g.input(Tensor::vector(vec![-3.0])).unwrap();
        let w = g.softmax(one).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        let two = g.input(Tensor::vector(vec![0.0, 3f64.ln()])).unwrap();
        let w = g.softmax(two).unwrap();
        let v = g.value(w).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sum_of_matvec_gradient_is_outer_product() {
        let mut store = ParamStore::new();
        let w = store.add("w", mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let mut g = Graph::new();
        let wv = g.param(&store, w).unwrap();
        let x = g.input(mat(&[&[0.5], &[-1.0], &[2.0]])).unwrap();
        let y = g.matmul(wv, x).unwrap();
        let s = g.reduce_sum(y).unwrap();
        let grads = g.backward(s, &store).unwrap();
        assert_eq!(grads.params.get(w).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn untouched_param_gets_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
        let unused = store.add("unused", Tensor::vector(vec![3.0]));
        let mut g = Graph::new();
        let u = g.param(&store, used).unwrap();
        let s = g.reduce_sum(u).unwrap();
        let grads = g.backward(s, &store).unwrap();
        assert_eq!(grads.params.get(unused).data(), &[0.0]);
        assert_eq!(grads.params.get(used).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x, &store), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(g.exp(x), Err(AutodiffError::NonFinite { op: "exp" })));
        assert!(g.input(Tensor::scalar(f64::NAN)).is_err());
    }
}
