use super::{shape_err, Gradients, NnError, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
struct GruCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    ScaleConst(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Transpose(Var),
    Softmax { src: Var, axis: usize },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
    ScatterAdd { src: Var, index: Vec<usize> },
    Gru { x: Var, h: Var, w_x: Var, w_h: Var, b_x: Var, b_h: Var, cache: Box<GruCache> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Tape of one forward computation. Nodes are appended in evaluation order,
/// so their indices are already a topological order.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape")
}

/// `out[m,n] = a[m,k] · b[k,n]`, accumulated into `out`.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("node value"),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor, needs_grad: bool) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFiniteValue { op: name });
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.push("input", Op::Leaf, t, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err(
                "matmul",
                format!("[{m},{k}] x [{},{n}]", tb.rows()),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", Op::MatMul(a, b), tensor(m, n, out), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if (ta.rows(), ta.cols()) != (tb.rows(), tb.cols()) {
            return Err(shape_err(
                op,
                format!("[{},{}] vs [{},{}]", ta.rows(), ta.cols(), tb.rows(), tb.cols()),
            ));
        }
        Ok((ta.rows(), ta.cols()))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(name, op, tensor(r, c, data), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Multiplies every element of `t` by the `[1, 1]` node `s`.
    pub fn scale_by(&mut self, s: Var, t: Var) -> Result<Var, NnError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", "scale factor must be [1,1]"));
        }
        let k = self.value(s).item();
        let tv = self.value(t);
        let (r, c) = (tv.rows(), tv.cols());
        let data = tv.data().iter().map(|x| k * x).collect();
        let ng = self.needs(s) || self.needs(t);
        self.push("scale_by", Op::ScaleBy(s, t), tensor(r, c, data), ng)
    }

    pub fn scale(&mut self, t: Var, k: f64) -> Result<Var, NnError> {
        self.map("scale", t, Op::ScaleConst(t, k), |x| k * x)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, NnError> {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let ng = self.needs(a);
        self.push(name, op, tensor(r, c, data), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("one_minus", a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("log", a, Op::Log(a), f64::ln)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        if parts.is_empty() || axis > 1 {
            return Err(shape_err("concat", "need at least one part and axis 0 or 1"));
        }
        let first = self.value(parts[0]);
        let (mut rows, mut cols) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let t = self.value(p);
            if axis == 0 {
                if t.cols() != cols {
                    return Err(shape_err("concat", format!("column count {} vs {cols}", t.cols())));
                }
                rows += t.rows();
            } else {
                if t.rows() != rows {
                    return Err(shape_err("concat", format!("row count {} vs {rows}", t.rows())));
                }
                cols += t.cols();
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
        } else {
            for r in 0..rows {
                for &p in parts {
                    let t = self.value(p);
                    data.extend_from_slice(&t.data()[r * t.cols()..(r + 1) * t.cols()]);
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat",
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tensor(rows, cols, data),
            ng,
        )
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(shape_err(
                "slice",
                format!("axis {axis} range {start}..{} of [{r},{c}]", start + len),
            ));
        }
        let (data, shape) = if axis == 0 {
            (t.data()[start * c..(start + len) * c].to_vec(), (len, c))
        } else {
            let mut d = Vec::with_capacity(r * len);
            for i in 0..r {
                d.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
            }
            (d, (r, len))
        };
        let ng = self.needs(src);
        self.push("slice", Op::Slice { src, axis, start }, tensor(shape.0, shape.1, data), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let ng = self.needs(a);
        self.push("transpose", Op::Transpose(a), tensor(c, r, data), ng)
    }

    pub fn softmax(&mut self, src: Var, axis: usize) -> Result<Var, NnError> {
        if axis > 1 {
            return Err(shape_err("softmax", "axis must be 0 or 1"));
        }
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        let mut data = t.data().to_vec();
        let (lanes, len, lane_stride, step) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
        for lane in 0..lanes {
            let idx = |i: usize| lane * lane_stride + i * step;
            let max = (0..len).map(|i| data[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..len {
                let e = (data[idx(i)] - max).exp();
                data[idx(i)] = e;
                total += e;
            }
            for i in 0..len {
                data[idx(i)] /= total;
            }
        }
        let ng = self.needs(src);
        self.push("softmax", Op::Softmax { src, axis }, tensor(r, c, data), ng)
    }

    /// Rows of `table` selected by `ids`, stacked into `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(shape_err("embedding", "no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(shape_err("embedding", format!("id {id} outside table of {v} rows")));
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let ng = self.needs(table);
        self.push(
            "embedding",
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            tensor(ids.len(), d, data),
            ng,
        )
    }

    /// `-log softmax(logits)[target]` for a `[1, V]` row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NnError> {
        let t = self.value(logits);
        if t.rows() != 1 || target >= t.cols() {
            return Err(shape_err(
                "cross_entropy",
                format!("target {target} for logits [{},{}]", t.rows(), t.cols()),
            ));
        }
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - t.data()[target];
        let probs = exps.into_iter().map(|e| e / total).collect();
        let ng = self.needs(logits);
        self.push(
            "cross_entropy",
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            Tensor::scalar(loss),
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push("sum", Op::Sum(a), Tensor::scalar(s), ng)
    }

    /// Scatters a `[1, L]` row into a `[1, width]` row: `out[index[i]] += src[i]`.
    pub fn scatter_add(&mut self, src: Var, index: &[usize], width: usize) -> Result<Var, NnError> {
        let t = self.value(src);
        if t.rows() != 1 || t.cols() != index.len() || index.iter().any(|&i| i >= width) || width == 0 {
            return Err(shape_err("scatter_add", "index does not match source or width"));
        }
        let mut data = vec![0.0; width];
        for (&i, &x) in index.iter().zip(t.data()) {
            data[i] += x;
        }
        let ng = self.needs(src);
        self.push(
            "scatter_add",
            Op::ScatterAdd {
                src,
                index: index.to_vec(),
            },
            tensor(1, width, data),
            ng,
        )
    }

    /// One gated recurrent unit step for a single `[1, in]` input.
    ///
    /// Weights are fused per gate in the order reset, update, candidate:
    /// `w_x: [in, 3H]`, `w_h: [H, 3H]`, `b_x, b_h: [1, 3H]`.
    /// `r = σ(x W_r + b_r + h U_r + c_r)`, `z` likewise,
    /// `n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
    pub fn gru_cell(&mut self, x: Var, h: Var, w_x: Var, w_h: Var, b_x: Var, b_h: Var) -> Result<Var, NnError> {
        let (tx, th) = (self.value(x), self.value(h));
        let (twx, twh, tbx, tbh) = (self.value(w_x), self.value(w_h), self.value(b_x), self.value(b_h));
        let (i_dim, hd) = (tx.cols(), th.cols());
        if tx.rows() != 1
            || th.rows() != 1
            || (twx.rows(), twx.cols()) != (i_dim, 3 * hd)
            || (twh.rows(), twh.cols()) != (hd, 3 * hd)
            || (tbx.rows(), tbx.cols()) != (1, 3 * hd)
            || (tbh.rows(), tbh.cols()) != (1, 3 * hd)
        {
            return Err(shape_err(
                "gru_cell",
                format!("input [1,{i_dim}], hidden [1,{hd}] do not match cell parameters"),
            ));
        }
        let mut gx = tbx.data().to_vec();
        matmul_into(tx.data(), twx.data(), 1, i_dim, 3 * hd, &mut gx);
        let mut gh = tbh.data().to_vec();
        matmul_into(th.data(), twh.data(), 1, hd, 3 * hd, &mut gh);
        let mut cache = GruCache {
            r: vec![0.0; hd],
            z: vec![0.0; hd],
            n: vec![0.0; hd],
            gh_n: gh[2 * hd..].to_vec(),
        };
        let mut out = vec![0.0; hd];
        for j in 0..hd {
            let r = sigmoid(gx[j] + gh[j]);
            let z = sigmoid(gx[hd + j] + gh[hd + j]);
            let n = (gx[2 * hd + j] + r * gh[2 * hd + j]).tanh();
            out[j] = (1.0 - z) * n + z * th.data()[j];
            cache.r[j] = r;
            cache.z[j] = z;
            cache.n[j] = n;
        }
        let ng = [x, h, w_x, w_h, b_x, b_h].iter().any(|&v| self.needs(v));
        self.push(
            "gru_cell",
            Op::Gru {
                x,
                h,
                w_x,
                w_h,
                b_x,
                b_h,
                cache: Box::new(cache),
            },
            tensor(1, hd, out),
            ng,
        )
    }

    /// Reverse pass from a `[1, 1]` loss. Each node is visited once, in reverse
    /// creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop(&node.op, idx, &g, &mut grads, &mut out);
        }
        if !out.is_finite() {
            return Err(NnError::NonFiniteValue { op: "backward" });
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, op: &Op, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        let y = || self.nodes[idx].value.as_ref().expect("value").data();
        match op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (a, b) in out.get_mut(*id).data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * vb[i];
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        db[i] += g[i] * va[i];
                    }
                }
            }
            Op::ScaleBy(s, t) => {
                let k = self.value(*s).item();
                let vt = self.value(*t).data();
                if let Some(ds) = self.slot(grads, *s) {
                    ds[0] += g.iter().zip(vt).map(|(x, y)| x * y).sum::<f64>();
                }
                if let Some(dt) = self.slot(grads, *t) {
                    dt.iter_mut().zip(g).for_each(|(d, x)| *d += k * x);
                }
            }
            Op::ScaleConst(a, k) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += k * x);
                }
            }
            Op::OneMinus(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Tanh(a) => {
                let y = y();
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = y();
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Exp(a) => {
                let y = y();
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i];
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] / x[i];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let cols: usize = self.nodes[idx].value.as_ref().unwrap().cols();
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (pr, pc) = (t.rows(), t.cols());
                    if let Some(dp) = self.slot(grads, p) {
                        if *axis == 0 {
                            dp.iter_mut().zip(&g[offset * cols..]).for_each(|(d, x)| *d += x);
                        } else {
                            for r in 0..pr {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                dp[r * pc..(r + 1) * pc].iter_mut().zip(src).for_each(|(d, x)| *d += x);
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { src, axis, start } => {
                let t = self.value(*src);
                let (r, c) = (t.rows(), t.cols());
                let y = self.nodes[idx].value.as_ref().unwrap();
                let len = if *axis == 0 { y.rows() } else { y.cols() };
                if let Some(ds) = self.slot(grads, *src) {
                    if *axis == 0 {
                        ds[start * c..(start + len) * c]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, x)| *d += x);
                    } else {
                        for i in 0..r {
                            ds[i * c + start..i * c + start + len]
                                .iter_mut()
                                .zip(&g[i * len..(i + 1) * len])
                                .for_each(|(d, x)| *d += x);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let t = self.value(*a);
                let (r, c) = (t.rows(), t.cols());
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Softmax { src, axis } => {
                let yv = y();
                let t = self.value(*src);
                let (r, c) = (t.rows(), t.cols());
                let (lanes, len, lane_stride, step) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                if let Some(ds) = self.slot(grads, *src) {
                    for lane in 0..lanes {
                        let idx = |i: usize| lane * lane_stride + i * step;
                        let dot: f64 = (0..len).map(|i| g[idx(i)] * yv[idx(i)]).sum();
                        for i in 0..len {
                            ds[idx(i)] += yv[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                if let Some(dt) = self.slot(grads, *table) {
                    for (row, &id) in ids.iter().enumerate() {
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[row * d..(row + 1) * d])
                            .for_each(|(dv, x)| *dv += x);
                    }
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                if let Some(dl) = self.slot(grads, *logits) {
                    for (i, p) in probs.iter().enumerate() {
                        dl[i] += g[0] * (p - if i == *target { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::ScatterAdd { src, index } => {
                if let Some(ds) = self.slot(grads, *src) {
                    for (d, &i) in ds.iter_mut().zip(index) {
                        *d += g[i];
                    }
                }
            }
            Op::Gru {
                x,
                h,
                w_x,
                w_h,
                b_x,
                b_h,
                cache,
            } => self.gru_backward([*x, *h, *w_x, *w_h, *b_x, *b_h], cache, g, grads),
        }
    }

    fn gru_backward(&self, vars: [Var; 6], c: &GruCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [x, h, w_x, w_h, b_x, b_h] = vars;
        let hd = g.len();
        let hv = self.value(h).data();
        let mut dgx = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        let mut dh_direct = vec![0.0; hd];
        for j in 0..hd {
            let (r, z, n) = (c.r[j], c.z[j], c.n[j]);
            let dn = g[j] * (1.0 - z);
            let dz = g[j] * (hv[j] - n);
            dh_direct[j] = g[j] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * c.gh_n[j];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgx[j] = dr_pre;
            dgx[hd + j] = dz_pre;
            dgx[2 * hd + j] = dn_pre;
            dgh[j] = dr_pre;
            dgh[hd + j] = dz_pre;
            dgh[2 * hd + j] = dn_pre * r;
        }
        let accumulate_linear = |grads: &mut [Option<Vec<f64>>], inp: Var, w: Var, b: Var, dg: &[f64]| {
            let (ti, tw) = (self.value(inp).data(), self.value(w).data());
            let n = dg.len();
            if let Some(db) = self.slot(grads, b) {
                db.iter_mut().zip(dg).for_each(|(d, v)| *d += v);
            }
            if let Some(dw) = self.slot(grads, w) {
                for (p, &iv) in ti.iter().enumerate() {
                    if iv == 0.0 {
                        continue;
                    }
                    dw[p * n..(p + 1) * n]
                        .iter_mut()
                        .zip(dg)
                        .for_each(|(d, v)| *d += iv * v);
                }
            }
            if let Some(di) = self.slot(grads, inp) {
                for (p, d) in di.iter_mut().enumerate() {
                    *d += tw[p * n..(p + 1) * n].iter().zip(dg).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        };
        accumulate_linear(grads, x, w_x, b_x, &dgx);
        accumulate_linear(grads, h, w_h, b_h, &dgh);
        if let Some(dh) = self.slot(grads, h) {
            dh.iter_mut().zip(&dh_direct).for_each(|(d, v)| *d += v);
        }
    }
}

#[cfg(test)]
mod tests;
