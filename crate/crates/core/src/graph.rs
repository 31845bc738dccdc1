//! A small reverse-mode automatic differentiation tape over dense `f64` matrices.
//!
//! Every value is a 2-D array; row vectors are `1×n`, column vectors `n×1`, scalars `1×1`.
//! A [`Graph`] records operations as they are evaluated and [`Graph::backward`] walks the
//! record in reverse, accumulating gradients for parameter leaves.

use ndarray::{s, Array2, Axis, Zip};

use crate::params::{Grads, ParamSet};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    RowDot(Var, Var),
    RowDots(Var, Vec<Var>),
    Mix(Var, Vec<Var>),
    Sum(Var),
    MaskedSoftmax(Var),
    SoftmaxPick { logits: Var, ids: Vec<usize>, probs: Array2<f64> },
    BernoulliLogLik { p: Var, mask: Array2<f64>, lo: f64, hi: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    /// Whether any parameter leaf feeds into this node.
    grad: bool,
}

/// Operation record for one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let g = |v: &Var| self.nodes[v.0].grad;
        let grad = match &op {
            Op::Const => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MulCol(a, b) | Op::RowDot(a, b) => {
                g(a) || g(b)
            }
            Op::Affine(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Log(a)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::Sum(a)
            | Op::MaskedSoftmax(a) => g(a),
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().any(g),
            Op::RowDots(a, parts) | Op::Mix(a, parts) => g(a) || parts.iter().any(g),
            Op::SoftmaxPick { logits, .. } => g(logits),
            Op::BernoulliLogLik { p, .. } => g(p),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Registers parameter `id` of `params` as a differentiable leaf.
    pub fn param(&mut self, params: &ParamSet, id: usize) -> Var {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a (n×m) + row (1×m)`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n×m) * col (n×1)`, broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Natural log, floored at the smallest positive normal so exact zeros stay finite.
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(f64::MIN_POSITIVE).ln());
        self.push(v, Op::Log(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Row lookup into a table, e.g. an embedding matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).assign(&t.row(id));
        }
        self.push(v, Op::Gather(table, ids.to_vec()))
    }

    /// Per-row dot product, `n×m · n×m → n×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.value(a) * self.value(b);
        let v = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowDot(a, b))
    }

    /// Column `k` of the `n×K` result is `row_dot(query, parts[k])`.
    pub fn row_dots(&mut self, query: Var, parts: &[Var]) -> Var {
        let q = self.value(query);
        let mut v = Array2::zeros((q.nrows(), parts.len()));
        for (k, p) in parts.iter().enumerate() {
            let prod = q * self.value(*p);
            v.column_mut(k).assign(&prod.sum_axis(Axis(1)));
        }
        self.push(v, Op::RowDots(query, parts.to_vec()))
    }

    /// `Σ_k weights[:, k] ⊙ parts[k]`, with `weights` of shape `n×K`.
    pub fn mix(&mut self, weights: Var, parts: &[Var]) -> Var {
        let w = self.value(weights);
        let mut v = Array2::zeros(self.value(parts[0]).raw_dim());
        for (k, p) in parts.iter().enumerate() {
            let col = w.column(k).insert_axis(Axis(1));
            v += &(self.value(*p) * &col);
        }
        self.push(v, Op::Mix(weights, parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is 1; masked entries are exactly 0.
    /// Every row needs at least one unmasked entry.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Array2<f64>) -> Var {
        let x = self.value(scores);
        let mut v = Array2::zeros(x.raw_dim());
        for ((mut out, row), mrow) in v.outer_iter_mut().zip(x.outer_iter()).zip(mask.outer_iter()) {
            let max = row
                .iter()
                .zip(mrow.iter())
                .filter(|(_, &m)| m > 0.0)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((o, &s), &m) in out.iter_mut().zip(row.iter()).zip(mrow.iter()) {
                if m > 0.0 {
                    *o = (s - max).exp();
                    total += *o;
                }
            }
            out.mapv_inplace(|e| e / total);
        }
        self.push(v, Op::MaskedSoftmax(scores))
    }

    /// Softmax over each row of `logits`, returning the probability of `ids[r]` in row `r`
    /// as an `n×1` column. The full distribution stays available through [`Graph::softmax_of`].
    pub fn softmax_pick(&mut self, logits: Var, ids: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        let v = Array2::from_shape_fn((ids.len(), 1), |(r, _)| probs[[r, ids[r]]]);
        self.push(v, Op::SoftmaxPick { logits, ids: ids.to_vec(), probs })
    }

    /// Full softmax distribution computed by a `softmax_pick` node.
    pub fn softmax_of(&self, pick: Var) -> Option<&Array2<f64>> {
        match &self.nodes[pick.0].op {
            Op::SoftmaxPick { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Elementwise Bernoulli log-likelihood `m·ln p + (1−m)·ln(1−p)` with `p` clamped to
    /// `[lo, hi]`. The gradient is zero where the clamp is active.
    pub fn bernoulli_log_lik(&mut self, p: Var, mask: &Array2<f64>, lo: f64, hi: f64) -> Var {
        let mut v = Array2::zeros(self.value(p).raw_dim());
        Zip::from(&mut v).and(self.value(p)).and(mask).for_each(|o, &p, &m| {
            let q = p.clamp(lo, hi);
            *o = m * q.ln() + (1.0 - m) * (1.0 - q).ln();
        });
        self.push(v, Op::BernoulliLogLik { p, mask: mask.clone(), lo, hi })
    }

    /// Reverse pass from the scalar `root`, returning gradients for every parameter leaf.
    pub fn backward(&self, root: Var, params: &ParamSet) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));
        let mut out = Grads::zeros_like(params);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let need = |v: &Var| self.nodes[v.0].grad;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    if need(a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if need(b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if need(b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if need(a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if need(row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if need(b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::MulCol(a, col) => {
                    if need(a) {
                        acc(&mut grads, *a, &g * self.value(*col));
                    }
                    if need(col) {
                        let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(&mut grads, *col, gc);
                    }
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| *d /= x.max(f64::MIN_POSITIVE));
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if need(p) {
                            acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if need(p) {
                            acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        }
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    // Rows of a parameter table go straight to its gradient.
                    if let Op::Param(id) = self.nodes[table.0].op {
                        out.accumulate_rows(id, ids, &g);
                    } else {
                        let mut gt = Array2::zeros(self.value(*table).raw_dim());
                        for (r, &id) in ids.iter().enumerate() {
                            let mut row = gt.row_mut(id);
                            row += &g.row(r);
                        }
                        acc(&mut grads, *table, gt);
                    }
                }
                Op::RowDot(a, b) => {
                    if need(a) {
                        acc(&mut grads, *a, self.value(*b) * &g);
                    }
                    if need(b) {
                        acc(&mut grads, *b, self.value(*a) * &g);
                    }
                }
                Op::RowDots(q, parts) => {
                    let mut gq = Array2::zeros(self.value(*q).raw_dim());
                    for (k, p) in parts.iter().enumerate() {
                        let col = g.column(k).insert_axis(Axis(1));
                        if need(q) {
                            gq += &(self.value(*p) * &col);
                        }
                        if need(p) {
                            acc(&mut grads, *p, self.value(*q) * &col);
                        }
                    }
                    if need(q) {
                        acc(&mut grads, *q, gq);
                    }
                }
                Op::Mix(w, parts) => {
                    let wv = self.value(*w);
                    let mut gw = Array2::zeros(wv.raw_dim());
                    for (k, p) in parts.iter().enumerate() {
                        if need(w) {
                            let prod = &g * self.value(*p);
                            gw.column_mut(k).assign(&prod.sum_axis(Axis(1)));
                        }
                        if need(p) {
                            let col = wv.column(k).insert_axis(Axis(1));
                            acc(&mut grads, *p, &g * &col);
                        }
                    }
                    if need(w) {
                        acc(&mut grads, *w, gw);
                    }
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedSoftmax(a) => {
                    // d x_j = y_j (g_j − Σ_k g_k y_k); masked entries have y = 0.
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut grow, yrow) in ga.outer_iter_mut().zip(y.outer_iter()) {
                        let dot = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|d, &yk| *d -= yk * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxPick { logits, ids, probs } => {
                    let mut gl = probs.clone();
                    for (r, mut row) in gl.outer_iter_mut().enumerate() {
                        let py = probs[[r, ids[r]]];
                        let scale = -g[[r, 0]] * py;
                        row.mapv_inplace(|p| p * scale);
                        row[ids[r]] += g[[r, 0]] * py;
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::BernoulliLogLik { p, mask, lo, hi } => {
                    let mut gp = g;
                    Zip::from(&mut gp).and(self.value(*p)).and(mask).for_each(|d, &p, &m| {
                        if p < *lo || p > *hi {
                            *d = 0.0;
                        } else {
                            *d *= m / p - (1.0 - m) / (1.0 - p);
                        }
                    });
                    acc(&mut grads, *p, gp);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
        let mut total = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            total += e;
            e
        });
        let inv = 1.0 / total;
        row.mapv_inplace(|v| v * inv);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(params: &ParamSet, f: impl Fn(&ParamSet) -> f64) -> Vec<Array2<f64>> {
        let h = 1e-6;
        (0..params.len())
            .map(|id| {
                let mut g = Array2::zeros(params.value(id).raw_dim());
                for idx in 0..g.len() {
                    let (r, c) = (idx / g.ncols(), idx % g.ncols());
                    let mut plus = params.clone();
                    plus.value_mut(id)[[r, c]] += h;
                    let mut minus = params.clone();
                    minus.value_mut(id)[[r, c]] -= h;
                    g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    fn check(params: &ParamSet, f: impl Fn(&ParamSet, &mut Graph) -> Var) {
        let mut g = Graph::new();
        let root = f(params, &mut g);
        let analytic = g.backward(root, params);
        let numeric = numeric_grad(params, |p| {
            let mut g = Graph::new();
            let r = f(p, &mut g);
            g.scalar(r)
        });
        for (id, n) in numeric.iter().enumerate() {
            let a = analytic.get(id);
            for (x, y) in a.iter().zip(n.iter()) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "param {id}: {x} vs {y}");
            }
        }
    }

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]]);
        p.insert("b", array![[0.2, -0.1], [0.7, 0.3], [-0.4, 0.9]]);
        p.insert("row", array![[0.05, -0.3]]);
        p
    }

    #[test]
    fn elementwise_and_matmul_grads() {
        check(&params(), |p, g| {
            let a = g.param(p, 0);
            let b = g.param(p, 1);
            let r = g.param(p, 2);
            let m = g.matmul(a, b);
            let m = g.add_row(m, r);
            let t = g.tanh(m);
            let s = g.sigmoid(m);
            let prod = g.mul(t, s);
            let c = g.slice_cols(prod, 1, 2);
            let scaled = g.mul_col(prod, c);
            let aff = g.affine(scaled, -2.0, 3.0);
            let l = g.log(aff);
            g.sum(l)
        });
    }

    #[test]
    fn softmax_and_gather_grads() {
        check(&params(), |p, g| {
            let a = g.param(p, 0);
            let b = g.param(p, 1);
            let rows = g.gather(b, &[2, 0, 2]);
            let cat = g.concat_cols(&[rows, rows]);
            let stacked = g.concat_rows(&[cat, cat]);
            let pick = g.softmax_pick(stacked, &[0, 3, 1, 2, 2, 0]);
            let mask = array![[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
            let sm = g.masked_softmax(a, &mask);
            let d = g.row_dot(sm, a);
            let l1 = g.log(pick);
            let s1 = g.sum(l1);
            let s2 = g.sum(d);
            let parts = [g.slice_cols(a, 0, 2), g.slice_cols(a, 1, 3)];
            let scores = g.row_dots(parts[0], &parts);
            let w = g.masked_softmax(scores, &array![[1.0, 1.0], [1.0, 0.0]]);
            let mixed = g.mix(w, &parts);
            let t = g.tanh(mixed);
            let s3 = g.sum(t);
            let s12 = g.add(s1, s2);
            g.add(s12, s3)
        });
    }

    #[test]
    fn bernoulli_grads() {
        let mut p = ParamSet::new();
        p.insert("logit", array![[0.3, -1.2, 2.0, 0.0]]);
        check(&p, |p, g| {
            let l = g.param(p, 0);
            let prob = g.sigmoid(l);
            let ll = g.bernoulli_log_lik(prob, &array![[1.0, 0.0, 1.0, 0.0]], 1e-6, 1.0 - 1e-6);
            g.sum(ll)
        });
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, 2.0, 3.0]]);
        let y = g.masked_softmax(x, &array![[1.0, 0.0, 1.0]]);
        let v = g.value(y);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }
}
