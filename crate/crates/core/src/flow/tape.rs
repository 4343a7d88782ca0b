//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] and are referenced, not copied; [`Tape::backward`]
//! accumulates their gradients into a [`Grads`] buffer shaped like the store.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Named parameter tensors in a fixed insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.insert(name, Mat::zeros((rows, cols)))
    }

    /// Normal entries with standard deviation `std`.
    pub fn normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> usize {
        let m = Mat::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal));
        self.insert(name, m)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.id(name).map(move |i| &mut self.values[i])
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, m)| m.len()).sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; `None` means zero.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Option<Mat>>);

impl Grads {
    pub fn empty(store: &ParamStore) -> Self {
        Self(vec![None; store.len()])
    }

    fn accumulate(&mut self, id: usize, g: Mat) {
        match &mut self.0[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `other` into `self`.
    pub fn add(&mut self, other: Grads) {
        for (id, g) in other.0.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn get(&self, id: usize) -> Option<&Mat> {
        self.0[id].as_ref()
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    MaskedSse { pred: Var, target: Arc<Mat>, row_mask: Vec<bool> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Mean(Var),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(512) }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => node.value.as_ref().expect("node value present"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    /// Parameter by name; panics if missing (model construction bug).
    pub fn p(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) + s;
        self.push(v, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer norm without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { x, inv_std })
    }

    /// Row-wise softmax. Entries where `mask` is `false` get probability exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Var {
        let mut out = self.value(a).clone();
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let allowed = |c: usize| mask.is_none_or(|m| m[(r, c)]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| allowed(*c))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, v) in row.iter_mut().enumerate() {
                *v = if allowed(c) { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            row.mapv_inplace(|v| v / sum);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("reshape preserves element count");
        self.push(v, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), ids);
        self.push(v, Op::GatherRows(table, ids.to_vec()))
    }

    /// Sum of squared errors over rows whose mask entry is `false`; `1 x 1`.
    pub fn masked_sse(&mut self, pred: Var, target: Arc<Mat>, row_mask: &[bool]) -> Var {
        let p = self.value(pred);
        let mut sum = 0.0;
        for (r, masked) in row_mask.iter().enumerate() {
            if !masked {
                sum += p.row(r).iter().zip(target.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
        self.push(Mat::from_elem((1, 1), sum), Op::MaskedSse { pred, target, row_mask: row_mask.to_vec() })
    }

    /// Mean cross-entropy of row-wise logits against target classes; `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = Mat::from_elem((1, 1), total / targets.len() as f64);
        self.push(v, Op::CrossEntropy { logits, targets: targets.to_vec() })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean().unwrap_or(0.0);
        self.push(Mat::from_elem((1, 1), m), Op::Mean(a))
    }

    /// Backpropagates from a `1 x 1` node and returns parameter gradients.
    pub fn backward(mut self, loss: Var) -> Grads {
        let mut grads = Grads::empty(self.params);
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulRow(a, row) => {
                    let ga = &g * self.value(*row);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *row, gr);
                }
                Op::Scale(a, s) => acc(&mut adj, *a, g * *s),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        let s = sigmoid(x);
                        *gv *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().expect("tanh output");
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    acc(&mut adj, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = &g * &self.value(*a).mapv(gelu_grad);
                    acc(&mut adj, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = self.nodes[i].value.as_ref().expect("layer norm output");
                    let n = y.ncols() as f64;
                    let mut gx = Mat::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let gy = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gy.sum() / n;
                        let mean_gy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..y.ncols() {
                            gx[(r, c)] = inv_std[r] * (gy[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().expect("softmax output");
                    let mut ga = Mat::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.ncols() {
                            ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        acc(&mut adj, *p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        acc(&mut adj, *p, g.slice(s![.., start..start + cols]).to_owned());
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).raw_dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut adj, *a, Mat::from_shape_vec(dim, flat).expect("reshape back"));
                }
                Op::GatherRows(table, ids) => {
                    let mut gt = Mat::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut adj, *table, gt);
                }
                Op::MaskedSse { pred, target, row_mask } => {
                    let s = g[(0, 0)];
                    let p = self.value(*pred);
                    let mut gp = Mat::zeros(p.raw_dim());
                    for (r, masked) in row_mask.iter().enumerate() {
                        if !masked {
                            for c in 0..p.ncols() {
                                gp[(r, c)] = 2.0 * s * (p[(r, c)] - target[(r, c)]);
                            }
                        }
                    }
                    acc(&mut adj, *pred, gp);
                }
                Op::CrossEntropy { logits, targets } => {
                    let s = g[(0, 0)] / targets.len() as f64;
                    let l = self.value(*logits);
                    let mut gl = Mat::zeros(l.raw_dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = l.row(r);
                        let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for c in 0..l.ncols() {
                            gl[(r, c)] = s * ((l[(r, c)] - max).exp() / z - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut adj, *logits, gl);
                }
                Op::Mean(a) => {
                    let dim = self.value(*a).raw_dim();
                    let n = self.value(*a).len() as f64;
                    acc(&mut adj, *a, Mat::from_elem(dim, g[(0, 0)] / n));
                }
            }
            self.nodes[i].op = op;
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Checks every parameter entry of `store` against central differences of `f`.
    fn check(store: &mut ParamStore, f: &dyn Fn(&mut Tape) -> Var) -> f64 {
        let grads = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss)
        };
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for id in 0..store.len() {
            for k in 0..store.value(id).len() {
                let orig = store.value(id).as_slice().unwrap()[k];
                let eval = |v: f64, store: &mut ParamStore| {
                    store.value_mut(id).as_slice_mut().unwrap()[k] = v;
                    let mut tape = Tape::new(store);
                    let l = f(&mut tape);
                    tape.scalar(l)
                };
                let fd = (eval(orig + eps, store) - eval(orig - eps, store)) / (2.0 * eps);
                store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
                let g = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
            }
        }
        worst
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.normal("x", 3, 4, 1.0, &mut rng);
        store.normal("w", 4, 4, 0.5, &mut rng);
        store.normal("row", 1, 4, 1.0, &mut rng);
        store.normal("table", 5, 4, 1.0, &mut rng);
        let target = Arc::new(Mat::from_shape_fn((3, 4), |(r, c)| (r as f64 - c as f64) * 0.1));
        let mask = Array2::from_shape_fn((3, 3), |(r, c)| c <= r);
        let f = move |t: &mut Tape| {
            let x = t.p("x");
            let w = t.p("w");
            let row = t.p("row");
            let h = t.matmul(x, w);
            let h = t.add_row(h, row);
            let h = t.layer_norm(h);
            let h2 = t.mul_row(h, row);
            let h = t.add(h, h2);
            let h = t.gelu(h);
            let a = t.matmul_nt(h, x);
            let a = t.scale(a, 0.5);
            let a = t.softmax(a, Some(&mask));
            let h = t.matmul(a, x);
            let h = t.silu(h);
            let h = t.tanh(h);
            let g = t.p("table");
            let g = t.gather_rows(g, &[4, 1, 4]);
            let h = t.mul(h, g);
            let top = t.slice_rows(h, 0, 2);
            let bottom = t.slice_rows(h, 2, 3);
            let h = t.concat_rows(&[bottom, top]);
            let left = t.slice_cols(h, 0, 1);
            let right = t.slice_cols(h, 1, 4);
            let h = t.concat_cols(&[right, left]);
            let h = t.reshape(h, 4, 3);
            let h = t.reshape(h, 3, 4);
            let h = t.add_scalar(h, 0.3);
            let sse = t.masked_sse(h, target.clone(), &[false, true, false]);
            let ce = t.cross_entropy(h, &[0, 3, 2]);
            let m = t.mean(h);
            let l = t.add(sse, ce);
            t.add(l, m)
        };
        let worst = check(&mut store, &f);
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_mask() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.leaf(Mat::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as f64));
        let mask = Array2::from_shape_fn((3, 3), |(r, c)| c <= r);
        let y = t.softmax(a, Some(&mask));
        let y = t.value(y);
        for r in 0..3 {
            assert!((y.row(r).sum() - 1.0).abs() < 1e-12);
            for c in r + 1..3 {
                assert_eq!(y[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn masked_rows_get_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("p", Mat::from_elem((2, 2), 1.0));
        let mut t = Tape::new(&store);
        let p = t.p("p");
        let loss = t.masked_sse(p, Arc::new(Mat::zeros((2, 2))), &[true, false]);
        let g = t.backward(loss);
        let g = g.get(0).unwrap();
        assert_eq!(g.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.row(1).to_vec(), vec![2.0, 2.0]);
    }
}
