//! Minimal reverse-mode automatic differentiation over dense matrices.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::from_vec(1, n, data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, f: f64) {
        self.data.iter_mut().for_each(|x| *x *= f);
    }
}

// c += a * b
fn gemm(a: &Tensor, b: &Tensor, c: &mut [f64]) {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// c += a^T * b
fn gemm_tn(a: &Tensor, b: &Tensor, c: &mut [f64]) {
    let (k, n, m) = (a.rows, a.cols, b.cols);
    for p in 0..k {
        let brow = &b.data[p * m..(p + 1) * m];
        for i in 0..n {
            let av = a.data[p * n + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * m..(i + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// c += a * b^T
fn gemm_nt(a: &Tensor, b: &Tensor, c: &mut [f64]) {
    let (n, k, m) = (a.rows, a.cols, b.rows);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            c[i * m + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    FloorAt(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    MeanRows(Var),
    MaskedSoftmax(Var, Vec<bool>),
    MaskedLogSoftmax(Var, Vec<bool>),
    MaskedEntropy(Var, Vec<bool>),
    Pick(Var, usize),
    GaussianLogProb(Var, Var, Vec<f64>),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation graph recorded during a forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(x.rows, y.cols);
        gemm(x, y, &mut out.data);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.cols, "matmul_nt shape mismatch");
        let mut out = Tensor::zeros(x.rows, y.rows);
        gemm_nt(x, y, &mut out.data);
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "add_row shape mismatch");
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(f);
        self.push(out, Op::Scale(a, f))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| f(*v)).collect());
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    /// `max(a, floor)` elementwise; no gradient below the floor.
    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |v| v.max(floor), Op::FloorAt(a, floor))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols]
                    .copy_from_slice(&t.data[r * t.cols..(r + 1) * t.cols]);
            }
            off += t.cols;
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice out of range");
        let mut out = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&x.data[r * x.cols + start..r * x.cols + start + len]);
        }
        self.push(out, Op::Slice(a, start, len))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        for chunk in x.data.chunks(x.cols) {
            for (o, v) in out.data.iter_mut().zip(chunk) {
                *o += v / x.rows as f64;
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Softmax over the unmasked entries of a `1 x n` row; masked entries
    /// are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let out = Tensor::row(
            masked_log_softmax(&self.value(a).data, mask)
                .into_iter()
                .zip(mask)
                .map(|(l, m)| if *m { l.exp() } else { 0.0 })
                .collect(),
        );
        self.push(out, Op::MaskedSoftmax(a, mask.to_vec()))
    }

    /// Log-softmax over the unmasked entries of a `1 x n` row; masked
    /// entries hold 0 and carry no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let out = Tensor::row(
            masked_log_softmax(&self.value(a).data, mask)
                .into_iter()
                .zip(mask)
                .map(|(l, m)| if *m { l } else { 0.0 })
                .collect(),
        );
        self.push(out, Op::MaskedLogSoftmax(a, mask.to_vec()))
    }

    /// `-sum p log p` for a row of log-probabilities.
    pub fn masked_entropy(&mut self, logp: Var, mask: &[bool]) -> Var {
        let x = self.value(logp);
        let h = x
            .data
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| -l.exp() * l)
            .sum();
        self.push(Tensor::scalar(h), Op::MaskedEntropy(logp, mask.to_vec()))
    }

    /// Element `i` of a flattened tensor as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a).data[i];
        self.push(Tensor::scalar(v), Op::Pick(a, i))
    }

    /// Log-density of `x` under independent Gaussians.
    pub fn gaussian_log_prob(&mut self, mean: Var, std: Var, x: &[f64]) -> Var {
        let v = gaussian_log_prob(&self.value(mean).data, &self.value(std).data, x);
        self.push(Tensor::scalar(v), Op::GaussianLogProb(mean, std, x.to_vec()))
    }

    /// `sum_k c_k * s_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|(t, c)| c * self.scalar(*t)).sum();
        self.push(Tensor::scalar(v), Op::WeightedSum(terms.to_vec()))
    }

    /// Backpropagates from scalar `root` with seed gradient 1 and returns
    /// gradients for every node (empty tensors where unreachable).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut seed = Tensor::zeros(self.value(root).rows, self.value(root).cols);
        seed.fill(1.0);
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(x.rows, x.cols);
                gemm_nt(g, y, &mut ga.data);
                let mut gb = Tensor::zeros(y.rows, y.cols);
                gemm_tn(x, g, &mut gb.data);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(x.rows, x.cols);
                gemm(g, y, &mut ga.data);
                let mut gb = Tensor::zeros(y.rows, y.cols);
                gemm_tn(g, x, &mut gb.data);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                let mut gr = Tensor::zeros(1, g.cols);
                for chunk in g.data.chunks(g.cols) {
                    for (o, v) in gr.data.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                acc(*a, g.clone());
                acc(*r, gr);
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let ga = zip_map(g, y, |p, q| p * q);
                let gb = zip_map(g, x, |p, q| p * q);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(a, f) => {
                let mut ga = g.clone();
                ga.scale(*f);
                acc(*a, ga);
            }
            Op::Tanh(a) => acc(*a, zip_map(g, &node.value, |p, y| p * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |p, y| p * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |p, y| p * y)),
            Op::FloorAt(a, floor) => {
                let ga = zip_map(g, val(*a), |p, x| if x > *floor { p } else { 0.0 });
                acc(*a, ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let t = val(*p);
                    let mut gp = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        gp.data[r * t.cols..(r + 1) * t.cols]
                            .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + t.cols]);
                    }
                    off += t.cols;
                    acc(*p, gp);
                }
            }
            Op::Slice(a, start, len) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    ga.data[r * x.cols + start..r * x.cols + start + len]
                        .copy_from_slice(&g.data[r * len..(r + 1) * len]);
                }
                acc(*a, ga);
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                for chunk in ga.data.chunks_mut(x.cols) {
                    for (o, v) in chunk.iter_mut().zip(&g.data) {
                        *o = v / x.rows as f64;
                    }
                }
                acc(*a, ga);
            }
            Op::MaskedSoftmax(a, mask) => {
                let p = &node.value.data;
                let dot: f64 = g.data.iter().zip(p).map(|(u, v)| u * v).sum();
                let data = (0..p.len())
                    .map(|i| if mask[i] { p[i] * (g.data[i] - dot) } else { 0.0 })
                    .collect();
                acc(*a, Tensor::row(data));
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let l = &node.value.data;
                let total: f64 = g.data.iter().zip(mask).filter(|(_, m)| **m).map(|(u, _)| u).sum();
                let data = (0..l.len())
                    .map(|i| if mask[i] { g.data[i] - l[i].exp() * total } else { 0.0 })
                    .collect();
                acc(*a, Tensor::row(data));
            }
            Op::MaskedEntropy(a, mask) => {
                let l = &val(*a).data;
                let data = (0..l.len())
                    .map(|i| {
                        if mask[i] {
                            -g.data[0] * l[i].exp() * (l[i] + 1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*a, Tensor::row(data));
            }
            Op::Pick(a, i) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                ga.data[*i] = g.data[0];
                acc(*a, ga);
            }
            Op::GaussianLogProb(m, s, x) => {
                let (mu, sd) = (&val(*m).data, &val(*s).data);
                let gm = (0..x.len())
                    .map(|k| g.data[0] * (x[k] - mu[k]) / (sd[k] * sd[k]))
                    .collect();
                let gs = (0..x.len())
                    .map(|k| {
                        let z = (x[k] - mu[k]) / sd[k];
                        g.data[0] * (z * z - 1.0) / sd[k]
                    })
                    .collect();
                acc(*m, Tensor::row(gm));
                acc(*s, Tensor::row(gs));
            }
            Op::WeightedSum(terms) => {
                for (t, c) in terms {
                    acc(*t, Tensor::scalar(c * g.data[0]));
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    )
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
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

/// Log-softmax over unmasked entries; masked entries get `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(logits.len(), mask.len(), "mask length mismatch");
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { l - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub fn gaussian_log_prob(mean: &[f64], std: &[f64], x: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..x.len())
        .map(|k| {
            let z = (x[k] - mean[k]) / std[k];
            -0.5 * z * z - std[k].ln() - half_ln_2pi
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &vars);
        let grads = g.backward(root);
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let h = 1e-6;
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, u)| {
                            let mut u = u.clone();
                            if j == k {
                                u.data[i] += delta;
                            }
                            g.leaf(u)
                        })
                        .collect();
                    let r = build(&mut g, &vs);
                    g.scalar(r)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads.get(vars[k]).map_or(0.0, |t| t.data[i]);
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs(),
                    "input {k}[{i}]: fd {fd} vs {an}"
                );
            }
        }
    }

    fn t(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_chain_gradients() {
        check(
            |g, v| {
                let m = g.matmul(v[0], v[1]);
                let n = g.matmul_nt(m, v[2]);
                let a = g.tanh(n);
                let s = g.mean_rows(a);
                let s = g.sigmoid(s);
                g.pick(s, 1)
            },
            vec![t(3, 4, 1), t(4, 2, 2), t(5, 2, 3)],
        );
    }

    #[test]
    fn elementwise_gradients() {
        check(
            |g, v| {
                let a = g.mul(v[0], v[1]);
                let b = g.add_row(a, v[2]);
                let c = g.concat(&[b, v[0]]);
                let d = g.slice(c, 1, 3);
                let e = g.exp(d);
                let f = g.scale(e, 0.7);
                let h = g.add(f, d);
                let m = g.mean_rows(h);
                let p = g.pick(m, 2);
                let q = g.pick(m, 0);
                g.weighted_sum(&[(p, 1.3), (q, -0.4)])
            },
            vec![t(2, 3, 4), t(2, 3, 5), t(1, 3, 6)],
        );
    }

    #[test]
    fn softmax_family_gradients() {
        let mask = vec![true, false, true, true];
        check(
            |g, v| {
                let l = g.masked_log_softmax(v[0], &mask);
                let p = g.masked_softmax(v[0], &mask);
                let h = g.masked_entropy(l, &mask);
                let a = g.pick(l, 2);
                let b = g.pick(p, 3);
                g.weighted_sum(&[(h, 0.5), (a, 1.0), (b, 2.0)])
            },
            vec![t(1, 4, 7)],
        );
    }

    #[test]
    fn gaussian_gradients() {
        check(
            |g, v| {
                let s = g.exp(v[1]);
                let s = g.floor_at(s, 0.02);
                g.gaussian_log_prob(v[0], s, &[0.3, -0.2])
            },
            vec![t(1, 2, 8), t(1, 2, 9)],
        );
    }

    #[test]
    fn masked_entries_are_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 5.0, 2.0]));
        let p = g.masked_softmax(x, &[true, false, true]);
        assert_eq!(g.value(p).data[1], 0.0);
        let s: f64 = g.value(p).data.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_at_mean() {
        let lp = gaussian_log_prob(&[0.4, 0.6], &[0.3, 0.1], &[0.4, 0.6]);
        let want = -(0.3 * (2.0 * std::f64::consts::PI).sqrt()).ln() - (0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((lp - want).abs() < 1e-12);
    }
}
