use std::collections::HashMap;
use std::rc::Rc;

use crate::mask::AttentionMask;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, Mat, View, ViewMut};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, rstd: Vec<f64> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    GatherRows { src: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    PoseDecode(Var),
    DotConst { x: Var, w: Mat },
    CrossEntropy { logits: Var, targets: Vec<(usize, usize)>, probs: Vec<Vec<f64>> },
    Mse { pred: Var, target: Mat, rows: Vec<usize> },
    Huber { pred: Var, target: Mat, delta: f64 },
}

struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

/// A single-use tape recording a forward pass against a parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Whether gradients flow back from this node to any trainable parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let needs_grad = !self.params.is_frozen(id);
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.nodes.push(Node { value: Some(m), op: Op::Const, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a @ bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols(), bm.cols(), "matmul_t {:?} x {:?}ᵀ", am.shape(), bm.shape());
        let mut out = Mat::zeros(am.rows(), bm.rows());
        gemm(1.0, am.view(), bm.view_t(), 0.0, out.view_mut());
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xm, wm) = (self.value(x), self.value(w));
        assert_eq!(xm.cols(), wm.rows(), "linear input width {} vs weight {:?}", xm.cols(), wm.shape());
        let mut out = Mat::zeros(xm.rows(), wm.cols());
        if let Some(b) = b {
            let bm = self.value(b);
            assert_eq!(bm.shape(), (1, wm.cols()), "linear bias shape");
            for i in 0..out.rows() {
                out.row_mut(i).copy_from_slice(bm.data());
            }
            gemm(1.0, xm.view(), wm.view(), 1.0, out.view_mut());
        } else {
            gemm(1.0, xm.view(), wm.view(), 0.0, out.view_mut());
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "sub shape");
        let out = Mat::from_vec(am.rows(), am.cols(), am.data().iter().zip(bm.data()).map(|(x, y)| x - y).collect());
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Sum of `weight * term` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let mut acc = self.scale(terms[0].0, terms[0].1);
        for &(v, w) in &terms[1..] {
            let s = self.scale(v, w);
            acc = self.add(acc, s);
        }
        acc
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (each `[1, D]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (n, d) = xm.shape();
        let (gm, bm) = (self.value(gamma), self.value(beta));
        assert_eq!(gm.shape(), (1, d), "layer_norm gamma");
        assert_eq!(bm.shape(), (1, d), "layer_norm beta");
        let mut xhat = Mat::zeros(n, d);
        let mut out = Mat::zeros(n, d);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat.set(i, j, h);
                out.set(i, j, h * gm.data()[j] + bm.data()[j]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q [S, D]`, `k [S', D]`, `v [S', D]`. Disallowed keys receive exactly
    /// zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<Rc<AttentionMask>>) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (s, d) = qm.shape();
        let sk = km.rows();
        assert_eq!(km.cols(), d, "attention key width");
        assert_eq!(vm.shape(), (sk, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        if let Some(m) = &mask {
            assert_eq!((m.queries(), m.keys()), (s, sk), "attention mask shape");
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * s * sk];
        let mut out = Mat::zeros(s, d);
        for h in 0..heads {
            let p = &mut probs[h * s * sk..(h + 1) * s * sk];
            gemm(
                scale,
                View { data: qm.data(), offset: h * dh, rows: s, cols: dh, rs: d as isize, cs: 1 },
                View { data: km.data(), offset: h * dh, rows: dh, cols: sk, rs: 1, cs: d as isize },
                0.0,
                ViewMut { data: p, offset: 0, rows: s, cols: sk, rs: sk as isize, cs: 1 },
            );
            for i in 0..s {
                let row = &mut p[i * sk..(i + 1) * sk];
                let allowed = mask.as_ref().map(|m| m.row(i));
                let ok = |j: usize| allowed.is_none_or(|a| a[j]);
                let max = (0..sk).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if ok(j) {
                        *x = (*x - max).exp();
                        sum += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                let inv = 1.0 / sum;
                row.iter_mut().for_each(|x| *x *= inv);
            }
            let p = &probs[h * s * sk..(h + 1) * s * sk];
            gemm(
                1.0,
                View { data: p, offset: 0, rows: s, cols: sk, rs: sk as isize, cs: 1 },
                View { data: vm.data(), offset: h * dh, rows: sk, cols: dh, rs: d as isize, cs: 1 },
                0.0,
                ViewMut { data: out.data_mut(), offset: h * dh, rows: s, cols: dh, rs: d as isize, cs: 1 },
            );
        }
        self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    /// Rows of `src` picked by index (repeats allowed).
    pub fn gather_rows(&mut self, src: Var, ids: Vec<usize>) -> Var {
        let sm = self.value(src);
        let mut out = Mat::zeros(ids.len(), sm.cols());
        for (r, &i) in ids.iter().enumerate() {
            assert!(i < sm.rows(), "gather index {i} out of {} rows", sm.rows());
            out.row_mut(r).copy_from_slice(sm.row(i));
        }
        self.push(out, Op::GatherRows { src, ids }, &[src])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::concat_rows(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let sm = self.value(src);
        assert!(start + len <= sm.rows(), "slice {start}+{len} of {} rows", sm.rows());
        let out = sm.slice_rows(start, len);
        self.push(out, Op::SliceRows { src, start }, &[src])
    }

    /// Maps raw `[n, 9]` pose-head outputs to pose vectors: unit quaternion in
    /// columns 0..4, translation passed through, softplus focal in 7..9.
    pub fn pose_decode(&mut self, raw: Var) -> Var {
        let rm = self.value(raw);
        assert_eq!(rm.cols(), 9, "pose_decode expects 9 columns");
        let mut out = rm.clone();
        for i in 0..rm.rows() {
            let row = out.row_mut(i);
            let n = row[..4].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row[..4].iter_mut().for_each(|v| *v /= n);
            for v in &mut row[7..9] {
                *v = softplus(*v);
            }
        }
        self.push(out, Op::PoseDecode(raw), &[raw])
    }

    /// `Σ x ⊙ w` for a constant weight matrix; handy for probing gradients.
    pub fn dot_const(&mut self, x: Var, w: Mat) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.shape(), w.shape(), "dot_const shape");
        let s = xm.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        self.push(Mat::scalar(s), Op::DotConst { x, w }, &[x])
    }

    /// Mean negative log-likelihood of `targets` given as `(row, class)` pairs.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Var {
        assert!(!targets.is_empty(), "cross_entropy needs at least one target");
        let lm = self.value(logits);
        let mut probs = Vec::with_capacity(targets.len());
        let mut nll = 0.0;
        for &(r, c) in &targets {
            let row = lm.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            nll += z.ln() + max - row[c];
            probs.push(exps.into_iter().map(|e| e / z).collect());
        }
        let out = Mat::scalar(nll / targets.len() as f64);
        self.push(out, Op::CrossEntropy { logits, targets, probs }, &[logits])
    }

    /// Mean squared error over the listed rows of `pred`.
    pub fn mse_rows(&mut self, pred: Var, target: Mat, rows: Vec<usize>) -> Var {
        let pm = self.value(pred);
        assert_eq!(pm.shape(), target.shape(), "mse shape");
        assert!(!rows.is_empty(), "mse over no rows");
        let mut acc = 0.0;
        for &r in &rows {
            acc += pm.row(r).iter().zip(target.row(r)).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
        let out = Mat::scalar(acc / (rows.len() * pm.cols()) as f64);
        self.push(out, Op::Mse { pred, target, rows }, &[pred])
    }

    /// Per-row Huber sum, averaged over rows.
    pub fn huber_rows(&mut self, pred: Var, target: Mat, delta: f64) -> Var {
        let pm = self.value(pred);
        assert_eq!(pm.shape(), target.shape(), "huber shape");
        assert!(delta > 0.0);
        let total: f64 = pm.data().iter().zip(target.data()).map(|(p, t)| huber(p - t, delta)).sum();
        let out = Mat::scalar(total / pm.rows() as f64);
        self.push(out, Op::Huber { pred, target, delta }, &[pred])
    }

    /// Reverse pass from a scalar node. Returns gradients for every
    /// non-frozen parameter reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads::new(self.params.len());
        grads[loss.0] = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, m: Mat| {
                if self.nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(a) => a.add_assign(&m),
                        slot @ None => *slot = Some(m),
                    }
                }
            };
            let need = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate_owned(*id, g),
                Op::MatMul(a, b) => {
                    if need(*a) {
                        let mut da = Mat::zeros(self.value(*a).rows(), self.value(*a).cols());
                        gemm(1.0, g.view(), self.value(*b).view_t(), 0.0, da.view_mut());
                        acc(*a, da);
                    }
                    if need(*b) {
                        let mut db = Mat::zeros(self.value(*b).rows(), self.value(*b).cols());
                        gemm(1.0, self.value(*a).view_t(), g.view(), 0.0, db.view_mut());
                        acc(*b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    if need(*a) {
                        let mut da = Mat::zeros(self.value(*a).rows(), self.value(*a).cols());
                        gemm(1.0, g.view(), self.value(*b).view(), 0.0, da.view_mut());
                        acc(*a, da);
                    }
                    if need(*b) {
                        let mut db = Mat::zeros(self.value(*b).rows(), self.value(*b).cols());
                        gemm(1.0, g.view_t(), self.value(*a).view(), 0.0, db.view_mut());
                        acc(*b, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xm, wm) = (self.value(*x), self.value(*w));
                    if need(*x) {
                        let mut dx = Mat::zeros(xm.rows(), xm.cols());
                        gemm(1.0, g.view(), wm.view_t(), 0.0, dx.view_mut());
                        acc(*x, dx);
                    }
                    if need(*w) {
                        let mut dw = Mat::zeros(wm.rows(), wm.cols());
                        gemm(1.0, xm.view_t(), g.view(), 0.0, dw.view_mut());
                        acc(*w, dw);
                    }
                    if let Some(b) = b {
                        if need(*b) {
                            let mut db = Mat::zeros(1, g.cols());
                            for r in 0..g.rows() {
                                for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                    *d += v;
                                }
                            }
                            acc(*b, db);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if need(*b) {
                        acc(*b, g.clone());
                    }
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    if need(*b) {
                        acc(*b, g.map(|v| -v));
                    }
                    acc(*a, g);
                }
                Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let (n, d) = xhat.shape();
                    let gm = self.value(*gamma);
                    if need(*gamma) || need(*beta) {
                        let mut dg = Mat::zeros(1, d);
                        let mut db = Mat::zeros(1, d);
                        for i in 0..n {
                            for j in 0..d {
                                dg.data_mut()[j] += g.get(i, j) * xhat.get(i, j);
                                db.data_mut()[j] += g.get(i, j);
                            }
                        }
                        acc(*gamma, dg);
                        acc(*beta, db);
                    }
                    if need(*x) {
                        let mut dx = Mat::zeros(n, d);
                        for i in 0..n {
                            let dxhat: Vec<f64> = (0..d).map(|j| g.get(i, j) * gm.data()[j]).collect();
                            let m1 = dxhat.iter().sum::<f64>() / d as f64;
                            let m2 = dxhat.iter().zip(xhat.row(i)).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                dx.set(i, j, rstd[i] * (dxhat[j] - m1 - xhat.get(i, j) * m2));
                            }
                        }
                        acc(*x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let xm = self.value(*x);
                    let dx = Mat::from_vec(
                        g.rows(),
                        g.cols(),
                        xm.data().iter().zip(g.data()).map(|(&v, &gv)| gv * gelu_grad(v)).collect(),
                    );
                    acc(*x, dx);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (s, d) = qm.shape();
                    let sk = km.rows();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(s, d);
                    let mut dk = Mat::zeros(sk, d);
                    let mut dv = Mat::zeros(sk, d);
                    let mut ds = vec![0.0; s * sk];
                    for h in 0..*heads {
                        let p = &probs[h * s * sk..(h + 1) * s * sk];
                        let go = View { data: g.data(), offset: h * dh, rows: s, cols: dh, rs: d as isize, cs: 1 };
                        // dP = dO Vᵀ
                        gemm(
                            1.0,
                            go,
                            View { data: vm.data(), offset: h * dh, rows: dh, cols: sk, rs: 1, cs: d as isize },
                            0.0,
                            ViewMut { data: &mut ds, offset: 0, rows: s, cols: sk, rs: sk as isize, cs: 1 },
                        );
                        // dV = Pᵀ dO
                        gemm(
                            1.0,
                            View { data: p, offset: 0, rows: sk, cols: s, rs: 1, cs: sk as isize },
                            go,
                            0.0,
                            ViewMut { data: dv.data_mut(), offset: h * dh, rows: sk, cols: dh, rs: d as isize, cs: 1 },
                        );
                        // softmax backward in place: dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        for i in 0..s {
                            let (pr, dr) = (&p[i * sk..(i + 1) * sk], &mut ds[i * sk..(i + 1) * sk]);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (x, &pp) in dr.iter_mut().zip(pr) {
                                *x = pp * (*x - dot);
                            }
                        }
                        let dsv = View { data: &ds, offset: 0, rows: s, cols: sk, rs: sk as isize, cs: 1 };
                        gemm(
                            scale,
                            dsv,
                            View { data: km.data(), offset: h * dh, rows: sk, cols: dh, rs: d as isize, cs: 1 },
                            0.0,
                            ViewMut { data: dq.data_mut(), offset: h * dh, rows: s, cols: dh, rs: d as isize, cs: 1 },
                        );
                        gemm(
                            scale,
                            View { data: &ds, offset: 0, rows: sk, cols: s, rs: 1, cs: sk as isize },
                            View { data: qm.data(), offset: h * dh, rows: s, cols: dh, rs: d as isize, cs: 1 },
                            0.0,
                            ViewMut { data: dk.data_mut(), offset: h * dh, rows: sk, cols: dh, rs: d as isize, cs: 1 },
                        );
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::GatherRows { src, ids } => {
                    let sm = self.value(*src);
                    let mut ds = Mat::zeros(sm.rows(), sm.cols());
                    for (r, &i) in ids.iter().enumerate() {
                        for (d, v) in ds.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*src, ds);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if need(p) {
                            acc(p, g.slice_rows(start, rows));
                        }
                        start += rows;
                    }
                }
                Op::SliceRows { src, start } => {
                    let sm = self.value(*src);
                    let mut ds = Mat::zeros(sm.rows(), sm.cols());
                    let w = sm.cols();
                    ds.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                    acc(*src, ds);
                }
                Op::PoseDecode(raw) => {
                    let rm = self.value(*raw);
                    let om = node.value.as_ref().expect("pose output");
                    let mut dr = g.clone();
                    for i in 0..rm.rows() {
                        let n = rm.row(i)[..4].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        let qhat = &om.row(i)[..4];
                        let gq = &g.row(i)[..4];
                        let dot: f64 = qhat.iter().zip(gq).map(|(a, b)| a * b).sum();
                        let row = dr.row_mut(i);
                        for j in 0..4 {
                            row[j] = (gq[j] - qhat[j] * dot) / n;
                        }
                        for j in 7..9 {
                            row[j] = g.get(i, j) * sigmoid(rm.get(i, j));
                        }
                    }
                    acc(*raw, dr);
                }
                Op::DotConst { x, w } => acc(*x, w.map(|v| v * g.item())),
                Op::CrossEntropy { logits, targets, probs } => {
                    let lm = self.value(*logits);
                    let mut dl = Mat::zeros(lm.rows(), lm.cols());
                    let s = g.item() / targets.len() as f64;
                    for (&(r, c), p) in targets.iter().zip(probs) {
                        for (j, &pj) in p.iter().enumerate() {
                            let onehot = if j == c { 1.0 } else { 0.0 };
                            let cur = dl.get(r, j);
                            dl.set(r, j, cur + s * (pj - onehot));
                        }
                    }
                    acc(*logits, dl);
                }
                Op::Mse { pred, target, rows } => {
                    let pm = self.value(*pred);
                    let mut dp = Mat::zeros(pm.rows(), pm.cols());
                    let s = 2.0 * g.item() / (rows.len() * pm.cols()) as f64;
                    for &r in rows {
                        for ((d, p), t) in dp.row_mut(r).iter_mut().zip(pm.row(r)).zip(target.row(r)) {
                            *d += s * (p - t);
                        }
                    }
                    acc(*pred, dp);
                }
                Op::Huber { pred, target, delta } => {
                    let pm = self.value(*pred);
                    let s = g.item() / pm.rows() as f64;
                    let dp = Mat::from_vec(
                        pm.rows(),
                        pm.cols(),
                        pm.data()
                            .iter()
                            .zip(target.data())
                            .map(|(p, t)| {
                                let r = p - t;
                                s * if r.abs() <= *delta { r } else { delta * r.signum() }
                            })
                            .collect(),
                    );
                    acc(*pred, dp);
                }
            }
        }
        out
    }
}

#[inline]
fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
