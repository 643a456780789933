//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates parameter
//! gradients into caller-owned buffers, so per-sequence tapes can run on
//! separate threads and be reduced in a fixed order afterwards.

use super::tensor::{dot, matmul, matmul_t, sigmoid, t_matmul, Mat};

/// Probability clamp applied before taking logs in the BCE objective.
pub const PROB_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(usize),
    Const,
    Gather { param: usize, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    OneMinus(Var),
    Scale(Var, f64),
    Mask(Var, Vec<f64>),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    CausalSoftmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    RowDot(Var, Var),
    Bce { pos: Var, neg: Var, weight: f64 },
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: usize) -> Var {
        let value = self.params[id].clone();
        self.push(value, Op::Param(id))
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    /// Rows `ids` of parameter `param`.
    pub fn gather(&mut self, param: usize, ids: &[usize]) -> Var {
        let table = &self.params[param];
        let mut out = Mat::zeros(ids.len(), table.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(
            out,
            Op::Gather {
                param,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_t(self.value(a), self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows, 1);
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        for (x, y) in v.data.iter_mut().zip(&self.value(b).data) {
            *x *= y;
        }
        self.push(v, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = f(*x));
        self.push(v, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    /// Elementwise product with a fixed mask (inverted dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.data.len(), mask.len());
        for (x, m) in v.data.iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(v, Op::Mask(a, mask))
    }

    /// Row-wise layer normalization with `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.data[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row softmax of a square score matrix restricted to `j <= i`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let s = self.value(a);
        assert_eq!(s.rows, s.cols, "causal softmax needs a square matrix");
        let n = s.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            let row = &s.row(i)[..=i];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.data[i * n + j] = e;
                sum += e;
            }
            for j in 0..=i {
                out.data[i * n + j] /= sum;
            }
        }
        self.push(out, Op::CausalSoftmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        let mut out = Mat::zeros(src.rows, width);
        for r in 0..src.rows {
            out.row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows);
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + m.cols].copy_from_slice(m.row(r));
            }
            offset += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let src = self.value(a);
        let out = Mat::from_vec(1, src.cols, src.row(r).to_vec());
        self.push(out, Op::Row(a, r))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let cols = self.value(rows[0]).cols;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let m = self.value(r);
            assert_eq!(m.shape(), (1, cols));
            data.extend_from_slice(&m.data);
        }
        self.push(Mat::from_vec(rows.len(), cols, data), Op::StackRows(rows.to_vec()))
    }

    /// Per-row inner products, `r×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape());
        let data = (0..am.rows).map(|r| dot(am.row(r), bm.row(r))).collect();
        self.push(Mat::from_vec(am.rows, 1, data), Op::RowDot(a, b))
    }

    /// Weighted binary cross-entropy over positive and negative logits, `1×1`.
    pub fn bce(&mut self, pos: Var, neg: Var, weight: f64) -> Var {
        let loss = weight * bce_loss_general(&self.value(pos).data, &self.value(neg).data);
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::Bce { pos, neg, weight })
    }

    /// Accumulates `d out / d param` into `grads` (one buffer per parameter).
    pub fn backward(&self, out: Var, grads: &mut [Mat]) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = &self.nodes[out.0].value;
        g[out.0] = Some(Mat::filled(seed.rows, seed.cols, 1.0));

        for idx in (0..=out.0).rev() {
            let Some(go) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(p) => grads[*p].add_assign(&go),
                Op::Gather { param, ids } => {
                    let table = &mut grads[*param];
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, v) in table.row_mut(id).iter_mut().zip(go.row(r)) {
                            *t += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_t(&go, self.value(*b));
                    let gb = t_matmul(self.value(*a), &go);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = matmul(&go, self.value(*b));
                    let gb = t_matmul(&go, self.value(*a));
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, go.clone());
                    acc(&mut g, *a, go);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Mat::zeros(1, go.cols);
                    for r in 0..go.rows {
                        for (s, v) in gb.data.iter_mut().zip(go.row(r)) {
                            *s += v;
                        }
                    }
                    acc(&mut g, *bias, gb);
                    acc(&mut g, *a, go);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&go, self.value(*b), |x, y| x * y);
                    let gb = zip_map(&go, self.value(*a), |x, y| x * y);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&go, &node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut g, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&go, &node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut g, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&go, &node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(&mut g, *a, ga);
                }
                Op::OneMinus(a) => {
                    let ga = zip_map(&go, &go, |x, _| -x);
                    acc(&mut g, *a, ga);
                }
                Op::Scale(a, s) => {
                    let ga = zip_map(&go, &go, |x, _| x * s);
                    acc(&mut g, *a, ga);
                }
                Op::Mask(a, mask) => {
                    let mut ga = go;
                    ga.data.iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
                    acc(&mut g, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = go.shape();
                    let gam = &self.value(*gamma).data;
                    let mut gg = Mat::zeros(1, cols);
                    let mut gbeta = Mat::zeros(1, cols);
                    let mut gx = Mat::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gor = go.row(r);
                        let xh = xhat.row(r);
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for c in 0..cols {
                            gg.data[c] += gor[c] * xh[c];
                            gbeta.data[c] += gor[c];
                            let gh = gor[c] * gam[c];
                            sum_g += gh;
                            sum_gx += gh * xh[c];
                        }
                        let inv = inv_std[r];
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let gh = gor[c] * gam[c];
                            out[c] = inv / n * (n * gh - sum_g - xh[c] * sum_gx);
                        }
                    }
                    acc(&mut g, *gamma, gg);
                    acc(&mut g, *beta, gbeta);
                    acc(&mut g, *x, gx);
                }
                Op::CausalSoftmax(a) => {
                    let p = &node.value;
                    let n = p.rows;
                    let mut ga = Mat::zeros(n, n);
                    for i in 0..n {
                        let pr = &p.row(i)[..=i];
                        let gr = &go.row(i)[..=i];
                        let inner = dot(pr, gr);
                        for j in 0..=i {
                            ga.data[i * n + j] = pr[j] * (gr[j] - inner);
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for r in 0..go.rows {
                        ga.row_mut(r)[*start..*start + go.cols].copy_from_slice(go.row(r));
                    }
                    acc(&mut g, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Mat::zeros(go.rows, w);
                        for r in 0..go.rows {
                            gp.row_mut(r).copy_from_slice(&go.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut g, p, gp);
                    }
                }
                Op::Row(a, r) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    ga.row_mut(*r).copy_from_slice(&go.data);
                    acc(&mut g, *a, ga);
                }
                Op::StackRows(rows) => {
                    for (r, &v) in rows.iter().enumerate() {
                        acc(&mut g, v, Mat::from_vec(1, go.cols, go.row(r).to_vec()));
                    }
                }
                Op::RowDot(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    let mut gb = Mat::zeros(bm.rows, bm.cols);
                    for r in 0..am.rows {
                        let s = go.data[r];
                        for c in 0..am.cols {
                            ga.data[r * am.cols + c] = s * bm.get(r, c);
                            gb.data[r * bm.cols + c] = s * am.get(r, c);
                        }
                    }
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Bce { pos, neg, weight } => {
                    let s = go.data[0] * weight;
                    let (gp, gn) = bce_grad_general(&self.value(*pos).data, &self.value(*neg).data);
                    let pm = self.value(*pos);
                    let nm = self.value(*neg);
                    acc(
                        &mut g,
                        *pos,
                        Mat::from_vec(pm.rows, pm.cols, gp.into_iter().map(|v| v * s).collect()),
                    );
                    acc(
                        &mut g,
                        *neg,
                        Mat::from_vec(nm.rows, nm.cols, gn.into_iter().map(|v| v * s).collect()),
                    );
                }
            }
        }
    }
}

fn acc(g: &mut [Option<Mat>], v: Var, m: Mat) {
    match &mut g[v.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn bce_loss_general(pos: &[f64], neg: &[f64]) -> f64 {
    let lp: f64 = pos.iter().map(|&s| clamp_prob(sigmoid(s)).ln()).sum();
    let ln: f64 = neg.iter().map(|&s| (1.0 - clamp_prob(sigmoid(s))).ln()).sum();
    -(lp + ln)
}

fn bce_grad_general(pos: &[f64], neg: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let inside = |p: f64| (PROB_EPS..=1.0 - PROB_EPS).contains(&p);
    let gp = pos
        .iter()
        .map(|&s| {
            let p = sigmoid(s);
            if inside(p) {
                -(1.0 - p)
            } else {
                0.0
            }
        })
        .collect();
    let gn = neg
        .iter()
        .map(|&s| {
            let p = sigmoid(s);
            if inside(p) {
                p
            } else {
                0.0
            }
        })
        .collect();
    (gp, gn)
}

/// Binary cross-entropy over paired positive and negative logits:
/// `−Σ_t [ln σ(pos_t) + ln(1 − σ(neg_t))]`, with σ clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    assert_eq!(
        positive_scores.len(),
        negative_scores.len(),
        "one negative per positive step"
    );
    bce_loss_general(positive_scores, negative_scores)
}

/// Gradient of [`bce_loss`] with respect to each positive and negative logit.
pub fn bce_loss_grad(positive_scores: &[f64], negative_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(positive_scores.len(), negative_scores.len());
    bce_grad_general(positive_scores, negative_scores)
}
