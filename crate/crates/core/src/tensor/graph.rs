use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, softmax_lane};
use super::{lanes, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seg: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    SegmentMean(Var, usize),
    SegmentScale(Var, Var, usize),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    SelectRows(Var, Var, Vec<bool>),
    MeanSquare(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    // `None` for parameter leaves, whose values live in the store.
    value: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Tape of operations over values borrowed from a [`ParamStore`].
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and `backward` is a single reverse sweep.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let Tensor { shape, data } = t;
        self.push(shape, data, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.store.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(d), _) => d,
            (None, Op::Param(id)) => self.store.get(*id).data(),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.data(v).to_vec(),
        }
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        let cols = *s.last().unwrap_or(&1);
        let rows = if cols == 0 {
            0
        } else {
            self.data(v).len() / cols
        };
        (rows, cols)
    }

    /// Fails with [`Error::NonFinite`] if any value of `v` is NaN or infinite.
    pub fn ensure_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.data(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.rows_cols(x);
        if self.data(b).len() != n {
            return Err(Error::dim(format!(
                "bias of length {} for rows of width {n}",
                self.data(b).len()
            )));
        }
        let bias = self.data(b);
        let out: Vec<f64> = self
            .data(x)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        let ng = self.ng(x) || self.ng(b);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddBias(x, b), ng))
    }

    /// `x·w + b` for a weight `w: in×out` and bias `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise op")?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu(x), |v| v * sigmoid(v))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
        })
    }

    /// Row-wise layer normalization over the last dimension, then `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if d == 0 || self.data(gain).len() != d || self.data(bias).len() != d {
            return Err(Error::dim(format!("layer_norm over width {d}")));
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let xs = self.data(x);
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = lanes(&shape, axis)?;
        let mut out = self.data(x).to_vec();
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (k, l) in lane.iter_mut().enumerate() {
                    *l = out[(o * n + k) * inner + i];
                }
                softmax_lane(&mut lane);
                for (k, l) in lane.iter().enumerate() {
                    out[(o * n + k) * inner + i] = *l;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Softmax(x, axis), ng))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `q`, `k`, `v` are `(B·seg)×d` stacks of `B` independent sequences of
    /// `seg` tokens; attention never crosses sequence boundaries. Heads split
    /// the `d` channels into contiguous groups of `d / heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seg: usize, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let (rows, d) = self.rows_cols(q);
        if seg == 0 || rows % seg != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::dim(format!(
                "attention over {rows}x{d} with segment {seg}, {heads} heads"
            )));
        }
        let batch = rows / seg;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * seg * seg];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seg * seg..][..seg * seg];
                for i in 0..seg {
                    let qi = &qd[(b * seg + i) * d + h * dh..][..dh];
                    let lane = &mut p[i * seg..(i + 1) * seg];
                    for (j, s) in lane.iter_mut().enumerate() {
                        let kj = &kd[(b * seg + j) * d + h * dh..][..dh];
                        *s = dot(qi, kj) * scale;
                    }
                    softmax_lane(lane);
                    let orow = &mut out[(b * seg + i) * d + h * dh..][..dh];
                    for (j, &pij) in lane.iter().enumerate() {
                        let vj = &vd[(b * seg + j) * d + h * dh..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += pij * vv;
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let shape = self.shape(q).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::Attention {
                q,
                k,
                v,
                seg,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Mean over each block of `seg` consecutive rows: `(B·seg)×d → B×d`.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if seg == 0 || rows % seg != 0 {
            return Err(Error::dim(format!("segment_mean of {rows} rows by {seg}")));
        }
        let batch = rows / seg;
        let xs = self.data(x);
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            let o = &mut out[b * d..(b + 1) * d];
            for i in 0..seg {
                for (ov, &xv) in o.iter_mut().zip(&xs[(b * seg + i) * d..][..d]) {
                    *ov += xv;
                }
            }
            let inv = 1.0 / seg as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![batch, d], out, Op::SegmentMean(x, seg), ng))
    }

    /// Multiplies every row of segment `b` channel-wise by `gate[b]`.
    pub fn segment_scale(&mut self, x: Var, gate: Var, seg: usize) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        let (gb, gd) = self.rows_cols(gate);
        if seg == 0 || rows != gb * seg || gd != d {
            return Err(Error::dim(format!(
                "segment_scale {rows}x{d} by gate {gb}x{gd} with segment {seg}"
            )));
        }
        let (xs, gs) = (self.data(x), self.data(gate));
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let g = &gs[(r / seg) * d..][..d];
            for j in 0..d {
                out[r * d + j] = xs[r * d + j] * g[j];
            }
        }
        let ng = self.ng(x) || self.ng(gate);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::SegmentScale(x, gate, seg), ng))
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.rows_cols(a), self.rows_cols(b));
        if ca != cb {
            return Err(Error::dim(format!("concat_rows widths {ca} and {cb}")));
        }
        let mut out = self.data(a).to_vec();
        out.extend_from_slice(self.data(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![ra + rb, ca], out, Op::ConcatRows(a, b), ng))
    }

    /// Places `b` to the right of `a`, row by row.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.rows_cols(a), self.rows_cols(b));
        if ra != rb {
            return Err(Error::dim(format!("concat_cols heights {ra} and {rb}")));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![ra, ca + cb], out, Op::ConcatCols(a, b), ng))
    }

    /// Row `r` of the result is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("gather row {bad} of {rows}")));
        }
        let xs = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            out.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![idx.len(), d], out, Op::GatherRows(x, idx), ng))
    }

    /// Row `r` comes from `a` where `take_a[r]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: Vec<bool>) -> Result<Var> {
        self.same_shape(a, b, "select_rows")?;
        let (rows, d) = self.rows_cols(a);
        if take_a.len() != rows {
            return Err(Error::dim(format!(
                "select_rows mask of {} for {rows} rows",
                take_a.len()
            )));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows * d);
        for (r, &ta) in take_a.iter().enumerate() {
            let src = if ta { ad } else { bd };
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::SelectRows(a, b, take_a), ng))
    }

    /// Mean of squared entries, as a one-element tensor.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let xs = self.data(x);
        let v = xs.iter().map(|v| v * v).sum::<f64>() / xs.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(vec![1], vec![v], Op::MeanSquare(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.data(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![v], Op::Sum(x), ng)
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Parameters that do not feed the loss get exactly zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.data(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut out = Gradients::zeros_like(self.store);
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, i, &g, &mut grads, &mut out);
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backward pass".into()));
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        node: &Node,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        // Lazily allocates and hands out the gradient buffer of a parent.
        let mut acc = |p: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[p.0].needs_grad {
                return;
            }
            if let Op::Param(id) = nodes[p.0].op {
                f(out.get_mut(id));
                return;
            }
            let len = nodes[p.0].shape.iter().product();
            let buf = grads[p.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let y = self.data(Var(i));

        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |da| gemm_nt(g, bd, da, m, n, k));
                acc(*b, &mut |db| gemm_tn(ad, g, db, m, k, n));
            }
            Op::AddBias(x, b) => {
                let n = self.data(*b).len();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*b, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| {
                    db.iter_mut().zip(g).for_each(|(d, g)| *d -= g)
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |da| {
                    for ((d, &g), &bv) in da.iter_mut().zip(g).zip(bd) {
                        *d += g * bv;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &g), &av) in db.iter_mut().zip(g).zip(ad) {
                        *d += g * av;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |dx| {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)
            }),
            Op::Relu(x) => {
                let xs = self.data(*x);
                acc(*x, &mut |dx| {
                    for ((d, &g), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        if xv > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |dx| {
                for ((d, &g), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += g * yv * (1.0 - yv);
                }
            }),
            Op::Silu(x) => {
                let xs = self.data(*x);
                acc(*x, &mut |dx| {
                    for ((d, &g), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        let s = sigmoid(xv);
                        *d += g * (s + xv * s * (1.0 - s));
                    }
                });
            }
            Op::Gelu(x) => {
                let xs = self.data(*x);
                acc(*x, &mut |dx| {
                    for ((d, &g), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        let th = (GELU_C * (xv + GELU_A * xv * xv * xv)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
                        *d += g * (0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * du);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.data(*gain).len();
                let gn = self.data(*gain);
                acc(*gain, &mut |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
                acc(*x, &mut |dx| {
                    let mut dh = vec![0.0; d];
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            dh[j] = grow[j] * gn[j];
                            m1 += dh[j];
                            m2 += dh[j] * hrow[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        let drow = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            drow[j] += rstd[r] * (dh[j] - m1 - hrow[j] * m2);
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = lanes(&node.shape, *axis).expect("validated in forward");
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + ii;
                            let s: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                dx[at(k)] += y[at(k)] * (g[at(k)] - s);
                            }
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                seg,
                heads,
                probs,
            } => {
                let (seg, heads) = (*seg, *heads);
                let (rows, d) = self.rows_cols(*q);
                let batch = rows / seg;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut ds = vec![0.0; seg];
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * seg * seg..][..seg * seg];
                        let off = |r: usize| (b * seg + r) * d + h * dh;
                        for i in 0..seg {
                            let gi = &g[off(i)..][..dh];
                            let prow = &p[i * seg..(i + 1) * seg];
                            // dP_ij = dO_i · V_j, and dV_j += P_ij dO_i
                            let mut sdot = 0.0;
                            for j in 0..seg {
                                let dp = dot(gi, &vd[off(j)..][..dh]);
                                ds[j] = dp;
                                sdot += dp * prow[j];
                                let dvj = &mut dv[off(j)..][..dh];
                                for (dvv, &gv) in dvj.iter_mut().zip(gi) {
                                    *dvv += prow[j] * gv;
                                }
                            }
                            for j in 0..seg {
                                let dsij = prow[j] * (ds[j] - sdot) * scale;
                                if dsij == 0.0 {
                                    continue;
                                }
                                let (qo, ko) = (off(i), off(j));
                                for c in 0..dh {
                                    dq[qo + c] += dsij * kd[ko + c];
                                    dk[ko + c] += dsij * qd[qo + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |d| add_into(d, &dq));
                acc(*k, &mut |d| add_into(d, &dk));
                acc(*v, &mut |d| add_into(d, &dv));
            }
            Op::SegmentMean(x, seg) => {
                let d = node.shape[1];
                let inv = 1.0 / *seg as f64;
                acc(*x, &mut |dx| {
                    for (r, drow) in dx.chunks_mut(d).enumerate() {
                        let grow = &g[(r / seg) * d..][..d];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += gv * inv;
                        }
                    }
                });
            }
            Op::SegmentScale(x, gate, seg) => {
                let (_, d) = self.rows_cols(*x);
                let (xs, gs) = (self.data(*x), self.data(*gate));
                acc(*x, &mut |dx| {
                    for (r, drow) in dx.chunks_mut(d).enumerate() {
                        let gt = &gs[(r / seg) * d..][..d];
                        for j in 0..d {
                            drow[j] += g[r * d + j] * gt[j];
                        }
                    }
                });
                acc(*gate, &mut |dgate| {
                    for (r, xrow) in xs.chunks(d).enumerate() {
                        let dgrow = &mut dgate[(r / seg) * d..][..d];
                        for j in 0..d {
                            dgrow[j] += g[r * d + j] * xrow[j];
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let na = self.data(*a).len();
                acc(*a, &mut |da| add_into(da, &g[..na]));
                acc(*b, &mut |db| add_into(db, &g[na..]));
            }
            Op::ConcatCols(a, b) => {
                let ((ra, ca), (_, cb)) = (self.rows_cols(*a), self.rows_cols(*b));
                let w = ca + cb;
                acc(*a, &mut |da| {
                    for r in 0..ra {
                        add_into(&mut da[r * ca..(r + 1) * ca], &g[r * w..r * w + ca]);
                    }
                });
                acc(*b, &mut |db| {
                    for r in 0..ra {
                        add_into(&mut db[r * cb..(r + 1) * cb], &g[r * w + ca..(r + 1) * w]);
                    }
                });
            }
            Op::GatherRows(x, idx) => {
                let d = node.shape[1];
                acc(*x, &mut |dx| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SelectRows(a, b, take_a) => {
                let (_, d) = self.rows_cols(*a);
                acc(*a, &mut |da| {
                    for (r, _) in take_a.iter().enumerate().filter(|(_, t)| **t) {
                        add_into(&mut da[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
                acc(*b, &mut |db| {
                    for (r, _) in take_a.iter().enumerate().filter(|(_, t)| !**t) {
                        add_into(&mut db[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::MeanSquare(x) => {
                let xs = self.data(*x);
                let c = 2.0 * g[0] / xs.len().max(1) as f64;
                acc(*x, &mut |dx| {
                    for (d, &xv) in dx.iter_mut().zip(xs) {
                        *d += c * xv;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
