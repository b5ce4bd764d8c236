//! Dense tensors and a define-by-run reverse-mode tape.
//!
//! The tape records a handful of coarse operations (row-wise matrix
//! products, gathers, segment softmax, scatter sums, ...) rather than scalar
//! arithmetic, which keeps the graph-attention forward pass to a few dozen
//! nodes per layer. A new tape is built for every forward pass.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range for {len} entries")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} was not recorded on this tape (run the forward pass first)")]
    UnknownVar(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::BadLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of trailing dimensions (1 for scalars and vectors).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec { m: Var, v: Var },
    MatMulT { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Gather { x: Var, index: Arc<[usize]> },
    Concat { parts: Vec<Var> },
    Outer { col: Var, row: Var },
    ScaleRows { x: Var, s: Var },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Exp { x: Var },
    NeighborSoftmax { x: Var, groups: Arc<[usize]> },
    ScatterSum { x: Var, groups: Arc<[usize]> },
    Dropout { x: Var, mask: Vec<f64> },
    Bce { p: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every recorded value, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, zero when nothing flowed into it.
    pub fn get_or_zero(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn check_index(op: &'static str, index: &[usize], len: usize) -> Result<(), TensorError> {
    match index.iter().find(|&&i| i >= len) {
        Some(&bad) => Err(TensorError::IndexOutOfRange {
            op,
            index: bad,
            len,
        }),
        None => Ok(()),
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a trainable input; its gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that needs no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `[r, c] · [c] -> [r]`
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.shape.len() != 2 || vt.shape.len() != 1 || mt.shape[1] != vt.shape[0] {
            return Err(mismatch("matvec", mt, vt));
        }
        let c = vt.shape[0];
        let out: Vec<f64> = (0..mt.shape[0])
            .map(|r| dot(&mt.data[r * c..(r + 1) * c], &vt.data))
            .collect();
        let needs = self.needs(&[m, v]);
        Ok(self.push(Tensor::vector(out), Op::MatVec { m, v }, needs))
    }

    /// Applies `w` to every row of `x`: `[n, k] · [m, k]ᵀ -> [n, m]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.shape.len() != 2 || wt.shape.len() != 2 || xt.shape[1] != wt.shape[1] {
            return Err(mismatch("matmul_t", xt, wt));
        }
        let (n, k, m) = (xt.shape[0], xt.shape[1], wt.shape[0]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let xi = &xt.data[i * k..(i + 1) * k];
            let oi = &mut out[i * m..(i + 1) * m];
            for (o, slot) in oi.iter_mut().enumerate() {
                let wo = &wt.data[o * k..(o + 1) * k];
                *slot = dot(xi, wo);
            }
        }
        let needs = self.needs(&[x, w]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMulT { x, w }, needs))
    }

    /// Adds `b: [m]` to every row of `x: [n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (xt, bt) = (self.value(x), self.value(b));
        if bt.shape.len() != 1 || xt.shape.len() != 2 || xt.shape[1] != bt.shape[0] {
            return Err(mismatch("add_bias", xt, bt));
        }
        let mut out = xt.clone();
        for row in out.data.chunks_exact_mut(bt.shape[0].max(1)) {
            for (o, bias) in row.iter_mut().zip(&bt.data) {
                *o += bias;
            }
        }
        let needs = self.needs(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape != bt.shape {
            return Err(mismatch("add", at, bt));
        }
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(at.shape.clone(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    /// Selects rows: `out[p] = x[index[p]]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let xt = self.value(x);
        if xt.shape.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                left: vec![],
                right: vec![index.len()],
            });
        }
        check_index("gather_rows", &index, xt.rows())?;
        let w = xt.row_len();
        let mut data = Vec::with_capacity(index.len() * w);
        for &i in index.iter() {
            data.extend_from_slice(xt.row(i));
        }
        let mut shape = xt.shape.clone();
        shape[0] = index.len();
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gather { x, index }, needs))
    }

    /// Concatenates `[p, c_k]` matrices column-wise.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(parts[0]);
        let rows = first.rows();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape.len() != 2 || first.shape.len() != 2 || t.rows() != rows {
                return Err(mismatch("concat", first, t));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).row_len()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// `[p] ⊗ [d] -> [p, d]`.
    pub fn outer(&mut self, col: Var, row: Var) -> Result<Var, TensorError> {
        let (ct, rt) = (self.value(col), self.value(row));
        if ct.shape.len() != 1 || rt.shape.len() != 1 {
            return Err(mismatch("outer", ct, rt));
        }
        let mut data = Vec::with_capacity(ct.len() * rt.len());
        for &c in &ct.data {
            data.extend(rt.data.iter().map(|r| c * r));
        }
        let out = Tensor::new(vec![ct.len(), rt.len()], data)?;
        let needs = self.needs(&[col, row]);
        Ok(self.push(out, Op::Outer { col, row }, needs))
    }

    /// Multiplies row `p` of `x` by `s[p]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (xt, st) = (self.value(x), self.value(s));
        if st.shape.len() != 1 || xt.shape.is_empty() || xt.rows() != st.len() {
            return Err(mismatch("scale_rows", xt, st));
        }
        let w = xt.row_len();
        let mut out = xt.clone();
        if w > 0 {
            for (row, &scale) in out.data.chunks_exact_mut(w).zip(&st.data) {
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let needs = self.needs(&[x, s]);
        Ok(self.push(out, Op::ScaleRows { x, s }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        let needs = self.needs(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        let needs = self.needs(&[x]);
        self.push(out, Op::Sigmoid { x }, needs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = v.exp());
        let needs = self.needs(&[x]);
        self.push(out, Op::Exp { x }, needs)
    }

    /// Softmax of `x: [p]` within each group; `groups[p]` names the group of
    /// entry `p`. The group maximum is subtracted before exponentiating.
    pub fn neighbor_softmax(
        &mut self,
        x: Var,
        groups: Arc<[usize]>,
        n_groups: usize,
    ) -> Result<Var, TensorError> {
        let xt = self.value(x);
        if xt.shape.len() != 1 || xt.len() != groups.len() {
            return Err(TensorError::ShapeMismatch {
                op: "neighbor_softmax",
                left: xt.shape.clone(),
                right: vec![groups.len()],
            });
        }
        check_index("neighbor_softmax", &groups, n_groups)?;
        let mut max = vec![f64::NEG_INFINITY; n_groups];
        for (&v, &g) in xt.data.iter().zip(groups.iter()) {
            max[g] = max[g].max(v);
        }
        let mut out: Vec<f64> = xt
            .data
            .iter()
            .zip(groups.iter())
            .map(|(&v, &g)| (v - max[g]).exp())
            .collect();
        let mut sum = vec![0.0; n_groups];
        for (&e, &g) in out.iter().zip(groups.iter()) {
            sum[g] += e;
        }
        for (e, &g) in out.iter_mut().zip(groups.iter()) {
            *e /= sum[g];
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::vector(out),
            Op::NeighborSoftmax { x, groups },
            needs,
        ))
    }

    /// Sums rows of `x` into `n_groups` output rows: `out[groups[p]] += x[p]`.
    pub fn scatter_sum(
        &mut self,
        x: Var,
        groups: Arc<[usize]>,
        n_groups: usize,
    ) -> Result<Var, TensorError> {
        let xt = self.value(x);
        if xt.shape.is_empty() || xt.rows() != groups.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_sum",
                left: xt.shape.clone(),
                right: vec![groups.len()],
            });
        }
        check_index("scatter_sum", &groups, n_groups)?;
        let w = xt.row_len();
        let mut out = vec![0.0; n_groups * w];
        for (p, &g) in groups.iter().enumerate() {
            axpy(1.0, xt.row(p), &mut out[g * w..(g + 1) * w]);
        }
        let mut shape = xt.shape.clone();
        shape[0] = n_groups;
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ScatterSum { x, groups },
            needs,
        ))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `!train` or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(x).clone();
        out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        let needs = self.needs(&[x]);
        self.push(out, Op::Dropout { x, mask }, needs)
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets,
    /// with probabilities clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, p: Var, targets: Vec<f64>) -> Result<Var, TensorError> {
        let pt = self.value(p);
        if pt.len() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                left: pt.shape.clone(),
                right: vec![targets.len()],
            });
        }
        let loss = bce_mean(&pt.data, &targets);
        let needs = self.needs(&[p]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, targets }, needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let node = self.nodes.get(loss.0).ok_or(TensorError::UnknownVar(loss.0))?;
        if node.value.len() != 1 {
            return Err(TensorError::NotScalar(node.value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatVec { m, v } => {
                let (mt, vt) = (self.value(*m), self.value(*v));
                let c = vt.len();
                if wants(*m) {
                    let gm = slot(grads, *m, mt.len());
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, &vt.data, &mut gm[r * c..(r + 1) * c]);
                    }
                }
                if wants(*v) {
                    let gv = slot(grads, *v, c);
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, &mt.data[r * c..(r + 1) * c], gv);
                    }
                }
            }
            Op::MatMulT { x, w } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xt.shape[0], xt.shape[1], wt.shape[0]);
                if wants(*x) {
                    let gx = slot(grads, *x, n * k);
                    for i in 0..n {
                        let gxi = &mut gx[i * k..(i + 1) * k];
                        for o in 0..m {
                            let go = g[i * m + o];
                            if go != 0.0 {
                                axpy(go, &wt.data[o * k..(o + 1) * k], gxi);
                            }
                        }
                    }
                }
                if wants(*w) {
                    let gw = slot(grads, *w, m * k);
                    for i in 0..n {
                        let xi = &xt.data[i * k..(i + 1) * k];
                        for o in 0..m {
                            let go = g[i * m + o];
                            if go != 0.0 {
                                axpy(go, xi, &mut gw[o * k..(o + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, b } => {
                if wants(*x) {
                    axpy(1.0, g, slot(grads, *x, g.len()));
                }
                if wants(*b) {
                    let m = self.value(*b).len();
                    let gb = slot(grads, *b, m);
                    if m > 0 {
                        for row in g.chunks_exact(m) {
                            axpy(1.0, row, gb);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(1.0, g, slot(grads, v, g.len()));
                    }
                }
            }
            Op::Gather { x, index } => {
                if wants(*x) {
                    let xt = self.value(*x);
                    let w = xt.row_len();
                    let gx = slot(grads, *x, xt.len());
                    for (p, &i) in index.iter().enumerate() {
                        axpy(1.0, &g[p * w..(p + 1) * w], &mut gx[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::Concat { parts } => {
                let total = out.row_len();
                let mut offset = 0;
                for &p in parts {
                    let pt = self.value(p);
                    let w = pt.row_len();
                    if wants(p) {
                        let gp = slot(grads, p, pt.len());
                        for r in 0..pt.rows() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            axpy(1.0, src, &mut gp[r * w..(r + 1) * w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Outer { col, row } => {
                let (ct, rt) = (self.value(*col), self.value(*row));
                let d = rt.len();
                if wants(*col) {
                    let gc = slot(grads, *col, ct.len());
                    for (p, gcp) in gc.iter_mut().enumerate() {
                        *gcp += dot(&g[p * d..(p + 1) * d], &rt.data);
                    }
                }
                if wants(*row) {
                    let gr = slot(grads, *row, d);
                    for (p, &c) in ct.data.iter().enumerate() {
                        axpy(c, &g[p * d..(p + 1) * d], gr);
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let (xt, st) = (self.value(*x), self.value(*s));
                let w = xt.row_len();
                if wants(*x) {
                    let gx = slot(grads, *x, xt.len());
                    for (p, &scale) in st.data.iter().enumerate() {
                        axpy(scale, &g[p * w..(p + 1) * w], &mut gx[p * w..(p + 1) * w]);
                    }
                }
                if wants(*s) {
                    let gs = slot(grads, *s, st.len());
                    for (p, gsp) in gs.iter_mut().enumerate() {
                        *gsp += dot(&g[p * w..(p + 1) * w], xt.row(p));
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xt = self.value(*x);
                let gx = slot(grads, *x, xt.len());
                for ((gi, &xi), &go) in gx.iter_mut().zip(&xt.data).zip(g) {
                    *gi += if xi < 0.0 { slope * go } else { go };
                }
            }
            Op::Sigmoid { x } => {
                let gx = slot(grads, *x, out.len());
                for ((gi, &y), &go) in gx.iter_mut().zip(&out.data).zip(g) {
                    *gi += go * y * (1.0 - y);
                }
            }
            Op::Exp { x } => {
                let gx = slot(grads, *x, out.len());
                for ((gi, &y), &go) in gx.iter_mut().zip(&out.data).zip(g) {
                    *gi += go * y;
                }
            }
            Op::NeighborSoftmax { x, groups } => {
                let n_groups = groups.iter().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; n_groups];
                for ((&y, &go), &grp) in out.data.iter().zip(g).zip(groups.iter()) {
                    inner[grp] += y * go;
                }
                let gx = slot(grads, *x, out.len());
                for (p, gi) in gx.iter_mut().enumerate() {
                    *gi += out.data[p] * (g[p] - inner[groups[p]]);
                }
            }
            Op::ScatterSum { x, groups } => {
                let w = out.row_len();
                let gx = slot(grads, *x, groups.len() * w);
                for (p, &grp) in groups.iter().enumerate() {
                    axpy(1.0, &g[grp * w..(grp + 1) * w], &mut gx[p * w..(p + 1) * w]);
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, mask.len());
                for ((gi, &m), &go) in gx.iter_mut().zip(mask).zip(g) {
                    *gi += m * go;
                }
            }
            Op::Bce { p, targets } => {
                let pt = self.value(*p);
                let scale = g[0] / targets.len().max(1) as f64;
                let gp = slot(grads, *p, pt.len());
                for ((gi, &prob), &y) in gp.iter_mut().zip(&pt.data).zip(targets) {
                    if prob > BCE_CLAMP && prob < 1.0 - BCE_CLAMP {
                        *gi += scale * (-y / prob + (1.0 - y) / (1.0 - prob));
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Mean clamped binary cross-entropy; 0 for empty input.
pub fn bce_mean(probs: &[f64], targets: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}

/// Compares an analytic gradient against central differences of `f` and
/// returns the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn finite_difference_check<F>(f: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient entry per parameter");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = f(&probe);
        probe[i] = params[i] - step;
        let down = f(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
