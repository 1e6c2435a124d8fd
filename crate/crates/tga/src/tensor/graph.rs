use crate::error::{Error, Result};

use super::{numel_of, Tensor};

/// Handle to a tensor inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// The operation catalog. Parameterized variants carry everything needed to
/// re-apply the op, so test harnesses can enumerate the catalog generically.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// Element-wise product of identically shaped tensors.
    Hadamard,
    Add,
    Sub,
    /// Multiply every element by a constant.
    Scale(f32),
    /// Mean over all elements, producing a scalar.
    Mean,
    /// Softmax along `axis`; outputs sum to 1 along that axis.
    Softmax { axis: usize },
    /// log(sum(exp(x))) along `axis`; the axis is removed from the shape.
    LogSumExp { axis: usize },
    /// Euclidean norm over all elements, producing a scalar.
    L2Norm,
    /// Cosine similarity of two non-zero vectors, producing a scalar.
    CosineSim,
    /// Clamp every element into `[lo, hi]`.
    Clamp { lo: f32, hi: f32 },
    /// Bilinear interpolation of a 2-D map to `out_h x out_w`
    /// (align-corners-false convention).
    BilinearResize { out_h: usize, out_w: usize },
    /// Per-tensor min-max normalization to [0,1]; a constant input maps to 0.5
    /// everywhere with zero gradient.
    MinMaxNorm,
    /// 2-D transpose.
    Transpose,
    Reshape { shape: Vec<usize> },
    Tanh,
    /// x / ||x||2 over all elements.
    L2Normalize,
    /// Stack k same-length vectors into a [k, len] matrix.
    ConcatRows,
    /// `[c,h,w] -> [P, c*p*p]` raster-order patch extraction.
    Patchify { patch: usize },
}

struct Node {
    op: OpKind,
    inputs: Vec<Var>,
    out: Var,
}

/// A single-use reverse-mode tape. All tensors participating in one forward
/// pass live in the graph's arena; `backward` replays the recorded nodes in
/// reverse and accumulates gradients into every `requires_grad` tensor.
#[derive(Default)]
pub struct Graph {
    tensors: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Insert a tensor as a leaf; its `requires_grad` flag is honored.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.tensors.push(t);
        Var(self.tensors.len() - 1)
    }

    /// Insert constant data (never differentiated).
    pub fn constant(&mut self, data: Vec<f32>, shape: &[usize]) -> Result<Var> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    /// Insert a parameter leaf (differentiated when `trainable`).
    pub fn parameter(&mut self, data: &[f32], shape: &[usize], trainable: bool) -> Result<Var> {
        let mut t = Tensor::new(data.to_vec(), shape)?;
        t.set_requires_grad(trainable);
        Ok(self.leaf(t))
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.tensors[v.0]
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.tensors[v.0].data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tensors[v.0].shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.tensors[v.0].grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tensors[v.0].requires_grad()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar_value(&self, v: Var) -> f32 {
        debug_assert_eq!(self.tensors[v.0].numel(), 1);
        self.tensors[v.0].data()[0]
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    fn push(&mut self, op: OpKind, inputs: Vec<Var>, data: Vec<f32>, shape: Vec<usize>) -> Var {
        let requires = inputs.iter().any(|&v| self.tensors[v.0].requires_grad());
        let mut t = Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        };
        t.set_requires_grad(requires);
        let out = self.leaf(t);
        self.nodes.push(Node { op, inputs, out });
        out
    }

    fn shape_err(op: &'static str, expected: String, got: String) -> Error {
        Error::ShapeMismatch { op, expected, got }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err(
                "matmul",
                "[m,k] x [k,n]".into(),
                format!("{sa:?} x {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for i in 0..m {
                for kk in 0..k {
                    let aik = da[i * k + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    let row = &db[kk * n..(kk + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aik * row[j];
                    }
                }
            }
        }
        Ok(self.push(OpKind::MatMul, vec![a, b], out, vec![m, n]))
    }

    fn binary_elementwise(
        &mut self,
        op: OpKind,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                name,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, vec![a, b], data, shape))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(OpKind::Hadamard, "hadamard", a, b, |x, y| x * y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(OpKind::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(OpKind::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let data = self.data(a).iter().map(|x| c * x).collect();
        let shape = self.shape(a).to_vec();
        self.push(OpKind::Scale(c), vec![a], data, shape)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.tensor(a).numel() as f64;
        let sum: f64 = self.data(a).iter().map(|&v| v as f64).sum();
        self.push(OpKind::Mean, vec![a], vec![(sum / n) as f32], Vec::new())
    }

    fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, len, inner)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let rank = self.shape(a).len();
        if axis >= rank {
            return Err(Error::Domain {
                op,
                reason: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = Self::lanes(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mut mx = f32::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(src[idx(l)]);
                }
                let mut denom = 0.0f32;
                for l in 0..len {
                    let e = (src[idx(l)] - mx).exp();
                    out[idx(l)] = e;
                    denom += e;
                }
                for l in 0..len {
                    out[idx(l)] /= denom;
                }
            }
        }
        Ok(self.push(OpKind::Softmax { axis }, vec![a], out, shape))
    }

    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_sum_exp", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = Self::lanes(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mut mx = f32::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(src[idx(l)]);
                }
                let mut acc = 0.0f32;
                for l in 0..len {
                    acc += (src[idx(l)] - mx).exp();
                }
                out[o * inner + i] = mx + acc.ln();
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.push(OpKind::LogSumExp { axis }, vec![a], out, out_shape))
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq: f64 = self.data(a).iter().map(|&v| (v as f64) * (v as f64)).sum();
        self.push(OpKind::L2Norm, vec![a], vec![sq.sqrt() as f32], Vec::new())
    }

    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                "cosine_sim",
                "two vectors of equal length".into(),
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (da, db) = (self.data(a), self.data(b));
        let dot: f64 = da.iter().zip(db).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        let na: f64 = da.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let nb: f64 = db.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Domain {
                op: "cosine_sim",
                reason: "undefined for a zero vector".into(),
            });
        }
        let c = (dot / (na * nb)) as f32;
        Ok(self.push(OpKind::CosineSim, vec![a, b], vec![c], Vec::new()))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Result<Var> {
        if lo > hi {
            return Err(Error::Domain {
                op: "clamp",
                reason: format!("lo {lo} > hi {hi}"),
            });
        }
        let data = self.data(a).iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(OpKind::Clamp { lo, hi }, vec![a], data, shape))
    }

    /// Source sample positions and lerp weights for one output row/column.
    /// Centers at `(i + 0.5) * in/out - 0.5`, clamped to the input range.
    fn resize_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
        let scale = in_len as f32 / out_len as f32;
        (0..out_len)
            .map(|o| {
                let s = (o as f32 + 0.5) * scale - 0.5;
                let floor = s.floor();
                let frac = s - floor;
                let i0 = (floor as isize).clamp(0, in_len as isize - 1) as usize;
                let i1 = (floor as isize + 1).clamp(0, in_len as isize - 1) as usize;
                (i0, i1, frac)
            })
            .collect()
    }

    pub fn bilinear_resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err(
                "bilinear_resize",
                "a 2-D map".into(),
                format!("{shape:?}"),
            ));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::Domain {
                op: "bilinear_resize",
                reason: "output dimensions must be positive".into(),
            });
        }
        let (in_h, in_w) = (shape[0], shape[1]);
        let ys = Self::resize_taps(in_h, out_h);
        let xs = Self::resize_taps(in_w, out_w);
        let src = self.data(a);
        let mut out = vec![0.0f32; out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * in_w + x0] * (1.0 - fx) + src[y0 * in_w + x1] * fx;
                let bot = src[y1 * in_w + x0] * (1.0 - fx) + src[y1 * in_w + x1] * fx;
                out[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
        Ok(self.push(
            OpKind::BilinearResize { out_h, out_w },
            vec![a],
            out,
            vec![out_h, out_w],
        ))
    }

    fn minmax_indices(data: &[f32]) -> (usize, usize) {
        let mut imin = 0;
        let mut imax = 0;
        for (i, &v) in data.iter().enumerate() {
            if v < data[imin] {
                imin = i;
            }
            if v > data[imax] {
                imax = i;
            }
        }
        (imin, imax)
    }

    pub fn minmax_norm(&mut self, a: Var) -> Var {
        let src = self.data(a);
        let (imin, imax) = Self::minmax_indices(src);
        let (lo, hi) = (src[imin], src[imax]);
        let range = hi - lo;
        let data = if range == 0.0 {
            vec![0.5f32; src.len()]
        } else {
            src.iter().map(|v| (v - lo) / range).collect()
        };
        let shape = self.shape(a).to_vec();
        self.push(OpKind::MinMaxNorm, vec![a], data, shape)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err(
                "transpose",
                "a 2-D tensor".into(),
                format!("{shape:?}"),
            ));
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.data(a);
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(OpKind::Transpose, vec![a], out, vec![n, m]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel_of(shape) != self.tensor(a).numel() || shape.iter().any(|&d| d == 0) {
            return Err(Self::shape_err(
                "reshape",
                format!("{} elements", self.tensor(a).numel()),
                format!("shape {shape:?}"),
            ));
        }
        let data = self.data(a).to_vec();
        Ok(self.push(
            OpKind::Reshape { shape: shape.to_vec() },
            vec![a],
            data,
            shape.to_vec(),
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(OpKind::Tanh, vec![a], data, shape)
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let norm: f64 = self
            .data(a)
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::Domain {
                op: "l2_normalize",
                reason: "undefined for a zero vector".into(),
            });
        }
        let inv = (1.0 / norm) as f32;
        let data = self.data(a).iter().map(|x| x * inv).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(OpKind::L2Normalize, vec![a], data, shape))
    }

    /// Stack k equal-length vectors into a `[k, len]` matrix.
    pub fn concat_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("concat_rows inputs"));
        }
        let len = self.tensor(rows[0]).numel();
        for &r in rows {
            if self.shape(r).len() != 1 || self.tensor(r).numel() != len {
                return Err(Self::shape_err(
                    "concat_rows",
                    format!("vectors of length {len}"),
                    format!("{:?}", self.shape(r)),
                ));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            data.extend_from_slice(self.data(r));
        }
        Ok(self.push(OpKind::ConcatRows, rows.to_vec(), data, vec![rows.len(), len]))
    }

    /// `[c,h,w] -> [P, c*p*p]`, patches in raster order.
    pub fn patchify(&mut self, a: Var, patch: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(Self::shape_err(
                "patchify",
                "a [c,h,w] tensor".into(),
                format!("{shape:?}"),
            ));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::Domain {
                op: "patchify",
                reason: format!("patch size {patch} must divide {h}x{w}"),
            });
        }
        let (ph, pw) = (h / patch, w / patch);
        let feat = c * patch * patch;
        let src = self.data(a);
        let mut out = vec![0.0f32; ph * pw * feat];
        for py in 0..ph {
            for px in 0..pw {
                let q = py * pw + px;
                for ch in 0..c {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let src_idx = ch * h * w + (py * patch + dy) * w + (px * patch + dx);
                            let dst_idx = q * feat + ch * patch * patch + dy * patch + dx;
                            out[dst_idx] = src[src_idx];
                        }
                    }
                }
            }
        }
        Ok(self.push(OpKind::Patchify { patch }, vec![a], out, vec![ph * pw, feat]))
    }

    /// Catalog dispatch: apply `op` to `inputs`.
    pub fn apply(&mut self, op: &OpKind, inputs: &[Var]) -> Result<Var> {
        let unary = |inputs: &[Var]| -> Result<Var> {
            if inputs.len() == 1 {
                Ok(inputs[0])
            } else {
                Err(Error::Domain {
                    op: "apply",
                    reason: format!("expected 1 input, got {}", inputs.len()),
                })
            }
        };
        let binary = |inputs: &[Var]| -> Result<(Var, Var)> {
            if inputs.len() == 2 {
                Ok((inputs[0], inputs[1]))
            } else {
                Err(Error::Domain {
                    op: "apply",
                    reason: format!("expected 2 inputs, got {}", inputs.len()),
                })
            }
        };
        match op {
            OpKind::MatMul => binary(inputs).and_then(|(a, b)| self.matmul(a, b)),
            OpKind::Hadamard => binary(inputs).and_then(|(a, b)| self.hadamard(a, b)),
            OpKind::Add => binary(inputs).and_then(|(a, b)| self.add(a, b)),
            OpKind::Sub => binary(inputs).and_then(|(a, b)| self.sub(a, b)),
            OpKind::Scale(c) => unary(inputs).map(|a| self.scale(a, *c)),
            OpKind::Mean => unary(inputs).map(|a| self.mean(a)),
            OpKind::Softmax { axis } => unary(inputs).and_then(|a| self.softmax(a, *axis)),
            OpKind::LogSumExp { axis } => unary(inputs).and_then(|a| self.log_sum_exp(a, *axis)),
            OpKind::L2Norm => unary(inputs).map(|a| self.l2_norm(a)),
            OpKind::CosineSim => binary(inputs).and_then(|(a, b)| self.cosine_sim(a, b)),
            OpKind::Clamp { lo, hi } => unary(inputs).and_then(|a| self.clamp(a, *lo, *hi)),
            OpKind::BilinearResize { out_h, out_w } => {
                unary(inputs).and_then(|a| self.bilinear_resize(a, *out_h, *out_w))
            }
            OpKind::MinMaxNorm => unary(inputs).map(|a| self.minmax_norm(a)),
            OpKind::Transpose => unary(inputs).and_then(|a| self.transpose(a)),
            OpKind::Reshape { shape } => unary(inputs).and_then(|a| self.reshape(a, shape)),
            OpKind::Tanh => unary(inputs).map(|a| self.tanh(a)),
            OpKind::L2Normalize => unary(inputs).and_then(|a| self.l2_normalize(a)),
            OpKind::ConcatRows => self.concat_rows(inputs),
            OpKind::Patchify { patch } => unary(inputs).and_then(|a| self.patchify(a, *patch)),
        }
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar output. Gradients accumulate into the
    /// `grad` slot of every `requires_grad` tensor reachable from `out`;
    /// repeated calls keep accumulating until `zero_grads`.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let t = self.tensor(out);
        if t.numel() != 1 {
            return Err(Error::NonScalarOutput {
                shape: t.shape().to_vec(),
            });
        }
        if !t.requires_grad() {
            return Err(Error::DetachedOutput);
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; self.tensors.len()];
        adj[out.0] = Some(vec![1.0]);
        for idx in (0..self.nodes.len()).rev() {
            if adj[self.nodes[idx].out.0].is_none() {
                continue;
            }
            self.backward_node(idx, &mut adj);
        }
        for (i, slot) in adj.into_iter().enumerate() {
            if let Some(g) = slot {
                if self.tensors[i].requires_grad() {
                    self.tensors[i].accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, adj: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let up = adj[node.out.0].clone().expect("upstream gradient present");
        let send = |adj: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>| {
            if !self.tensors[v.0].requires_grad() {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => adj[v.0] = Some(g),
            }
        };
        match &node.op {
            OpKind::MatMul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let da = self.data(a);
                let db = self.data(b);
                // dA = up . B^T
                let mut ga = vec![0.0f32; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let u = up[i * n + j];
                        if u == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            ga[i * k + kk] += u * db[kk * n + j];
                        }
                    }
                }
                send(adj, a, ga);
                // dB = A^T . up
                let mut gb = vec![0.0f32; k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = da[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[kk * n + j] += av * up[i * n + j];
                        }
                    }
                }
                send(adj, b, gb);
            }
            OpKind::Hadamard => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let ga = up.iter().zip(self.data(b)).map(|(u, y)| u * y).collect();
                let gb = up.iter().zip(self.data(a)).map(|(u, x)| u * x).collect();
                send(adj, a, ga);
                send(adj, b, gb);
            }
            OpKind::Add => {
                send(adj, node.inputs[0], up.clone());
                send(adj, node.inputs[1], up);
            }
            OpKind::Sub => {
                send(adj, node.inputs[0], up.clone());
                send(adj, node.inputs[1], up.iter().map(|u| -u).collect());
            }
            OpKind::Scale(c) => {
                send(adj, node.inputs[0], up.iter().map(|u| c * u).collect());
            }
            OpKind::Mean => {
                let a = node.inputs[0];
                let n = self.tensor(a).numel();
                let g = up[0] / n as f32;
                send(adj, a, vec![g; n]);
            }
            OpKind::Softmax { axis } => {
                let a = node.inputs[0];
                let y = self.data(node.out);
                let (outer, len, inner) = Self::lanes(self.shape(a), *axis);
                let mut g = vec![0.0f32; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mut dot = 0.0f32;
                        for l in 0..len {
                            dot += up[idx(l)] * y[idx(l)];
                        }
                        for l in 0..len {
                            g[idx(l)] = y[idx(l)] * (up[idx(l)] - dot);
                        }
                    }
                }
                send(adj, a, g);
            }
            OpKind::LogSumExp { axis } => {
                let a = node.inputs[0];
                let x = self.data(a);
                let y = self.data(node.out);
                let (outer, len, inner) = Self::lanes(self.shape(a), *axis);
                let mut g = vec![0.0f32; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let u = up[o * inner + i];
                        let lse = y[o * inner + i];
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i;
                            g[idx] = u * (x[idx] - lse).exp();
                        }
                    }
                }
                send(adj, a, g);
            }
            OpKind::L2Norm => {
                let a = node.inputs[0];
                let norm = self.data(node.out)[0];
                let g = if norm > 0.0 {
                    let s = up[0] / norm;
                    self.data(a).iter().map(|x| s * x).collect()
                } else {
                    vec![0.0f32; self.tensor(a).numel()]
                };
                send(adj, a, g);
            }
            OpKind::CosineSim => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (da, db) = (self.data(a), self.data(b));
                let c = self.data(node.out)[0];
                let na: f32 = da.iter().map(|v| v * v).sum::<f32>().sqrt();
                let nb: f32 = db.iter().map(|v| v * v).sum::<f32>().sqrt();
                let u = up[0];
                let ga = da
                    .iter()
                    .zip(db)
                    .map(|(x, y)| u * (y / (na * nb) - c * x / (na * na)))
                    .collect();
                let gb = da
                    .iter()
                    .zip(db)
                    .map(|(x, y)| u * (x / (na * nb) - c * y / (nb * nb)))
                    .collect();
                send(adj, a, ga);
                send(adj, b, gb);
            }
            OpKind::Clamp { lo, hi } => {
                let a = node.inputs[0];
                let g = self
                    .data(a)
                    .iter()
                    .zip(&up)
                    .map(|(x, u)| if *x >= *lo && *x <= *hi { *u } else { 0.0 })
                    .collect();
                send(adj, a, g);
            }
            OpKind::BilinearResize { out_h, out_w } => {
                let a = node.inputs[0];
                let (in_h, in_w) = (self.shape(a)[0], self.shape(a)[1]);
                let ys = Self::resize_taps(in_h, *out_h);
                let xs = Self::resize_taps(in_w, *out_w);
                let mut g = vec![0.0f32; in_h * in_w];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let u = up[oy * out_w + ox];
                        g[y0 * in_w + x0] += u * (1.0 - fy) * (1.0 - fx);
                        g[y0 * in_w + x1] += u * (1.0 - fy) * fx;
                        g[y1 * in_w + x0] += u * fy * (1.0 - fx);
                        g[y1 * in_w + x1] += u * fy * fx;
                    }
                }
                send(adj, a, g);
            }
            OpKind::MinMaxNorm => {
                let a = node.inputs[0];
                let x = self.data(a);
                let (imin, imax) = Self::minmax_indices(x);
                let range = x[imax] - x[imin];
                let g = if range == 0.0 {
                    vec![0.0f32; x.len()]
                } else {
                    let y = self.data(node.out);
                    let sum_u: f32 = up.iter().sum();
                    let sum_uy: f32 = up.iter().zip(y).map(|(u, yi)| u * yi).sum();
                    let mut g: Vec<f32> = up.iter().map(|u| u / range).collect();
                    g[imin] += (sum_uy - sum_u) / range;
                    g[imax] -= sum_uy / range;
                    g
                };
                send(adj, a, g);
            }
            OpKind::Transpose => {
                let a = node.inputs[0];
                let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                let mut g = vec![0.0f32; m * n];
                for i in 0..m {
                    for j in 0..n {
                        g[i * n + j] = up[j * m + i];
                    }
                }
                send(adj, a, g);
            }
            OpKind::Reshape { .. } => {
                send(adj, node.inputs[0], up);
            }
            OpKind::Tanh => {
                let y = self.data(node.out);
                let g = up.iter().zip(y).map(|(u, t)| u * (1.0 - t * t)).collect();
                send(adj, node.inputs[0], g);
            }
            OpKind::L2Normalize => {
                let a = node.inputs[0];
                let x = self.data(a);
                let y = self.data(node.out);
                let norm: f32 = x.iter().map(|v| v * v).sum::<f32>().sqrt();
                let dot: f32 = up.iter().zip(y).map(|(u, yi)| u * yi).sum();
                let g = up
                    .iter()
                    .zip(y)
                    .map(|(u, yi)| (u - yi * dot) / norm)
                    .collect();
                send(adj, a, g);
            }
            OpKind::ConcatRows => {
                let len = self.tensor(node.inputs[0]).numel();
                for (r, &v) in node.inputs.iter().enumerate() {
                    send(adj, v, up[r * len..(r + 1) * len].to_vec());
                }
            }
            OpKind::Patchify { patch } => {
                let a = node.inputs[0];
                let shape = self.shape(a);
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (ph, pw, p) = (h / patch, w / patch, *patch);
                let feat = c * p * p;
                let mut g = vec![0.0f32; c * h * w];
                for py in 0..ph {
                    for px in 0..pw {
                        let q = py * pw + px;
                        for ch in 0..c {
                            for dy in 0..p {
                                for dx in 0..p {
                                    let src_idx = ch * h * w + (py * p + dy) * w + (px * p + dx);
                                    let dst_idx = q * feat + ch * p * p + dy * p + dx;
                                    g[src_idx] = up[dst_idx];
                                }
                            }
                        }
                    }
                }
                send(adj, a, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::{grad_check, Tensor};
    use super::*;

    fn leaf(g: &mut Graph, data: &[f32], shape: &[usize]) -> Var {
        g.leaf(Tensor::new(data.to_vec(), shape).unwrap())
    }

    fn grad_leaf(g: &mut Graph, data: &[f32], shape: &[usize]) -> Var {
        g.leaf(Tensor::new(data.to_vec(), shape).unwrap().with_requires_grad())
    }

    #[test]
    fn matmul_hand_contraction() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = leaf(&mut g, &[1.0, 1.0], &[2, 1]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.data(c), &[3.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1.0, 2.0], &[1, 2]);
        let b = leaf(&mut g, &[1.0], &[1, 1]);
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("[1, 1]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[0.0, 0.0], &[2]);
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.data(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let data: Vec<f32> = (0..12).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mut g = Graph::new();
            let x = leaf(&mut g, &data, &[3, 4]);
            let y = g.softmax(x, 1).unwrap();
            for row in g.data(y).chunks(4) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn cosine_sim_hand_value() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[3.0, 4.0], &[2]);
        let b = leaf(&mut g, &[4.0, 3.0], &[2]);
        let c = g.cosine_sim(a, b).unwrap();
        // 24 / (5 * 5)
        assert!((g.scalar_value(c) - 0.96).abs() < 1e-6);
    }

    #[test]
    fn cosine_sim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let data: Vec<f32> = (0..6).map(|_| rng.random_range(-2.0..2.0) as f32 + 0.1).collect();
            let mut g = Graph::new();
            let u = leaf(&mut g, &data, &[6]);
            let c = g.cosine_sim(u, u).unwrap();
            assert!((g.scalar_value(c) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_sim_zero_vector_rejected() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[0.0, 0.0], &[2]);
        let b = leaf(&mut g, &[1.0, 0.0], &[2]);
        assert!(matches!(g.cosine_sim(a, b), Err(Error::Domain { .. })));
    }

    #[test]
    fn log_sum_exp_single_element_is_identity() {
        for a in [-3.25f32, 0.0, 7.5] {
            let mut g = Graph::new();
            let x = leaf(&mut g, &[a], &[1]);
            let y = g.log_sum_exp(x, 0).unwrap();
            assert_eq!(g.scalar_value(y), a);
        }
    }

    #[test]
    fn log_sum_exp_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let data: Vec<f32> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
            let mx = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut g = Graph::new();
            let x = leaf(&mut g, &data, &[5]);
            let y = g.log_sum_exp(x, 0).unwrap();
            let v = g.scalar_value(y);
            assert!(v >= mx - 1e-5, "lse {v} < max {mx}");
            assert!(v <= mx + (5.0f32).ln() + 1e-5);
        }
    }

    #[test]
    fn clamp_rejects_inverted_bounds() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[0.0], &[1]);
        assert!(matches!(g.clamp(x, 1.0, -1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn bilinear_resize_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xa: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xb: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ca, cb) = (0.7f32, -1.3f32);
        let mix: Vec<f32> = xa.iter().zip(&xb).map(|(a, b)| ca * a + cb * b).collect();

        let resize = |data: &[f32]| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::new(data.to_vec(), &[4, 4]).unwrap());
            let y = g.bilinear_resize(x, 9, 7).unwrap();
            g.data(y).to_vec()
        };
        let ra = resize(&xa);
        let rb = resize(&xb);
        let rmix = resize(&mix);
        for i in 0..rmix.len() {
            assert!((rmix[i] - (ca * ra[i] + cb * rb[i])).abs() < 1e-5);
        }
    }

    #[test]
    fn minmax_norm_unit_range_and_degenerate_case() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2.0, -1.0, 0.5, 3.0], &[4]);
        let y = g.minmax_norm(x);
        let out = g.data(y);
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(out[1], 0.0);
        assert_eq!(out[3], 1.0);

        let c = leaf(&mut g, &[4.2; 6], &[6]);
        let yc = g.minmax_norm(c);
        assert_eq!(g.data(yc), &[0.5; 6]);
    }

    #[test]
    fn minmax_norm_degenerate_gradient_is_zero() {
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[1.0; 4], &[4]);
        let y = g.minmax_norm(x);
        let m = g.mean(y);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn patchify_raster_order() {
        // 1 channel, 4x4, patch 2: patch 0 is the top-left 2x2 block.
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let mut g = Graph::new();
        let x = leaf(&mut g, &data, &[1, 4, 4]);
        let p = g.patchify(x, 2).unwrap();
        assert_eq!(g.shape(p), &[4, 4]);
        assert_eq!(&g.data(p)[0..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&g.data(p)[12..16], &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // y = sum(x ⊙ x) with x = [3] → dy/dx = 2x = [6]
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[3.0], &[1]);
        let sq = g.hadamard(x, x).unwrap();
        let y = g.mean(sq); // single element: mean == sum
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_of_mean_is_uniform() {
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[1.0, 2.0, 3.0, 4.0], &[4]);
        let y = g.mean(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn backward_detached_output_rejected() {
        let mut g = Graph::new();
        let c = leaf(&mut g, &[1.0], &[1]);
        let y = g.scale(c, 2.0);
        assert_eq!(g.backward(y).unwrap_err(), Error::DetachedOutput);
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[1.0, 2.0], &[2]);
        let y = g.scale(x, 2.0);
        assert!(matches!(
            g.backward(y),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[2.0], &[1]);
        let y = g.scale(x, 3.0);
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
        g.zero_grads();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0]);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        // y = mean(x*2 + x*3) over scalars → dy/dx = 5
        let mut g = Graph::new();
        let x = grad_leaf(&mut g, &[1.5], &[1]);
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 3.0);
        let s = g.add(a, b).unwrap();
        let y = g.mean(s);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
    }

    // ── grad-check sweep over the op catalog ─────────────────────────

    /// Random vector with entries in (lo, hi).
    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    /// Well-separated values in arbitrary order (avoids min/max ties and
    /// near-ties that break finite differences through ordering ops).
    fn separated_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        let mut vals: Vec<f32> = (0..n)
            .map(|i| i as f32 * 0.15 + rng.random_range(0.0..0.05))
            .collect();
        for i in (1..vals.len()).rev() {
            let j = rng.random_range(0..=i);
            vals.swap(i, j);
        }
        vals
    }

    /// Reduce any op output to a scalar through a fixed random linear
    /// functional so position-dependent VJP errors cannot cancel.
    fn weighted_head(g: &mut Graph, v: Var, weights: &[f32]) -> Result<Var> {
        let shape = g.shape(v).to_vec();
        let w = g.constant(weights[..g.tensor(v).numel()].to_vec(), &shape)?;
        let prod = g.hadamard(v, w)?;
        Ok(g.mean(prod))
    }

    #[test]
    fn grad_check_passes_for_every_catalog_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let weights = rand_vec(&mut rng, 256, -2.0, 2.0);
        let h = 1e-3f32;
        let tol = 1e-3f32;

        // (name, point, closure) triples; each closure maps the probe var to a scalar.
        type Case = (
            &'static str,
            Tensor,
            Box<dyn Fn(&mut Graph, Var) -> Result<Var>>,
        );
        let mut cases: Vec<Case> = Vec::new();

        let w = weights.clone();
        let other = rand_vec(&mut rng, 6, -1.0, 1.0);
        cases.push((
            "matmul_lhs",
            Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[3, 2])?;
                let y = g.matmul(x, b)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        let other = rand_vec(&mut rng, 6, -1.0, 1.0);
        cases.push((
            "matmul_rhs",
            Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[3, 2]).unwrap(),
            Box::new(move |g, x| {
                let a = g.constant(other.clone(), &[2, 3])?;
                let y = g.matmul(a, x)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        let other = rand_vec(&mut rng, 8, -1.0, 1.0);
        cases.push((
            "hadamard",
            Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[8])?;
                let y = g.hadamard(x, b)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        let other = rand_vec(&mut rng, 8, -1.0, 1.0);
        cases.push((
            "add",
            Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[8])?;
                let y = g.add(x, b)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        let other = rand_vec(&mut rng, 8, -1.0, 1.0);
        cases.push((
            "sub",
            Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[8])?;
                let y = g.sub(b, x)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "scale",
            Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8]).unwrap(),
            Box::new(move |g, x| {
                let y = g.scale(x, -1.7);
                weighted_head(g, y, &w)
            }),
        ));
        cases.push((
            "mean",
            Tensor::new(rand_vec(&mut rng, 9, -1.0, 1.0), &[9]).unwrap(),
            Box::new(|g, x| Ok(g.mean(x))),
        ));
        let w = weights.clone();
        cases.push((
            "softmax",
            Tensor::new(rand_vec(&mut rng, 12, -2.0, 2.0), &[3, 4]).unwrap(),
            Box::new(move |g, x| {
                let y = g.softmax(x, 1)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "log_sum_exp",
            Tensor::new(rand_vec(&mut rng, 12, -2.0, 2.0), &[3, 4]).unwrap(),
            Box::new(move |g, x| {
                let y = g.log_sum_exp(x, 1)?;
                weighted_head(g, y, &w)
            }),
        ));
        cases.push((
            "l2_norm",
            Tensor::new(rand_vec(&mut rng, 8, 0.2, 1.2), &[8]).unwrap(),
            Box::new(|g, x| Ok(g.l2_norm(x))),
        ));
        let other = rand_vec(&mut rng, 6, 0.2, 1.0);
        cases.push((
            "cosine_sim_lhs",
            Tensor::new(rand_vec(&mut rng, 6, 0.2, 1.0), &[6]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[6])?;
                g.cosine_sim(x, b)
            }),
        ));
        let other = rand_vec(&mut rng, 6, 0.2, 1.0);
        cases.push((
            "cosine_sim_rhs",
            Tensor::new(rand_vec(&mut rng, 6, 0.2, 1.0), &[6]).unwrap(),
            Box::new(move |g, x| {
                let a = g.constant(other.clone(), &[6])?;
                g.cosine_sim(a, x)
            }),
        ));
        // Keep clamp probes away from the boundaries so central differences
        // see a locally smooth function.
        let w = weights.clone();
        let clamp_point: Vec<f32> = rand_vec(&mut rng, 8, -1.0, 1.0)
            .into_iter()
            .map(|v| {
                if (v.abs() - 0.5).abs() < 0.02 {
                    v + 0.05
                } else {
                    v
                }
            })
            .collect();
        cases.push((
            "clamp",
            Tensor::new(clamp_point, &[8]).unwrap(),
            Box::new(move |g, x| {
                let y = g.clamp(x, -0.5, 0.5)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "bilinear_resize",
            Tensor::new(rand_vec(&mut rng, 16, -1.0, 1.0), &[4, 4]).unwrap(),
            Box::new(move |g, x| {
                let y = g.bilinear_resize(x, 7, 5)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "minmax_norm",
            Tensor::new(separated_vec(&mut rng, 9), &[3, 3]).unwrap(),
            Box::new(move |g, x| {
                let y = g.minmax_norm(x);
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "transpose",
            Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3]).unwrap(),
            Box::new(move |g, x| {
                let y = g.transpose(x)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "reshape",
            Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3]).unwrap(),
            Box::new(move |g, x| {
                let y = g.reshape(x, &[3, 2])?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "tanh",
            Tensor::new(rand_vec(&mut rng, 8, -2.0, 2.0), &[8]).unwrap(),
            Box::new(move |g, x| {
                let y = g.tanh(x);
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "l2_normalize",
            Tensor::new(rand_vec(&mut rng, 8, 0.2, 1.2), &[8]).unwrap(),
            Box::new(move |g, x| {
                let y = g.l2_normalize(x)?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        let other = rand_vec(&mut rng, 4, -1.0, 1.0);
        cases.push((
            "concat_rows",
            Tensor::new(rand_vec(&mut rng, 4, -1.0, 1.0), &[4]).unwrap(),
            Box::new(move |g, x| {
                let b = g.constant(other.clone(), &[4])?;
                let y = g.concat_rows(&[x, b])?;
                weighted_head(g, y, &w)
            }),
        ));
        let w = weights.clone();
        cases.push((
            "patchify",
            Tensor::new(rand_vec(&mut rng, 2 * 4 * 4, -1.0, 1.0), &[2, 4, 4]).unwrap(),
            Box::new(move |g, x| {
                let y = g.patchify(x, 2)?;
                weighted_head(g, y, &w)
            }),
        ));

        for (name, point, f) in cases {
            let err = grad_check(f, &point, h)
                .unwrap_or_else(|e| panic!("{name}: grad_check failed to run: {e}"));
            assert!(err < tol, "{name}: grad error {err} >= {tol}");
        }
    }

    #[test]
    fn apply_dispatch_matches_direct_calls() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = leaf(&mut g, &[1.0, 1.0], &[2, 1]);
        let via_apply = g.apply(&OpKind::MatMul, &[a, b]).unwrap();
        let direct = g.matmul(a, b).unwrap();
        assert_eq!(g.data(via_apply), g.data(direct));

        let x = leaf(&mut g, &[1.0, -2.0], &[2]);
        let y = g.apply(&OpKind::Clamp { lo: -1.0, hi: 1.0 }, &[x]).unwrap();
        assert_eq!(g.data(y), &[1.0, -1.0]);
    }
}
