use crate::autodiff::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Conv1d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: f64,
    },
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    Upsample(Var, usize),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Mae(Var, Var),
    Sinusoidal(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    SpectralNorm {
        w: Var,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep visits each node once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// Gradients of a scalar with respect to the leaves of a graph.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Right-aligned broadcasting of two shapes.
struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self, TensorError> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                out.push(x);
            } else if x == 1 {
                out.push(y);
            } else {
                return Err(TensorError::shape(op, a, b));
            }
        }
        let strides = |p: &[usize]| {
            let mut st = vec![0; rank];
            let mut acc = 1;
            for d in (0..rank).rev() {
                st[d] = if p[d] == 1 { 0 } else { acc };
                acc *= p[d];
            }
            st
        };
        Ok(Broadcast {
            sa: strides(&pa),
            sb: strides(&pb),
            out,
        })
    }

    fn numel(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out.len();
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let last = rank - 1;
        let n = self.out[last];
        let (la, lb) = (self.sa[last], self.sb[last]);
        let outer: usize = self.out[..last].iter().product();
        let mut idx = vec![0usize; last];
        let mut o = 0;
        for _ in 0..outer {
            let mut ia = 0;
            let mut ib = 0;
            for d in 0..last {
                ia += idx[d] * self.sa[d];
                ib += idx[d] * self.sb[d];
            }
            for j in 0..n {
                f(o, ia + j * la, ib + j * lb);
                o += 1;
            }
            for d in (0..last).rev() {
                idx[d] += 1;
                if idx[d] < self.out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; no node ever requires a gradient.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(|v| T::lit(f(v.wide())));
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape(), data)?
        } else {
            let bc = Broadcast::new(name, av.shape(), bv.shape())?;
            let mut data = vec![T::zero(); bc.numel()];
            let (ad, bd) = (av.data(), bv.data());
            bc.for_each(|o, ia, ib| data[o] = f(ad[ia], bd[ib]));
            Tensor::new(&bc.out, data)?
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let sw = s.wide();
        self.unary(x, Op::Scale(x, s), |v| v * sw)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let sw = s.wide();
        self.unary(x, Op::AddScalar(x), |v| v + sw)
    }

    /// `1 - x`, used by gated blends.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), kernels::gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).transpose()?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", "axis out of range"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(TensorError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut data = vec![T::zero(); shape.iter().product()];
        let mut offset = 0;
        for &x in xs {
            let len = self.shape(x)[axis];
            let src = self.value(x).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                let s0 = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[s0..s0 + len * inner]);
            }
            offset += len;
        }
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// 1-D cross-correlation. `x` is `[c_in, t]` or `[batch, c_in, t]`,
    /// `w` is `[c_out, c_in, k]`; the output keeps the rank of `x`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, c_in, t) = match xs.as_slice() {
            [c, t] => (1, *c, *t),
            [b, c, t] => (*b, *c, *t),
            _ => return Err(TensorError::shape("conv1d", &xs, &ws)),
        };
        if ws.len() != 3 || ws[1] != c_in {
            return Err(TensorError::shape("conv1d", &xs, &ws));
        }
        let geom = ConvGeom::new(batch, c_in, t, ws[0], ws[2], stride, padding)
            .ok_or_else(|| TensorError::shape("conv1d", &xs, &ws))?;
        let mut out = vec![T::zero(); batch * geom.c_out * geom.t_out];
        kernels::conv1d_forward(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        let shape = if xs.len() == 2 {
            vec![geom.c_out, geom.t_out]
        } else {
            vec![batch, geom.c_out, geom.t_out]
        };
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Conv1d { x, w, geom }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("softmax", "axis out of range"));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::softmax_forward(self.value(x).data(), &mut out, outer, n, inner);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax(x, axis), rg))
    }

    /// Normalises along `axis` and applies a per-feature scale and shift of
    /// length `shape[axis]`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("layer_norm", "axis out of range"));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(TensorError::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::layer_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mut out,
            outer,
            n,
            inner,
            eps,
        );
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            axis,
            eps,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, rg))
    }

    /// Linear upsampling along the last axis by an integer factor.
    pub fn upsample_linear(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        if factor == 0 {
            return Err(TensorError::invalid("upsample_linear", "factor must be >= 1"));
        }
        let mut shape = self.shape(x).to_vec();
        let t = *shape.last().ok_or_else(|| TensorError::invalid("upsample_linear", "rank 0"))?;
        let rows = self.value(x).numel() / t.max(1);
        *shape.last_mut().unwrap() = t * factor;
        let mut out = vec![T::zero(); rows * t * factor];
        kernels::upsample_forward(self.value(x).data(), &mut out, rows, t, factor);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Upsample(x, factor), rg))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("reduce", "axis out of range"));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        let div = if mean { n as f64 } else { 1.0 };
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..n).map(|j| src[(o * n + j) * inner + i].wide()).sum();
                out[o * inner + i] = T::lit(s / div);
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&oshape, out)?, op, rg))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_wide();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::lit(s)), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum_wide() / v.numel().max(1) as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::lit(s)), Op::MeanAll(x), rg)
    }

    /// Mean absolute error between two equally shaped tensors.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(TensorError::shape("mae", p.shape(), t.shape()));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a.wide() - b.wide()).abs())
            .sum();
        let v = s / p.numel().max(1) as f64;
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(T::lit(v)), Op::Mae(pred, target), rg))
    }

    /// Sinusoidal features of a `[n, m]` tensor of radians: for each
    /// frequency `2^k`, `k < n_freq`, and each column, `sin` then `cos`.
    /// Output shape is `[n, 2·m·n_freq]`.
    pub fn sinusoidal(&mut self, x: Var, n_freq: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::invalid("sinusoidal", "rank-2 input required"));
        }
        let (n, m) = (shape[0], shape[1]);
        let width = 2 * m * n_freq;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * width];
        for r in 0..n {
            for k in 0..n_freq {
                let f = (1u64 << k) as f64;
                for c in 0..m {
                    let a = f * src[r * m + c].wide();
                    let o = r * width + k * 2 * m + 2 * c;
                    out[o] = T::lit(a.sin());
                    out[o + 1] = T::lit(a.cos());
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[n, width], out)?, Op::Sinusoidal(x, n_freq), rg))
    }

    /// Selects rows of a rank-2 tensor; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, rows: &[Option<usize>]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::invalid("gather_rows", "rank-2 input required"));
        }
        let (n, m) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); rows.len() * m];
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= n {
                    return Err(TensorError::invalid("gather_rows", format!("row {r} >= {n}")));
                }
                out[i * m..(i + 1) * m].copy_from_slice(&src[r * m..(r + 1) * m]);
            }
        }
        let rg = self.any_grad(&[x]);
        let value = Tensor::new(&[rows.len(), m], out)?;
        Ok(self.push(value, Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// `w / σ` with `σ = uᵀ W v` for fixed singular-vector estimates `u`, `v`,
    /// where `W` is `w` viewed as `[shape[0], rest]`.
    pub fn spectral_normalize(
        &mut self,
        w: Var,
        u: &[f64],
        v: &[f64],
    ) -> Result<Var, TensorError> {
        let wt = self.value(w);
        let rows = wt.shape()[0];
        let cols = wt.numel() / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return Err(TensorError::invalid(
                "spectral_normalize",
                format!("u/v lengths {}/{} for a {rows}x{cols} matrix", u.len(), v.len()),
            ));
        }
        let sigma = crate::nn::spectral::bilinear(wt.data(), u, v, rows, cols)
            .max(crate::nn::spectral::SIGMA_FLOOR);
        let value = wt.map(|x| T::lit(x.wide() / sigma));
        let rg = self.any_grad(&[w]);
        let op = Op::SpectralNorm {
            w,
            u: u.to_vec(),
            v: v.to_vec(),
            sigma,
        };
        Ok(self.push(value, op, rg))
    }

    /// Gradients of the scalar `loss` with respect to every leaf that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::invalid("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                self.reduce_into(grads, *a, gd, node.value.shape(), T::one());
                self.reduce_into(grads, *b, gd, node.value.shape(), sign);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let same = av.shape() == bv.shape();
                if same {
                    if let Some(ga) = self.acc(grads, *a) {
                        for ((o, &gv), &y) in ga.iter_mut().zip(gd).zip(bv.data()) {
                            *o += gv * y;
                        }
                    }
                    if let Some(gb) = self.acc(grads, *b) {
                        for ((o, &gv), &x) in gb.iter_mut().zip(gd).zip(av.data()) {
                            *o += gv * x;
                        }
                    }
                } else {
                    let bc = Broadcast::new("mul", av.shape(), bv.shape()).expect("checked");
                    let (ad, bd) = (av.data(), bv.data());
                    if let Some(ga) = self.acc(grads, *a) {
                        bc.for_each(|o, ia, ib| ga[ia] += gd[o] * bd[ib]);
                    }
                    if let Some(gb) = self.acc(grads, *b) {
                        bc.for_each(|o, ia, ib| gb[ib] += gd[o] * ad[ia]);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, &gv) in gx.iter_mut().zip(gd) {
                        *o += gv * *s;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, &gv) in gx.iter_mut().zip(gd) {
                        *o += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = self.acc(grads, *a) {
                    kernels::matmul_grad_a(gd, bv.data(), ga, m, k, n);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    kernels::matmul_grad_b(av.data(), gd, gb, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (g.shape()[0], g.shape()[1]);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..m {
                        for j in 0..n {
                            gx[j * m + i] += gd[i * n + j];
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let total = shape[*axis];
                let (outer, _, inner) = kernels::axis_split(shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if let Some(gx) = self.acc(grads, x) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for (d, &s) in gx[dst..dst + len * inner]
                                .iter_mut()
                                .zip(&gd[src..src + len * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Conv1d { x, w, geom } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(gx) = self.acc(grads, *x) {
                    kernels::conv1d_backward(geom, xv, wv, gd, Some(gx), None);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    kernels::conv1d_backward(geom, xv, wv, gd, None, Some(gw));
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
                if let Some(gx) = self.acc(grads, *x) {
                    kernels::softmax_backward(node.value.data(), gd, gx, outer, n, inner);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                eps,
            } => {
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let mut gx = self.acc(grads, *x).map(|s| s.to_vec());
                let mut gg = self.acc(grads, *gamma).map(|s| s.to_vec());
                let mut gb = self.acc(grads, *beta).map(|s| s.to_vec());
                kernels::layer_norm_backward(
                    xv,
                    gv,
                    gd,
                    gx.as_deref_mut(),
                    gg.as_deref_mut(),
                    gb.as_deref_mut(),
                    outer,
                    n,
                    inner,
                    *eps,
                );
                for (v, buf) in [(x, gx), (gamma, gg), (beta, gb)] {
                    if let Some(buf) = buf {
                        grads[v.0].as_mut().unwrap().data_mut().copy_from_slice(&buf);
                    }
                }
            }
            Op::Gelu(x) => self.pointwise(grads, *x, gd, |xv, _| kernels::gelu_grad(xv), node),
            Op::Sigmoid(x) => self.pointwise(grads, *x, gd, |_, y| y * (1.0 - y), node),
            Op::Relu(x) => {
                self.pointwise(grads, *x, gd, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 }, node)
            }
            Op::Upsample(x, factor) => {
                let t = *self.shape(*x).last().unwrap();
                let rows = self.value(*x).numel() / t.max(1);
                if let Some(gx) = self.acc(grads, *x) {
                    kernels::upsample_backward(gd, gx, rows, t, *factor);
                }
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = kernels::axis_split(&shape, *axis);
                let div = if matches!(node.op, Op::MeanAxis(..)) {
                    n as f64
                } else {
                    1.0
                };
                if let Some(gx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = T::lit(gd[o * inner + i].wide() / div);
                            for j in 0..n {
                                gx[(o * n + j) * inner + i] += gv;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) | Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let gv = if matches!(node.op, Op::MeanAll(_)) {
                    T::lit(gd[0].wide() / n.max(1) as f64)
                } else {
                    gd[0]
                };
                if let Some(gx) = self.acc(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Mae(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let scale = gd[0].wide() / pv.len().max(1) as f64;
                let sign = |a: T, b: T| {
                    let d = a.wide() - b.wide();
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                };
                if let Some(gp) = self.acc(grads, *p) {
                    for ((o, &a), &b) in gp.iter_mut().zip(pv).zip(tv) {
                        *o += T::lit(sign(a, b));
                    }
                }
                if let Some(gt) = self.acc(grads, *t) {
                    for ((o, &a), &b) in gt.iter_mut().zip(pv).zip(tv) {
                        *o -= T::lit(sign(a, b));
                    }
                }
            }
            Op::Sinusoidal(x, n_freq) => {
                let shape = self.shape(*x);
                let (n, m) = (shape[0], shape[1]);
                let width = 2 * m * n_freq;
                let src = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..n {
                        for k in 0..*n_freq {
                            let f = (1u64 << k) as f64;
                            for c in 0..m {
                                let a = f * src[r * m + c].wide();
                                let o = r * width + k * 2 * m + 2 * c;
                                let d = gd[o].wide() * f * a.cos() - gd[o + 1].wide() * f * a.sin();
                                gx[r * m + c] += T::lit(d);
                            }
                        }
                    }
                }
            }
            Op::GatherRows(x, rows) => {
                let m = self.shape(*x)[1];
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            for c in 0..m {
                                gx[r * m + c] += gd[i * m + c];
                            }
                        }
                    }
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wv = self.value(*w).data();
                let rows = u.len();
                let cols = v.len();
                let dot: f64 = gd.iter().zip(wv).map(|(a, b)| a.wide() * b.wide()).sum();
                let coef = dot / (sigma * sigma);
                if let Some(gw) = self.acc(grads, *w) {
                    for i in 0..rows {
                        for j in 0..cols {
                            let k = i * cols + j;
                            gw[k] += T::lit(gd[k].wide() / sigma - coef * u[i] * v[j]);
                        }
                    }
                }
            }
        }
    }

    fn pointwise(
        &self,
        grads: &mut [Option<Tensor<T>>],
        x: Var,
        gd: &[T],
        deriv: impl Fn(f64, f64) -> f64,
        node: &Node<T>,
    ) {
        let xv = self.value(x).data();
        let yv = node.value.data();
        if let Some(gx) = self.acc(grads, x) {
            for (((o, &gv), &xi), &yi) in gx.iter_mut().zip(gd).zip(xv).zip(yv) {
                *o += T::lit(gv.wide() * deriv(xi.wide(), yi.wide()));
            }
        }
    }

    /// Adds `sign · g` into the gradient of `v`, summing over broadcast axes.
    fn reduce_into(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        gd: &[T],
        out_shape: &[usize],
        sign: T,
    ) {
        let vs = self.shape(v).to_vec();
        let Some(gv) = self.acc(grads, v) else { return };
        if vs == out_shape {
            for (o, &x) in gv.iter_mut().zip(gd) {
                *o += sign * x;
            }
        } else {
            let bc = Broadcast::new("reduce", out_shape, &vs).expect("shapes broadcast");
            bc.for_each(|o, _, ib| gv[ib] += sign * gd[o]);
        }
    }
}
