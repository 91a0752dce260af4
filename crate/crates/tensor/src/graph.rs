//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order: a node's parents always have smaller indices. The
//! backward sweep walks the tape once in reverse, so each node is visited
//! exactly once. Graphs are cheap and meant to be rebuilt for every batch;
//! parameters live in a [`ParamStore`] and enter a graph as leaves.

use std::collections::HashMap;

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{
    batch_to_channel_major, channel_major_to_batch, col2im, gemm, im2col, ConvGeom, MatRef,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient reaching `v`; `None` when `v` does not influence the loss or
    /// does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Constant leaf (data, targets).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not stored in a [`ParamStore`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    /// Copies the current value of `v` into a constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(dim_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(av.data(), m, k), MatRef::new(bv.data(), k, n), &mut out, 0.0);
        self.push_checked("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(dim_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        self.push_checked("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        self.push_checked("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        self.push_checked("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x * c);
        self.push_checked("scale", t, Op::Scale(a, c), &[a])
    }

    /// Adds `bias[c]` along axis 1 of `x` (`[N, C, ...]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.ndim() < 2 || bv.ndim() != 1 || bv.len() != xv.shape()[1] {
            return Err(dim_err(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let c = bv.len();
        let inner: usize = xv.shape()[2..].iter().product();
        let mut data = xv.data().to_vec();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let b = bv.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push_checked("add_bias", t, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push_checked("relu", t, Op::Relu(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push_checked("reshape", t, Op::Reshape(x), &[x])
    }

    /// Flattens every axis after the first: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = [v.rows(), v.row_len()];
        self.reshape(x, &shape)
    }

    /// Concatenates `[N, a_i]` matrices along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(dim_err("concat", "no inputs"));
        };
        let n = self.value(*first).rows();
        let mut width = 0;
        for p in parts {
            let v = self.value(*p);
            if v.ndim() != 2 || v.rows() != n {
                return Err(dim_err("concat", format!("part of shape {:?}, batch {n}", v.shape())));
            }
            width += v.shape()[1];
        }
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let t = Tensor::from_parts(vec![n, width], data);
        self.push_checked("concat", t, Op::Concat(parts.to_vec()), parts)
    }

    /// Cross-correlation of `[N, C_in, H, W]` (or a single `[C_in, H, W]`
    /// image) with kernels `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (xv, kv) = (self.value(input), self.value(kernel));
        let single = xv.ndim() == 3;
        let xs: Vec<usize> = if single {
            std::iter::once(1).chain(xv.shape().iter().copied()).collect()
        } else {
            xv.shape().to_vec()
        };
        if xs.len() != 4 || kv.ndim() != 4 || kv.shape()[1] != xs[1] {
            return Err(dim_err(
                "conv2d",
                format!("input {:?}, kernels {:?}", xv.shape(), kv.shape()),
            ));
        }
        let (n, cout) = (xs[0], kv.shape()[0]);
        let geom = ConvGeom::new(xs[1], (xs[2], xs[3]), (kv.shape()[2], kv.shape()[3]), stride, padding)
            .ok_or_else(|| {
                dim_err(
                    "conv2d",
                    format!("kernel {:?} larger than padded input {:?}", kv.shape(), xv.shape()),
                )
            })?;
        let cols = im2col(xv.data(), n, &geom);
        let npos = geom.positions();
        let mut out = vec![0.0; cout * n * npos];
        gemm(
            MatRef::new(kv.data(), cout, geom.col_rows()),
            MatRef::new(&cols, geom.col_rows(), n * npos),
            &mut out,
            0.0,
        );
        let data = channel_major_to_batch(&out, cout, n, npos);
        let shape = if single {
            vec![cout, geom.out_h, geom.out_w]
        } else {
            vec![n, cout, geom.out_h, geom.out_w]
        };
        let t = Tensor::from_parts(shape, data);
        self.push_checked("conv2d", t, Op::Conv2d { input, kernel, geom }, &[input, kernel])
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`]) of
    /// `[N, C_in, H, W]` with kernels `[C_in, C_out, kh, kw]`. The output
    /// extent is `(H - 1) * stride - 2 * padding + kh + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let (xv, kv) = (self.value(input), self.value(kernel));
        if xv.ndim() != 4 || kv.ndim() != 4 || kv.shape()[0] != xv.shape()[1] {
            return Err(dim_err(
                "conv_transpose2d",
                format!("input {:?}, kernels {:?}", xv.shape(), kv.shape()),
            ));
        }
        let (n, cin, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (cout, kh, kw) = (kv.shape()[1], kv.shape()[2], kv.shape()[3]);
        let out_h = ((h - 1) * stride.0 + kh + output_padding.0).checked_sub(2 * padding.0);
        let out_w = ((w - 1) * stride.1 + kw + output_padding.1).checked_sub(2 * padding.1);
        let geom = match (out_h, out_w) {
            (Some(oh), Some(ow)) if output_padding.0 < stride.0 && output_padding.1 < stride.1 => {
                ConvGeom::new(cout, (oh, ow), (kh, kw), stride, padding)
            }
            _ => None,
        };
        // The output image, convolved with the same window, must give back h x w positions.
        let geom = geom.filter(|g| g.out_h == h && g.out_w == w).ok_or_else(|| {
            dim_err(
                "conv_transpose2d",
                format!("inconsistent geometry for input {:?}, kernels {:?}", xv.shape(), kv.shape()),
            )
        })?;
        let xmat = batch_to_channel_major(xv.data(), cin, n, h * w);
        let mut cols = vec![0.0; geom.col_rows() * n * h * w];
        gemm(
            MatRef::new(kv.data(), cin, geom.col_rows()).t(),
            MatRef::new(&xmat, cin, n * h * w),
            &mut cols,
            0.0,
        );
        let data = col2im(&cols, n, &geom);
        let t = Tensor::from_parts(vec![n, cout, geom.h, geom.w], data);
        self.push_checked(
            "conv_transpose2d",
            t,
            Op::ConvTranspose2d { input, kernel, geom },
            &[input, kernel],
        )
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let ss: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let t = Tensor::scalar(ss / av.len() as f64);
        self.push_checked("mse", t, Op::Mse(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push_checked("sum", t, Op::Sum(x), &[x])
    }

    /// Sums scalars (or same-shaped tensors) left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| dim_err("add_all", "no terms"))?;
        rest.iter().try_fold(*first, |acc, t| self.add(acc, *t))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// the store's gradient buffers, so repeated calls accumulate until
    /// [`ParamStore::zero_grad`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward_only(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn backward_only(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(MatRef::new(gd, m, n), MatRef::new(bv.data(), k, n).t(), &mut da, 0.0);
                    acc(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(MatRef::new(av.data(), m, k).t(), MatRef::new(gd, m, n), &mut db, 0.0);
                    acc(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *a, Tensor::from_parts(av.shape().to_vec(), d));
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *b, Tensor::from_parts(bv.shape().to_vec(), d));
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    acc(grads, *a, g.map(|v| v * c));
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let c = self.value(*b).len();
                    let inner: usize = g.shape()[2..].iter().product();
                    let mut db = vec![0.0; c];
                    for (j, chunk) in gd.chunks(inner).enumerate() {
                        db[j % c] += chunk.iter().sum::<f64>();
                    }
                    acc(grads, *b, Tensor::from_parts(vec![c], db));
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let out = self.nodes[i].value.data();
                    let d = gd
                        .iter()
                        .zip(out)
                        .map(|(&gv, &o)| if o > 0.0 { gv } else { 0.0 })
                        .collect();
                    acc(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    acc(grads, *x, Tensor::from_parts(shape, gd.to_vec()));
                }
            }
            Op::Concat(parts) => {
                let n = g.shape()[0];
                let width = g.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&gd[r * width + offset..r * width + offset + w]);
                        }
                        acc(grads, *p, Tensor::from_parts(vec![n, w], d));
                    }
                    offset += w;
                }
            }
            Op::Conv2d { input, kernel, geom } => {
                let (xv, kv) = (self.value(*input), self.value(*kernel));
                let cout = kv.shape()[0];
                let n = xv.len() / (geom.channels * geom.h * geom.w);
                let npos = geom.positions();
                let gmat = batch_to_channel_major(gd, cout, n, npos);
                if self.wants(*kernel) {
                    let cols = im2col(xv.data(), n, geom);
                    let mut dk = vec![0.0; kv.len()];
                    gemm(
                        MatRef::new(&gmat, cout, n * npos),
                        MatRef::new(&cols, geom.col_rows(), n * npos).t(),
                        &mut dk,
                        0.0,
                    );
                    acc(grads, *kernel, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
                if self.wants(*input) {
                    let mut dcols = vec![0.0; geom.col_rows() * n * npos];
                    gemm(
                        MatRef::new(kv.data(), cout, geom.col_rows()).t(),
                        MatRef::new(&gmat, cout, n * npos),
                        &mut dcols,
                        0.0,
                    );
                    let dx = col2im(&dcols, n, geom);
                    acc(grads, *input, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::ConvTranspose2d { input, kernel, geom } => {
                let (xv, kv) = (self.value(*input), self.value(*kernel));
                let (n, cin) = (xv.shape()[0], xv.shape()[1]);
                let hw = geom.positions();
                let cols = im2col(gd, n, geom);
                if self.wants(*kernel) {
                    let xmat = batch_to_channel_major(xv.data(), cin, n, hw);
                    let mut dk = vec![0.0; kv.len()];
                    gemm(
                        MatRef::new(&xmat, cin, n * hw),
                        MatRef::new(&cols, geom.col_rows(), n * hw).t(),
                        &mut dk,
                        0.0,
                    );
                    acc(grads, *kernel, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
                if self.wants(*input) {
                    let mut dxmat = vec![0.0; cin * n * hw];
                    gemm(
                        MatRef::new(kv.data(), cin, geom.col_rows()),
                        MatRef::new(&cols, geom.col_rows(), n * hw),
                        &mut dxmat,
                        0.0,
                    );
                    let dx = channel_major_to_batch(&dxmat, cin, n, hw);
                    acc(grads, *input, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = 2.0 * g.item() / av.len() as f64;
                let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| c * (x - y)).collect();
                if self.wants(*b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    acc(grads, *b, Tensor::from_parts(bv.shape().to_vec(), neg));
                }
                if self.wants(*a) {
                    acc(grads, *a, Tensor::from_parts(av.shape().to_vec(), diff));
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    acc(grads, *x, Tensor::full(&shape, g.item()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward_only(y).unwrap();
        assert_eq!(g.scalar(y), 9.0);
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1., 2.]));
        assert!(matches!(g.backward_only(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = store.add("unused", Tensor::scalar(5.0)).unwrap();
        let mut g = Graph::new();
        let u = g.param(&store, used);
        let _ = g.param(&store, unused);
        let loss = g.mul(u, u).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(used).item(), 4.0);
        assert_eq!(store.grad(unused).item(), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.5)).unwrap();
        let mut g = Graph::new();
        let v = g.param(&store, w);
        let loss = g.scale(v, 2.0).unwrap();
        g.backward(loss, &mut store).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).item(), 4.0);
        store.zero_grad();
        assert_eq!(store.grad(w).item(), 0.0);
    }

    #[test]
    fn frozen_param_receives_nothing() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.5)).unwrap();
        store.set_frozen(w, true);
        let mut g = Graph::new();
        let v = g.param(&store, w);
        let x = g.variable(Tensor::scalar(2.0));
        let y = g.mul(v, x).unwrap();
        let grads = g.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).item(), 0.0);
        assert_eq!(grads.get(x).unwrap().item(), 1.5);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.variable(t(&[4], &[-1.0, 0.0, 2.0, 1e-9]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0, 1e-9]);
        let s = g.sum(r).unwrap();
        let grads = g.backward_only(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[0., 0.]));
        let b = g.input(t(&[2], &[2., 0.]));
        let m = g.mse(a, b).unwrap();
        assert_eq!(g.scalar(m), 2.0);
        let same = g.mse(a, a).unwrap();
        assert_eq!(g.scalar(same), 0.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Dimension { .. })));
        let c = g.input(Tensor::zeros(&[3]));
        assert!(g.mse(a, c).is_err());
    }

    #[test]
    fn non_finite_output_is_reported() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(f64::MAX));
        assert!(matches!(g.scale(a, 10.0), Err(TensorError::NonFinite { op: "scale" })));
    }

    #[test]
    fn concat_and_flatten_shapes() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::zeros(&[2, 1, 2, 2]));
        let f = g.flatten(a).unwrap();
        let b = g.variable(Tensor::full(&[2, 3], 1.0));
        let c = g.concat(&[f, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 7]);
        assert_eq!(g.value(c).row(1), &[0., 0., 0., 0., 1., 1., 1.]);
    }

    #[test]
    fn conv_transpose_restores_shape() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 1, 28, 28]));
        let k = g.input(Tensor::zeros(&[3, 1, 3, 3]));
        let y = g.conv2d(x, k, (2, 2), (0, 0)).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 13, 13]);
        let kt = g.input(Tensor::zeros(&[3, 1, 3, 3]));
        let z = g.conv_transpose2d(y, kt, (2, 2), (0, 0), (1, 1)).unwrap();
        assert_eq!(g.value(z).shape(), &[2, 1, 28, 28]);
        assert!(g.conv_transpose2d(y, kt, (2, 2), (0, 0), (2, 2)).is_err());
    }
}
