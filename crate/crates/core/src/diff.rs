//! Reverse-mode differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation in creation order. Batched geometry ops
//! treat each row as one quaternion (4 columns) or one vector (3 columns), and
//! their forward pass calls the same scalar routines as [`crate::geom`], so
//! values agree bit for bit.

use crate::error::{Error, Result};
use crate::geom::{self, Quaternion, Vec3};
use crate::scalar::Real;

/// Smoothing added under the square root of Euclidean norm derivatives.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, actual: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn scalar(v: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn quat(&self, i: usize) -> Quaternion<T> {
        let r = self.row(i);
        Quaternion::new(r[0], r[1], r[2], r[3])
    }

    pub fn vec3(&self, i: usize) -> Vec3<T> {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    fn strides(&self) -> (isize, isize) {
        (self.cols as isize, 1)
    }

    fn transposed_strides(&self) -> (isize, isize) {
        (1, self.cols as isize)
    }

    fn add_assign(&mut self, o: &Tensor<T>) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a = *a + *b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Scale(Var, T),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    QuatMul(Var, Var),
    QuatConj(Var),
    Rotate(Var, Var),
    RowNorm(Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record. Nodes are only ever appended, so every parent precedes
/// its children and the backward sweep is the reverse of recording order.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when the root does not reach it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::DimensionMismatch { expected: sa.0 * sa.1, actual: sb.0 * sb.1 });
        }
        Ok(())
    }

    fn expect_cols(&self, v: Var, cols: usize) -> Result<()> {
        let c = self.shape(v).1;
        if c != cols {
            return Err(Error::DimensionMismatch { expected: cols, actual: c });
        }
        Ok(())
    }

    /// `(B x n) * (n x m)`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (av, wv) = (self.value(a), self.value(w));
        if av.cols != wv.rows {
            return Err(Error::DimensionMismatch { expected: av.cols, actual: wv.rows });
        }
        let (m, k, n) = (av.rows, av.cols, wv.cols);
        let mut out = Tensor::zeros(m, n);
        let os = out.strides();
        T::gemm(m, k, n, T::one(), &av.data, av.strides(), &wv.data, wv.strides(), T::zero(), &mut out.data, os);
        let rg = self.rg(a) || self.rg(w);
        Ok(self.push(out, Op::MatMul(a, w), rg))
    }

    /// Adds a `1 x m` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(Error::DimensionMismatch { expected: xv.cols, actual: bv.rows * bv.cols });
        }
        let mut out = xv.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bv.data) {
                *o = *o + *b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data.iter_mut() {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o = *o - *v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data.iter_mut() {
            *v = -*v;
        }
        let rg = self.rg(x);
        self.push(out, Op::Neg(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data.iter_mut() {
            *v = *v * c;
        }
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.cols {
            return Err(Error::DimensionMismatch { expected: av.cols, actual: bv.cols });
        }
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let out = Tensor { rows: av.rows + bv.rows, cols: av.cols, data };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatRows(a, b), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows {
            return Err(Error::DimensionMismatch { expected: xv.rows, actual: start + len });
        }
        let data = xv.data[start * xv.cols..(start + len) * xv.cols].to_vec();
        let out = Tensor { rows: len, cols: xv.cols, data };
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    /// Places `b`'s columns to the right of `a`'s.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(Error::DimensionMismatch { expected: av.rows, actual: bv.rows });
        }
        let mut out = Tensor::zeros(av.rows, av.cols + bv.cols);
        for i in 0..av.rows {
            let row = out.row_mut(i);
            row[..av.cols].copy_from_slice(av.row(i));
            row[av.cols..].copy_from_slice(bv.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols {
            return Err(Error::DimensionMismatch { expected: xv.cols, actual: start + len });
        }
        let mut out = Tensor::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    /// Row-wise Hamilton product of two `B x 4` tensors.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_cols(a, 4)?;
        self.same_shape(a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(av.rows, 4);
        for i in 0..av.rows {
            out.row_mut(i).copy_from_slice(&(av.quat(i) * bv.quat(i)).to_array());
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::QuatMul(a, b), rg))
    }

    pub fn quat_conj(&mut self, q: Var) -> Result<Var> {
        self.expect_cols(q, 4)?;
        let qv = self.value(q);
        let mut out = Tensor::zeros(qv.rows, 4);
        for i in 0..qv.rows {
            out.row_mut(i).copy_from_slice(&qv.quat(i).conj().to_array());
        }
        let rg = self.rg(q);
        Ok(self.push(out, Op::QuatConj(q), rg))
    }

    /// Rotates each row of `v` (`B x 3`) by the matching row of `q`
    /// (`B x 4`, not necessarily unit; see [`geom::rotation_matrix`]).
    pub fn rotate(&mut self, q: Var, v: Var) -> Result<Var> {
        self.expect_cols(q, 4)?;
        self.expect_cols(v, 3)?;
        let (qv, vv) = (self.value(q), self.value(v));
        if qv.rows != vv.rows {
            return Err(Error::DimensionMismatch { expected: qv.rows, actual: vv.rows });
        }
        let mut out = Tensor::zeros(qv.rows, 3);
        for i in 0..qv.rows {
            out.row_mut(i).copy_from_slice(&qv.quat(i).rotate(vv.vec3(i)));
        }
        let rg = self.rg(q) || self.rg(v);
        Ok(self.push(out, Op::Rotate(q, v), rg))
    }

    /// Euclidean norm of each row, `B x 1`. The derivative divides by
    /// `sqrt(|x|^2 + NORM_EPS)` so it stays finite at zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows, 1);
        for i in 0..xv.rows {
            let s: T = xv.row(i).iter().map(|v| *v * *v).sum();
            out.data[i] = s.sqrt();
        }
        let rg = self.rg(x);
        self.push(out, Op::RowNorm(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data.iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Gradient of the `1 x 1` node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.shape(root);
        if rows != 1 || cols != 1 {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, contrib: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, w) => {
                let (av, wv) = (self.value(a), self.value(w));
                let (m, k, n) = (av.rows, av.cols, wv.cols);
                if self.rg(a) {
                    let mut ga = Tensor::zeros(m, k);
                    let s = ga.strides();
                    T::gemm(m, n, k, T::one(), &g.data, g.strides(), &wv.data, wv.transposed_strides(), T::zero(), &mut ga.data, s);
                    self.accumulate(grads, a, ga);
                }
                if self.rg(w) {
                    let mut gw = Tensor::zeros(k, n);
                    let s = gw.strides();
                    T::gemm(k, m, n, T::one(), &av.data, av.transposed_strides(), &g.data, g.strides(), T::zero(), &mut gw.data, s);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(b) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (acc, v) in gb.data.iter_mut().zip(g.row(i)) {
                            *acc = *acc + *v;
                        }
                    }
                    self.accumulate(grads, b, gb);
                }
                self.accumulate(grads, x, g.clone());
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (v, o) in gx.data.iter_mut().zip(&out.data) {
                    if !(*o > T::zero()) {
                        *v = T::zero();
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                let mut gb = g.clone();
                gb.data.iter_mut().for_each(|v| *v = -*v);
                self.accumulate(grads, b, gb);
            }
            Op::Neg(x) => {
                let mut gx = g.clone();
                gx.data.iter_mut().for_each(|v| *v = -*v);
                self.accumulate(grads, x, gx);
            }
            Op::Scale(x, c) => {
                let mut gx = g.clone();
                gx.data.iter_mut().for_each(|v| *v = *v * c);
                self.accumulate(grads, x, gx);
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(a).rows * g.cols;
                let ga = Tensor { rows: self.value(a).rows, cols: g.cols, data: g.data[..split].to_vec() };
                let gb = Tensor { rows: self.value(b).rows, cols: g.cols, data: g.data[split..].to_vec() };
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                gx.data[start * xv.cols..start * xv.cols + g.data.len()].copy_from_slice(&g.data);
                self.accumulate(grads, x, gx);
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(a).cols;
                let mut ga = Tensor::zeros(g.rows, ac);
                let mut gb = Tensor::zeros(g.rows, g.cols - ac);
                for i in 0..g.rows {
                    ga.row_mut(i).copy_from_slice(&g.row(i)[..ac]);
                    gb.row_mut(i).copy_from_slice(&g.row(i)[ac..]);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for i in 0..g.rows {
                    gx.row_mut(i)[start..start + g.cols].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, x, gx);
            }
            Op::QuatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let mut ga = Tensor::zeros(g.rows, 4);
                let mut gb = Tensor::zeros(g.rows, 4);
                for i in 0..g.rows {
                    let gi = g.quat(i);
                    // For out = a b: dL/da = g conj(b), dL/db = conj(a) g.
                    ga.row_mut(i).copy_from_slice(&(gi * bv.quat(i).conj()).to_array());
                    gb.row_mut(i).copy_from_slice(&(av.quat(i).conj() * gi).to_array());
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::QuatConj(q) => {
                let mut gq = Tensor::zeros(g.rows, 4);
                for i in 0..g.rows {
                    gq.row_mut(i).copy_from_slice(&g.quat(i).conj().to_array());
                }
                self.accumulate(grads, q, gq);
            }
            Op::Rotate(q, v) => {
                let (qv, vv) = (self.value(q), self.value(v));
                let mut gq = Tensor::zeros(g.rows, 4);
                let mut gv = Tensor::zeros(g.rows, 3);
                for i in 0..g.rows {
                    let (quat, vec, gi) = (qv.quat(i), vv.vec3(i), g.vec3(i));
                    gv.row_mut(i).copy_from_slice(&quat.rotate_inverse(gi));
                    gq.row_mut(i).copy_from_slice(&rotate_quat_grad(quat, vec, gi));
                }
                self.accumulate(grads, q, gq);
                self.accumulate(grads, v, gv);
            }
            Op::RowNorm(x) => {
                let xv = self.value(x);
                let eps = T::lit(NORM_EPS);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for i in 0..xv.rows {
                    let s: T = xv.row(i).iter().map(|v| *v * *v).sum();
                    let f = g.data[i] / (s + eps).sqrt();
                    for (o, v) in gx.row_mut(i).iter_mut().zip(xv.row(i)) {
                        *o = *v * f;
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(x);
                let gx = Tensor { rows: r, cols: c, data: vec![g.data[0]; r * c] };
                self.accumulate(grads, x, gx);
            }
        }
    }
}

/// `g^T d(R(q) v)/dq` for `R(q) = I + s M(q)`, `s = 2/|q|^2`.
fn rotate_quat_grad<T: Real>(q: Quaternion<T>, v: Vec3<T>, g: Vec3<T>) -> [T; 4] {
    let n = q.norm_squared();
    if n == T::zero() {
        return [T::zero(); 4];
    }
    let s = geom::rotation_scale(q);
    let two = T::lit(2.0);
    let Quaternion { w, x, y, z } = q;
    let [v0, v1, v2] = v;
    let [g0, g1, g2] = g;
    // M(q) v
    let m0 = -(y * y + z * z) * v0 + (x * y - w * z) * v1 + (x * z + w * y) * v2;
    let m1 = (x * y + w * z) * v0 - (x * x + z * z) * v1 + (y * z - w * x) * v2;
    let m2 = (x * z - w * y) * v0 + (y * z + w * x) * v1 - (x * x + y * y) * v2;
    let gm = g0 * m0 + g1 * m1 + g2 * m2;
    let dw = g0 * (-z * v1 + y * v2) + g1 * (z * v0 - x * v2) + g2 * (-y * v0 + x * v1);
    let dx = g0 * (y * v1 + z * v2) + g1 * (y * v0 - two * x * v1 - w * v2) + g2 * (z * v0 + w * v1 - two * x * v2);
    let dy = g0 * (-two * y * v0 + x * v1 + w * v2) + g1 * (x * v0 + z * v2) + g2 * (-w * v0 + z * v1 - two * y * v2);
    let dz = g0 * (-two * z * v0 - w * v1 + x * v2) + g1 * (w * v0 - two * z * v1 + y * v2) + g2 * (x * v0 + y * v1);
    let k = two / n;
    [
        s * (dw - k * w * gm),
        s * (dx - k * x * gm),
        s * (dy - k * y * gm),
        s * (dz - k * z * gm),
    ]
}

pub fn d_quat_mul<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    tape.quat_mul(a, b)
}

pub fn d_quat_conj<T: Real>(tape: &mut Tape<T>, q: Var) -> Result<Var> {
    tape.quat_conj(q)
}

/// Batched relative pose: `(q2 * conj(q1), R2 (-R1^T t1) + t2)`.
pub fn d_relative_pose<T: Real>(tape: &mut Tape<T>, q1: Var, t1: Var, q2: Var, t2: Var) -> Result<(Var, Var)> {
    let q1c = tape.quat_conj(q1)?;
    let rotation = tape.quat_mul(q2, q1c)?;
    let back = tape.rotate(q1c, t1)?;
    let back = tape.neg(back);
    let moved = tape.rotate(q2, back)?;
    let translation = tape.add(moved, t2)?;
    Ok((rotation, translation))
}

/// Options for [`d_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Replace each ground-truth quaternion by whichever of `q`, `-q` has a
    /// nonnegative dot product with the prediction.
    pub align_gt_sign: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { align_gt_sign: true }
    }
}

/// `sum_i |t_pred - t_gt| + beta |q_pred - q_gt|` over the batch rows.
pub fn d_loss<T: Real>(
    tape: &mut Tape<T>,
    pred_q: Var,
    pred_t: Var,
    gt_q: &[Quaternion<T>],
    gt_t: &[Vec3<T>],
    beta: T,
    opts: LossOptions,
) -> Result<Var> {
    tape.expect_cols(pred_q, 4)?;
    tape.expect_cols(pred_t, 3)?;
    let rows = tape.shape(pred_q).0;
    for len in [tape.shape(pred_t).0, gt_q.len(), gt_t.len()] {
        if len != rows {
            return Err(Error::DimensionMismatch { expected: rows, actual: len });
        }
    }
    let pq = tape.value(pred_q);
    let mut gq = Tensor::zeros(rows, 4);
    for (i, q) in gt_q.iter().enumerate() {
        let q = if opts.align_gt_sign && pq.quat(i).dot(*q) < T::zero() { -*q } else { *q };
        gq.row_mut(i).copy_from_slice(&q.to_array());
    }
    let gt = Tensor::from_rows(gt_t)?;
    let gq = tape.constant(gq);
    let gt = tape.constant(gt);
    let dt = tape.sub(pred_t, gt)?;
    let dq = tape.sub(pred_q, gq)?;
    let nt = tape.row_norm(dt);
    let nq = tape.row_norm(dq);
    let nq = tape.scale(nq, beta);
    let per_row = tape.add(nt, nq)?;
    Ok(tape.sum(per_row))
}
