//! Dense row-major `f64` arrays with numpy-style broadcasting.

use std::fmt;

/// A dense multi-dimensional array of 64-bit floats in row-major order.
///
/// `product(shape) == data.len()` always holds; the constructors enforce it.
/// A rank-0 tensor (empty shape) is a scalar holding one value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Broadcast result shape of two shapes, aligned from the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed inside `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Views `small` broadcast against `big` as `[outer, 1, inner]` against
/// `[outer, n, inner]` when the broadcast axes form one contiguous run.
fn collapse_run(big: &[usize], small: &[usize]) -> Option<(usize, usize, usize)> {
    if small.len() > big.len() {
        return None;
    }
    let offset = big.len() - small.len();
    let dim = |i: usize| if i < offset { 1 } else { small[i - offset] };
    let bcast: Vec<bool> = (0..big.len()).map(|i| dim(i) != big[i]).collect();
    for i in 0..big.len() {
        if bcast[i] && dim(i) != 1 {
            return None;
        }
    }
    let first = bcast.iter().position(|&b| b)?;
    let last = bcast.iter().rposition(|&b| b)?;
    // Size-1 axes inside the run are harmless; any other unbroadcast axis breaks it.
    if (first..=last).any(|i| !bcast[i] && big[i] != 1) {
        return None;
    }
    let outer = big[..first].iter().product();
    let n = big[first..=last].iter().product();
    let inner = big[last + 1..].iter().product();
    Some((outer, n, inner))
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    // Innermost axis is handled as a tight loop.
    let inner = out_shape[rank - 1];
    let (sa, sb) = (a_strides[rank - 1], b_strides[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut out = 0;
    loop {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank - 1 {
            ia += idx[d] * a_strides[d];
            ib += idx[d] * b_strides[d];
        }
        for j in 0..inner {
            f(out, ia + j * sa, ib + j * sb);
            out += 1;
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match {} values",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// A `[rows, cols]` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    /// A `[1, n]` row vector.
    pub fn row(data: &[f64]) -> Self {
        Self::new(vec![1, data.len()], data.to_vec())
    }

    /// A `[n, 1]` column vector.
    pub fn column(data: &[f64]) -> Self {
        Self::new(vec![data.len(), 1], data.to_vec())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self { shape: shape.to_vec(), data }
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn is_finite(&self) -> bool {
        // x * 0 is NaN exactly when x is not finite; lane sums keep this vectorizable.
        let mut acc = [0.0f64; 8];
        let mut chunks = self.data.chunks_exact(8);
        for c in &mut chunks {
            for j in 0..8 {
                acc[j] += c[j] * 0.0;
            }
        }
        let tail: f64 = chunks.remainder().iter().map(|v| v * 0.0).sum();
        acc.iter().sum::<f64>() + tail == 0.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    /// Element-wise binary combination with broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Self { shape: self.shape.clone(), data };
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("shapes {:?} and {:?} do not broadcast", self.shape, other.shape)
        });
        if out_shape == self.shape {
            if let Some((outer, n, inner)) = collapse_run(&out_shape, &other.shape) {
                let mut data = Vec::with_capacity(self.data.len());
                for o in 0..outer {
                    let small = &other.data[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let big = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                        data.extend(big.iter().zip(small).map(|(&a, &b)| f(a, b)));
                    }
                }
                return Self { shape: out_shape, data };
            }
        } else if out_shape == other.shape {
            if let Some((outer, n, inner)) = collapse_run(&out_shape, &self.shape) {
                let mut data = Vec::with_capacity(other.data.len());
                for o in 0..outer {
                    let small = &self.data[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let big = &other.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                        data.extend(small.iter().zip(big).map(|(&a, &b)| f(a, b)));
                    }
                }
                return Self { shape: out_shape, data };
            }
        }
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = vec![0.0; numel(&out_shape)];
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            data[o] = f(self.data[ia], other.data[ib]);
        });
        Self { shape: out_shape, data }
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        self.reduce_to(shape)
    }

    /// Owning variant of [`Tensor::sum_to_shape`] that avoids a copy when shapes match.
    pub fn into_sum_to_shape(self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self;
        }
        self.reduce_to(shape)
    }

    fn reduce_to(&self, shape: &[usize]) -> Self {
        if let Some((outer, n, inner)) = collapse_run(&self.shape, shape) {
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for k in 0..n {
                    let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            return Self { shape: shape.to_vec(), data: out };
        }
        let mut out = vec![0.0; numel(shape)];
        let target = broadcast_strides(shape, &self.shape);
        let own = strides_of(&self.shape);
        for_each_broadcast(&self.shape, &own, &target, |_, i, t| {
            out[t] += self.data[i];
        });
        Self { shape: shape.to_vec(), data: out }
    }

    /// Expands a broadcastable tensor to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        if let Some((outer, n, inner)) = collapse_run(shape, &self.shape) {
            let mut data = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                let src = &self.data[o * inner..(o + 1) * inner];
                for _ in 0..n {
                    data.extend_from_slice(src);
                }
            }
            return Self { shape: shape.to_vec(), data };
        }
        Tensor::zeros(shape).add(self)
    }

    pub fn add(&self, other: &Tensor) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis_keep(&self, axis: usize) -> Self {
        assert!(axis < self.rank());
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Self { shape, data: out }
    }

    /// Matrix product of rank-2 tensors, optionally transposing either operand.
    pub fn matmul_t(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Tensor {
        assert!(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 operands");
        let (m, k) = if trans_a { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
        let (k2, n) = if trans_b { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", a.shape, b.shape);
        if k == 0 {
            return Tensor::zeros(&[m, n]);
        }
        let mut c: Vec<f64> = Vec::with_capacity(m * n);
        if m > 0 && n > 0 {
            let (rsa, csa) = if trans_a { (1, a.shape[1]) } else { (a.shape[1], 1) };
            let (rsb, csb) = if trans_b { (1, b.shape[1]) } else { (b.shape[1], 1) };
            // SAFETY: pointers and strides describe buffers of exactly m*k, k*n
            // and m*n elements. With beta = 0 the kernel writes every element of
            // C without reading it, so the length is set only after the call.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    b.data.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    0.0,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
                c.set_len(m * n);
            }
        }
        Tensor { shape: vec![m, n], data: c }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        Self::matmul_t(self, false, other, false)
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data }
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty());
        let base = parts[0].shape();
        let rank = base.len();
        assert!(axis < rank);
        for p in parts {
            assert_eq!(p.rank(), rank, "concat rank mismatch");
            for d in 0..rank {
                if d != axis {
                    assert_eq!(p.shape[d], base[d], "concat extent mismatch on axis {d}");
                }
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        Tensor { shape, data }
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Tensor {
        assert!(axis < self.rank() && start <= end && end <= self.shape[axis]);
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Tensor { shape, data }
    }

    /// Rows `idx` of the leading axis, in order (repeats allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        assert!(self.rank() >= 1);
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_bias_row() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::row(&[10., 20., 30.]);
        assert_eq!(a.add(&b).data(), &[11., 22., 33., 14., 25., 36.]);
        let col = Tensor::column(&[1., -1.]);
        assert_eq!(a.mul(&col).data(), &[1., 2., 3., -4., -5., -6.]);
        assert_eq!(a.mul(&Tensor::scalar(2.0)).data(), &[2., 4., 6., 8., 10., 12.]);
    }

    #[test]
    fn sum_to_shape_is_adjoint_of_broadcast() {
        let g = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let r = g.sum_to_shape(&[3, 1]);
        for j in 0..3 {
            let mut want = 0.0;
            for i in 0..2 {
                for k in 0..4 {
                    want += (i * 12 + j * 4 + k) as f64;
                }
            }
            assert_eq!(r.data()[j], want);
        }
        assert_eq!(g.sum_to_shape(&[]).item(), g.sum());
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let b = Tensor::from_fn(&[4, 2], |i| (i as f64).cos());
        let c = a.matmul(&b);
        let c2 = Tensor::matmul_t(&a.transpose(), true, &b.transpose(), true);
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let mut naive = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    naive[i * 2 + j] += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
            }
        }
        for (x, y) in c.data().iter().zip(&naive) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn concat_slice_roundtrip() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 2], |i| 10.0 + i as f64);
        let c = Tensor::concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.slice_axis(1, 0, 3), a);
        assert_eq!(c.slice_axis(1, 3, 5), b);
    }

    #[test]
    fn sum_axis_keep_middle() {
        let t = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let s = t.sum_axis_keep(1);
        assert_eq!(s.shape(), &[2, 1, 2]);
        assert_eq!(s.data(), &[6., 9., 24., 27.]);
    }
}
