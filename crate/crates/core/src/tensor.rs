//! Dense row-major `f64` tensors.
//!
//! Shapes of rank 1 and 2 are what the rest of the crate works with; the
//! broadcasting helpers treat a rank-1 shape `[c]` as `[1, c]`.

use std::fmt;

use crate::error::{invalid, Error, Result};

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

impl Tensor {
    /// Builds a tensor from literal values. Rejects empty or zero extents, a
    /// length that disagrees with the shape, and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite literal {bad}")));
        }
        Ok(Self { shape, data })
    }

    /// Crate-internal constructor for computed values (which may legitimately
    /// overflow); the length invariant is still asserted.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Row count when viewed as a matrix (`[c]` counts as one row).
    pub fn rows(&self) -> usize {
        as_matrix(&self.shape).0
    }

    pub fn cols(&self) -> usize {
        as_matrix(&self.shape).1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self::from_parts(shape, self.data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the given rows of a matrix into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_parts(vec![indices.len(), c], data)
    }

    /// Index of the largest entry in each row (first on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    best
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(invalid(format!("shape {shape:?} must have positive extents")));
    }
    Ok(())
}

/// `(rows, cols)` of a rank-1 or rank-2 shape.
pub(crate) fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [c] => (1, *c),
        [r, c] => (*r, *c),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

/// Result shape of a broadcasting elementwise op, or `None` if incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    if a.len() > 2 || b.len() > 2 {
        return None;
    }
    let (ar, ac) = as_matrix(a);
    let (br, bc) = as_matrix(b);
    let r = dim(ar, br)?;
    let c = dim(ac, bc)?;
    if a.len() == 2 || b.len() == 2 {
        Some(vec![r, c])
    } else {
        Some(vec![c])
    }
}

fn dim(x: usize, y: usize) -> Option<usize> {
    match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    }
}

/// True when `from` can be broadcast to `to` (every extent equal or 1).
pub(crate) fn broadcastable_to(from: &[usize], to: &[usize]) -> bool {
    if from == to {
        return true;
    }
    if to.len() > 2 || from.len() > 2 {
        return false;
    }
    let (fr, fc) = as_matrix(from);
    let (tr, tc) = as_matrix(to);
    (fr == tr || fr == 1) && (fc == tc || fc == 1)
}

pub(crate) fn binary_broadcast(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        return a.zip_map(b, op, f);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let (r, c) = as_matrix(&out_shape);
    let (ar, ac) = as_matrix(&a.shape);
    let (br, bc) = as_matrix(&b.shape);
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let av = a.data[ai * ac + if ac == 1 { 0 } else { j }];
            let bv = b.data[bi * bc + if bc == 1 { 0 } else { j }];
            data.push(f(av, bv));
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sums `t` down to `target`, which must broadcast to `t`'s shape.
pub(crate) fn sum_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    if t.shape == target {
        return Ok(t.clone());
    }
    if !broadcastable_to(target, &t.shape) {
        return Err(Error::ShapeMismatch {
            op: "sum_to",
            lhs: t.shape.clone(),
            rhs: target.to_vec(),
        });
    }
    let (r, c) = as_matrix(&t.shape);
    let (tr, tc) = as_matrix(target);
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += t.data[i * c + j];
        }
    }
    Ok(Tensor::from_parts(target.to_vec(), out))
}

/// Expands `t` to `target` by repetition along extents of 1.
pub(crate) fn broadcast_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    if t.shape == target {
        return Ok(t.clone());
    }
    if !broadcastable_to(&t.shape, target) {
        return Err(Error::ShapeMismatch {
            op: "broadcast_to",
            lhs: t.shape.clone(),
            rhs: target.to_vec(),
        });
    }
    let (r, c) = as_matrix(target);
    let (sr, sc) = as_matrix(&t.shape);
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let si = if sr == 1 { 0 } else { i };
        for j in 0..c {
            out.push(t.data[si * sc + if sc == 1 { 0 } else { j }]);
        }
    }
    Ok(Tensor::from_parts(target.to_vec(), out))
}

/// `op(a) · op(b)` for rank-2 operands, where `op` optionally transposes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(mismatch());
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(mismatch());
    }
    // Row-major strides, swapped for a transposed view.
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![0.0; m * n];
    // SAFETY: pointers cover m*k, k*n and m*n elements under the given strides,
    // and `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_literals() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[4, 1]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[1], &[4, 3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[2, 3]), None);
    }

    #[test]
    fn matmul_with_transposes() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(2, 3, vec![1., 0., 1., 0., 1., 0.]).unwrap();
        // a · bᵀ
        let c = matmul(&a, &b, false, true).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[4., 2., 10., 5.]);
        // aᵀ · b
        let d = matmul(&a, &b, true, false).unwrap();
        assert_eq!(d.shape(), &[3, 3]);
        assert_eq!(d.data(), &[1., 4., 1., 2., 5., 2., 3., 6., 3.]);
        assert!(matmul(&a, &b, false, false).is_err());
    }

    #[test]
    fn sum_to_and_broadcast_to_are_adjoint_shapes() {
        let t = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(sum_to(&t, &[1, 3]).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(sum_to(&t, &[2, 1]).unwrap().data(), &[6., 15.]);
        assert_eq!(sum_to(&t, &[1]).unwrap().data(), &[21.]);
        let b = broadcast_to(&Tensor::vector(vec![1., 2., 3.]).unwrap(), &[2, 3]).unwrap();
        assert_eq!(b.data(), &[1., 2., 3., 1., 2., 3.]);
    }
}
