//! Dense row-major tensors of 64-bit reals, ranks 0 through 2.
//!
//! Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix. Binary elementwise
//! ops accept equal shapes or a rank-0 operand on either side (scalar
//! broadcast); no other broadcasting exists. Shape errors are reported
//! through [`MfError::ShapeMismatch`] rather than panics so that callers can
//! surface them as diagnostics.

use crate::error::{MfError, Result};

/// Dense tensor with row-major `data` and explicit `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> MfError {
    MfError::ShapeMismatch {
        op,
        lhs: lhs.shape.clone(),
        rhs: rhs.shape.clone(),
    }
}

impl Tensor {
    /// Builds a tensor, validating that `shape` accounts for every element
    /// and that external data is finite (debug builds only).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MfError::InvalidSpec(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        debug_assert!(
            data.iter().all(|x| x.is_finite()),
            "non-finite entries in Tensor::new"
        );
        Ok(Self { shape, data })
    }

    /// Internal constructor for operation results; skips validation so that
    /// overflow during a diverging training run surfaces as a divergence
    /// error instead of a debug panic.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Rank-0 tensor holding `v`.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Rank-1 tensor owning `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from row-major `data`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a rank-0 tensor. Panics on higher ranks (programmer error).
    pub fn scalar_value(&self) -> f64 {
        assert!(
            self.rank() == 0,
            "scalar_value on rank-{} tensor",
            self.rank()
        );
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.rank() == 0
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Exact bit-level equality, distinguishing -0.0 from 0.0 and comparing
    /// NaN payloads; used by determinism tests.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            Ok(Tensor::from_op(self.shape.clone(), data))
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(Tensor::from_op(
                self.shape.clone(),
                self.data.iter().map(|&a| f(a, b)).collect(),
            ))
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(Tensor::from_op(
                other.shape.clone(),
                other.data.iter().map(|&b| f(a, b)).collect(),
            ))
        } else {
            Err(shape_err(op, self, other))
        }
    }

    /// Elementwise sum; either side may be rank 0.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    /// Adds a rank-1 bias to a same-length vector or to every row of a
    /// rank-2 value.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if self.rank() == 2 && bias.rank() == 1 && self.shape[1] == bias.len() {
            let n = bias.len();
            let data = self
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| v + bias.data[i % n])
                .collect();
            return Ok(Tensor::from_op(self.shape.clone(), data));
        }
        self.add(bias)
    }

    /// Elementwise difference; either side may be rank 0.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "sub", |a, b| a - b)
    }

    /// Elementwise product; either side may be rank 0.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    /// Multiplies every entry by `c`.
    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_op(self.shape.clone(), self.data.iter().map(|&a| a * c).collect())
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_op(self.shape.clone(), self.data.iter().map(|&a| f(a)).collect())
    }

    /// `self += c * other`, in place. Shapes must match exactly.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("add_scaled", self, other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// `self *= c`, in place.
    pub fn scale_in_place(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    /// Matrix product. Supported shapes: `[k]·[k,n] -> [n]` and
    /// `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        match (self.rank(), other.rank()) {
            (1, 2) => {
                let k = self.shape[0];
                if other.shape[0] != k {
                    return Err(shape_err("matmul", self, other));
                }
                let n = other.shape[1];
                let mut out = vec![0.0; n];
                for (i, &a) in self.data.iter().enumerate() {
                    let row = &other.data[i * n..(i + 1) * n];
                    for (o, &b) in out.iter_mut().zip(row) {
                        *o += a * b;
                    }
                }
                Ok(Tensor::from_op(vec![n], out))
            }
            (2, 2) => {
                let (m, k) = (self.shape[0], self.shape[1]);
                if other.shape[0] != k {
                    return Err(shape_err("matmul", self, other));
                }
                let n = other.shape[1];
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                        let row = &other.data[p * n..(p + 1) * n];
                        for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                            *o += a * b;
                        }
                    }
                }
                Ok(Tensor::from_op(vec![m, n], out))
            }
            _ => Err(shape_err("matmul", self, other)),
        }
    }

    /// `self · otherᵀ`. Supported: `[n]·[k,n]ᵀ -> [k]` and
    /// `[m,n]·[k,n]ᵀ -> [m,k]`. Used by backward passes to avoid
    /// materializing transposes.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if other.rank() != 2 {
            return Err(shape_err("matmul_nt", self, other));
        }
        let (k, n) = (other.shape[0], other.shape[1]);
        match self.rank() {
            1 => {
                if self.shape[0] != n {
                    return Err(shape_err("matmul_nt", self, other));
                }
                let mut out = vec![0.0; k];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &other.data[i * n..(i + 1) * n];
                    *o = self.data.iter().zip(row).map(|(&a, &b)| a * b).sum();
                }
                Ok(Tensor::from_op(vec![k], out))
            }
            2 => {
                let (m, nn) = (self.shape[0], self.shape[1]);
                if nn != n {
                    return Err(shape_err("matmul_nt", self, other));
                }
                let mut out = vec![0.0; m * k];
                for i in 0..m {
                    let lhs = &self.data[i * n..(i + 1) * n];
                    for j in 0..k {
                        let row = &other.data[j * n..(j + 1) * n];
                        out[i * k + j] = lhs.iter().zip(row).map(|(&a, &b)| a * b).sum();
                    }
                }
                Ok(Tensor::from_op(vec![m, k], out))
            }
            _ => Err(shape_err("matmul_nt", self, other)),
        }
    }

    /// `selfᵀ · other` for rank-2 operands: `[m,k]ᵀ·[m,n] -> [k,n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[0] != other.shape[0] {
            return Err(shape_err("matmul_tn", self, other));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                let row = &other.data[i * n..(i + 1) * n];
                for (o, &b) in out[p * n..(p + 1) * n].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_op(vec![k, n], out))
    }

    /// Outer product of two vectors: `[k] ⊗ [n] -> [k,n]`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 1 || other.rank() != 1 {
            return Err(shape_err("outer", self, other));
        }
        let (k, n) = (self.shape[0], other.shape[0]);
        let mut out = Vec::with_capacity(k * n);
        for &a in &self.data {
            out.extend(other.data.iter().map(|&b| a * b));
        }
        Ok(Tensor::from_op(vec![k, n], out))
    }

    /// Inner product of equal-shape tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err("dot", self, other));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Arithmetic mean of all entries. Panics on empty tensors.
    pub fn mean(&self) -> f64 {
        assert!(!self.is_empty(), "mean of empty tensor");
        self.sum() / self.len() as f64
    }

    /// Squared Euclidean norm over all entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&a| a * a).sum()
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    /// Concatenates rank-1 tensors into one vector.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 1 {
                return Err(MfError::InvalidSpec(format!(
                    "concat expects rank-1 parts, got rank {}",
                    p.rank()
                )));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::vector(data))
    }

    /// Copies row `i` of a rank-2 tensor as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(MfError::InvalidSpec(format!(
                "row lookup on rank-{} tensor",
                self.rank()
            )));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        if i >= rows {
            return Err(MfError::InvalidSpec(format!(
                "row {i} out of bounds for {rows} rows"
            )));
        }
        Ok(Tensor::vector(self.data[i * cols..(i + 1) * cols].to_vec()))
    }
}
