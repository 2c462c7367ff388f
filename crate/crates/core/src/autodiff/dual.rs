//! Forward-mode lane: dual numbers over tensors.
//!
//! Every value carries `(primal, tangent)` of identical shape. Each
//! primitive propagates the tangent by its local derivative rule, so one
//! forward pass yields the Jacobian-vector product along the seeded tangent.

use super::{gelu, gelu_prime, silu, silu_prime, Lane};
use crate::error::{MfError, Result};
use crate::tensor::Tensor;

/// A tensor paired with its directional derivative.
#[derive(Debug, Clone)]
pub struct Dual {
    pub primal: Tensor,
    pub tangent: Tensor,
}

impl Dual {
    /// Pairs a primal with a tangent of the same shape.
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(MfError::ShapeMismatch {
                op: "dual pairing",
                lhs: primal.shape().to_vec(),
                rhs: tangent.shape().to_vec(),
            });
        }
        Ok(Self { primal, tangent })
    }

    /// Lifts a tensor with zero tangent.
    pub fn constant(value: &Tensor) -> Self {
        Self {
            tangent: Tensor::zeros(value.shape()),
            primal: value.clone(),
        }
    }
}

/// The forward-mode lane. Stateless; exists to select dual-number rules
/// through the [`Lane`] trait.
#[derive(Debug, Default, Clone, Copy)]
pub struct DualLane;

impl Lane for DualLane {
    type V = Dual;

    fn constant(&mut self, value: &Tensor) -> Dual {
        Dual::constant(value)
    }

    fn value(&self, v: &Dual) -> Tensor {
        v.primal.clone()
    }

    fn add(&mut self, a: &Dual, b: &Dual) -> Result<Dual> {
        Dual::new(a.primal.add(&b.primal)?, a.tangent.add(&b.tangent)?)
    }

    fn sub(&mut self, a: &Dual, b: &Dual) -> Result<Dual> {
        Dual::new(a.primal.sub(&b.primal)?, a.tangent.sub(&b.tangent)?)
    }

    fn mul(&mut self, a: &Dual, b: &Dual) -> Result<Dual> {
        let primal = a.primal.mul(&b.primal)?;
        let tangent = a
            .tangent
            .mul(&b.primal)?
            .add(&a.primal.mul(&b.tangent)?)?;
        Dual::new(primal, tangent)
    }

    fn scale(&mut self, a: &Dual, c: f64) -> Result<Dual> {
        Dual::new(a.primal.scale(c), a.tangent.scale(c))
    }

    fn matmul(&mut self, a: &Dual, b: &Dual) -> Result<Dual> {
        let primal = a.primal.matmul(&b.primal)?;
        let tangent = a
            .tangent
            .matmul(&b.primal)?
            .add(&a.primal.matmul(&b.tangent)?)?;
        Dual::new(primal, tangent)
    }

    fn affine(&mut self, x: &Dual, w: &Dual, b: &Dual) -> Result<Dual> {
        let primal = x.primal.matmul(&w.primal)?.add_bias(&b.primal)?;
        let tangent = x
            .tangent
            .matmul(&w.primal)?
            .add(&x.primal.matmul(&w.tangent)?)?
            .add_bias(&b.tangent)?;
        Dual::new(primal, tangent)
    }

    fn silu(&mut self, a: &Dual) -> Result<Dual> {
        let primal = a.primal.map(silu);
        let tangent = a.primal.map(silu_prime).mul(&a.tangent)?;
        Dual::new(primal, tangent)
    }

    fn gelu(&mut self, a: &Dual) -> Result<Dual> {
        let primal = a.primal.map(gelu);
        let tangent = a.primal.map(gelu_prime).mul(&a.tangent)?;
        Dual::new(primal, tangent)
    }

    fn sin(&mut self, a: &Dual) -> Result<Dual> {
        Dual::new(a.primal.map(f64::sin), a.primal.map(f64::cos).mul(&a.tangent)?)
    }

    fn cos(&mut self, a: &Dual) -> Result<Dual> {
        let tangent = a.primal.map(|x| -x.sin()).mul(&a.tangent)?;
        Dual::new(a.primal.map(f64::cos), tangent)
    }

    fn sum(&mut self, a: &Dual) -> Result<Dual> {
        Dual::new(
            Tensor::scalar(a.primal.sum()),
            Tensor::scalar(a.tangent.sum()),
        )
    }

    fn mean(&mut self, a: &Dual) -> Result<Dual> {
        Dual::new(
            Tensor::scalar(a.primal.mean()),
            Tensor::scalar(a.tangent.mean()),
        )
    }

    fn concat(&mut self, parts: &[Dual]) -> Result<Dual> {
        let primals: Vec<&Tensor> = parts.iter().map(|p| &p.primal).collect();
        let tangents: Vec<&Tensor> = parts.iter().map(|p| &p.tangent).collect();
        Dual::new(Tensor::concat(&primals)?, Tensor::concat(&tangents)?)
    }

    fn row(&mut self, table: &Dual, index: usize) -> Result<Dual> {
        Dual::new(table.primal.row(index)?, table.tangent.row(index)?)
    }
}
