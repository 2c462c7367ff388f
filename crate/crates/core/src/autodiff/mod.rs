//! Dense-tensor automatic differentiation in two modes.
//!
//! Forward mode ([`DualLane`]) carries a tangent tensor next to every primal
//! value and yields Jacobian-vector products in a single pass. Reverse mode
//! ([`Graph`]) records a tape of primitive ops and back-propagates to
//! gradient-enabled leaves. Both modes, plus plain evaluation
//! ([`EvalLane`]), implement the [`Lane`] trait, so a model's forward pass
//! is written once and reused unchanged for evaluation, JVPs, and parameter
//! gradients.
//!
//! The primitive set is deliberately small: matmul, add, sub, elementwise
//! mul (with rank-0 broadcast), scalar scale, fused affine, SiLU, GELU,
//! sin, cos, sum, mean, concatenation, and row lookup.

mod dual;
mod graph;

pub use dual::{Dual, DualLane};
pub use graph::{Graph, Var};

use crate::error::{MfError, Result};
use crate::tensor::Tensor;

/// A differentiation mode. `V` is the mode's value representation.
///
/// Methods take `&mut self` because the reverse-mode lane appends to a tape;
/// the other lanes are stateless.
pub trait Lane {
    type V: Clone;

    /// Lifts a tensor into the lane with no derivative tracking.
    fn constant(&mut self, value: &Tensor) -> Self::V;
    /// Reads the primal value.
    fn value(&self, v: &Self::V) -> Tensor;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, c: f64) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Fused `x·w + b`.
    fn affine(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn silu(&mut self, a: &Self::V) -> Result<Self::V>;
    fn gelu(&mut self, a: &Self::V) -> Result<Self::V>;
    fn sin(&mut self, a: &Self::V) -> Result<Self::V>;
    fn cos(&mut self, a: &Self::V) -> Result<Self::V>;
    /// Sum of all entries, as a rank-0 value.
    fn sum(&mut self, a: &Self::V) -> Result<Self::V>;
    /// Mean of all entries, as a rank-0 value.
    fn mean(&mut self, a: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    /// Row `index` of a rank-2 value.
    fn row(&mut self, table: &Self::V, index: usize) -> Result<Self::V>;
}

/// Plain evaluation: values are tensors, derivatives are not tracked.
#[derive(Debug, Default, Clone, Copy)]
pub struct EvalLane;

impl Lane for EvalLane {
    type V = Tensor;

    fn constant(&mut self, value: &Tensor) -> Tensor {
        value.clone()
    }
    fn value(&self, v: &Tensor) -> Tensor {
        v.clone()
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.scale(c))
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }
    fn affine(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        x.matmul(w)?.add_bias(b)
    }
    fn silu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.map(silu))
    }
    fn gelu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.map(gelu))
    }
    fn sin(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.map(f64::sin))
    }
    fn cos(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.map(f64::cos))
    }
    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(a.sum()))
    }
    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(a.mean()))
    }
    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs)
    }
    fn row(&mut self, table: &Tensor, index: usize) -> Result<Tensor> {
        table.row(index)
    }
}

/// Result of a Jacobian-vector product: the function value and the
/// directional derivative along the supplied tangent.
#[derive(Debug, Clone)]
pub struct JvpOutput {
    pub primal: Tensor,
    pub tangent: Tensor,
}

/// Per-parameter gradient tensors, ordered like the parameter list they
/// were taken against.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub tensors: Vec<Tensor>,
}

impl ParamGrads {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &[Tensor]) -> Self {
        Self {
            tensors: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// `self += c * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParamGrads, c: f64) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(MfError::InvalidSpec(format!(
                "gradient accumulation over {} vs {} tensors",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, c)?;
        }
        Ok(())
    }

    /// True when every gradient entry is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Largest absolute gradient entry.
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, &g| m.max(g.abs()))
    }
}

/// Computes `f`'s value and Jacobian-vector product at `point` along
/// `tangent` in one forward pass with dual numbers.
///
/// `f` receives dual-number views of the three inputs `(z, r, t)` and must
/// evaluate through the supplied lane. Parameters captured by `f` are lane
/// constants and contribute no tangent.
pub fn jvp<F>(f: F, point: (&Tensor, f64, f64), tangent: (&Tensor, f64, f64)) -> Result<JvpOutput>
where
    F: FnOnce(&mut DualLane, &Dual, &Dual, &Dual) -> Result<Dual>,
{
    let (z, r, t) = point;
    let (vz, vr, vt) = tangent;
    if z.shape() != vz.shape() {
        return Err(MfError::ShapeMismatch {
            op: "jvp z tangent",
            lhs: z.shape().to_vec(),
            rhs: vz.shape().to_vec(),
        });
    }
    let mut lane = DualLane;
    let zd = Dual::new(z.clone(), vz.clone())?;
    let rd = Dual::new(Tensor::scalar(r), Tensor::scalar(vr))?;
    let td = Dual::new(Tensor::scalar(t), Tensor::scalar(vt))?;
    let out = f(&mut lane, &zd, &rd, &td)?;
    Ok(JvpOutput {
        primal: out.primal,
        tangent: out.tangent,
    })
}

/// Reverse-mode gradients of a scalar loss with respect to `params`.
///
/// `loss_fn` rebuilds the loss on a fresh tape whose leaves are the
/// parameter tensors in order. Returns the loss value and one gradient
/// tensor per parameter; parameters the loss never touches get zeros.
pub fn grad_params<F>(params: &[Tensor], loss_fn: F) -> Result<(f64, ParamGrads)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| graph.leaf(p)).collect();
    let out = loss_fn(&mut graph, &leaves)?;
    let out_value = graph.value(&out);
    if out_value.rank() != 0 {
        return Err(MfError::InvalidSpec(format!(
            "loss must be scalar, got shape {:?}",
            out_value.shape()
        )));
    }
    let mut grads = graph.backward(out, 1.0)?;
    let tensors = leaves
        .iter()
        .zip(params)
        .map(|(&leaf, p)| {
            grads
                .take(leaf)
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok((out_value.scalar_value(), ParamGrads { tensors }))
}

/// Value-identical copy that contributes nothing to gradients.
///
/// On plain tensors this is the identity; the gradient-stopping behavior
/// lives in [`Graph::detach`], which inserts the value as a constant leaf.
pub fn detach(x: &Tensor) -> Tensor {
    x.clone()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
