//! Reverse-mode lane: an arena tape of primitive operations.
//!
//! Forward calls append nodes holding the computed value and the op that
//! produced it. [`Graph::backward`] walks the tape once in reverse,
//! accumulating adjoints into every node that can reach a gradient-enabled
//! leaf. Subtrees built only from constants (detached targets, inputs) are
//! skipped entirely.

use super::{gelu_prime, silu_prime, Lane};
use crate::error::{MfError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Silu(Var),
    Gelu(Var),
    Sin(Var),
    Cos(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Row { table: Var, index: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any gradient-enabled leaf is reachable from this node.
    needs_grad: bool,
}

/// Adjoints produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    /// Removes and returns the gradient for `v`, if the backward pass
    /// reached it.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.slots[v.0 as usize].take()
    }
}

/// Reverse-mode tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0 as usize].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0 as usize].value
    }

    /// Gradient-enabled leaf (a parameter).
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant_leaf(&mut self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, false)
    }

    /// Re-enters a value as a constant leaf: identical numbers, zero
    /// gradient contribution. This is the stop-gradient primitive.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.val(v).clone();
        self.push(value, Op::Leaf, false)
    }

    /// Current value of a node.
    pub fn value(&self, v: &Var) -> Tensor {
        self.val(*v).clone()
    }

    /// Back-propagates from scalar node `out`, seeding its adjoint with
    /// `seed`. Returns adjoints for every reached node; detached and
    /// constant subtrees are skipped.
    pub fn backward(&self, out: Var, seed: f64) -> Result<Grads> {
        let out_node = &self.nodes[out.0 as usize];
        if out_node.value.rank() != 0 {
            return Err(MfError::InvalidSpec(format!(
                "backward requires a scalar output, got shape {:?}",
                out_node.value.shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        slots[out.0 as usize] = Some(Tensor::scalar(seed));

        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[id].take() else { continue };
            self.propagate(node, &g, &mut slots)?;
            // Leaves keep their adjoint; interior nodes release theirs.
            if matches!(node.op, Op::Leaf) {
                slots[id] = Some(g);
            }
        }
        Ok(Grads { slots })
    }

    fn propagate(&self, node: &Node, g: &Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_reduced(*a, g.clone(), slots)?;
                self.acc_reduced(*b, g.clone(), slots)?;
            }
            Op::Sub(a, b) => {
                self.acc_reduced(*a, g.clone(), slots)?;
                self.acc_reduced(*b, g.scale(-1.0), slots)?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc_reduced(*a, g.mul(self.val(*b))?, slots)?;
                }
                if self.needs(*b) {
                    self.acc_reduced(*b, g.mul(self.val(*a))?, slots)?;
                }
            }
            Op::Scale(a, c) => self.acc(*a, g.scale(*c), slots)?,
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    self.acc(*a, g.matmul_nt(self.val(*b))?, slots)?;
                }
                if self.needs(*b) {
                    self.acc(*b, self.weight_grad(*a, g)?, slots)?;
                }
            }
            Op::Affine { x, w, b } => {
                if self.needs(*x) {
                    self.acc(*x, g.matmul_nt(self.val(*w))?, slots)?;
                }
                if self.needs(*w) {
                    self.acc(*w, self.weight_grad(*x, g)?, slots)?;
                }
                if self.needs(*b) {
                    self.acc(*b, column_sum(g), slots)?;
                }
            }
            Op::Silu(a) => self.acc(*a, self.val(*a).map(silu_prime).mul(g)?, slots)?,
            Op::Gelu(a) => self.acc(*a, self.val(*a).map(gelu_prime).mul(g)?, slots)?,
            Op::Sin(a) => self.acc(*a, self.val(*a).map(f64::cos).mul(g)?, slots)?,
            Op::Cos(a) => self.acc(*a, self.val(*a).map(|x| -x.sin()).mul(g)?, slots)?,
            Op::Sum(a) => {
                let shape = self.val(*a).shape().to_vec();
                let fill = g.scalar_value();
                self.acc(*a, Tensor::zeros(&shape).map(|_| fill), slots)?;
            }
            Op::Mean(a) => {
                let input = self.val(*a);
                let fill = g.scalar_value() / input.len() as f64;
                let shape = input.shape().to_vec();
                self.acc(*a, Tensor::zeros(&shape).map(|_| fill), slots)?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for part in parts {
                    let n = self.val(*part).len();
                    let piece = Tensor::vector(g.data()[offset..offset + n].to_vec());
                    offset += n;
                    self.acc_reduced(*part, piece, slots)?;
                }
            }
            Op::Row { table, index } => {
                let shape = self.val(*table).shape().to_vec();
                let mut scatter = Tensor::zeros(&shape);
                let cols = shape[1];
                scatter.data_mut()[index * cols..(index + 1) * cols].copy_from_slice(g.data());
                self.acc(*table, scatter, slots)?;
            }
        }
        Ok(())
    }

    /// Adjoint of the right operand of `x·w`: outer product for vector `x`,
    /// `xᵀ·g` for matrix `x`.
    fn weight_grad(&self, x: Var, g: &Tensor) -> Result<Tensor> {
        let xv = self.val(x);
        if xv.rank() == 1 {
            xv.outer(g)
        } else {
            xv.matmul_tn(g)
        }
    }

    fn acc(&self, v: Var, delta: Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        match &mut slots[v.0 as usize] {
            Some(existing) => existing.add_scaled(&delta, 1.0)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    /// Accumulates, collapsing the adjoint to a scalar when the operand was
    /// a rank-0 broadcast.
    fn acc_reduced(&self, v: Var, delta: Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        let delta = if self.val(v).shape() == delta.shape() {
            delta
        } else {
            Tensor::scalar(delta.sum())
        };
        self.acc(v, delta, slots)
    }
}

/// Sums a rank-2 tensor over rows (the bias adjoint); identity on vectors.
fn column_sum(g: &Tensor) -> Tensor {
    if g.rank() != 2 {
        return g.clone();
    }
    let (rows, cols) = (g.shape()[0], g.shape()[1]);
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for (o, &v) in out.iter_mut().zip(&g.data()[i * cols..(i + 1) * cols]) {
            *o += v;
        }
    }
    Tensor::vector(out)
}

impl Lane for Graph {
    type V = Var;

    fn constant(&mut self, value: &Tensor) -> Var {
        self.constant_leaf(value)
    }

    fn value(&self, v: &Var) -> Tensor {
        self.val(*v).clone()
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(*a).add(self.val(*b))?;
        Ok(self.push(value, Op::Add(*a, *b), self.needs(*a) || self.needs(*b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(*a).sub(self.val(*b))?;
        Ok(self.push(value, Op::Sub(*a, *b), self.needs(*a) || self.needs(*b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(*a).mul(self.val(*b))?;
        Ok(self.push(value, Op::Mul(*a, *b), self.needs(*a) || self.needs(*b)))
    }

    fn scale(&mut self, a: &Var, c: f64) -> Result<Var> {
        let value = self.val(*a).scale(c);
        Ok(self.push(value, Op::Scale(*a, c), self.needs(*a)))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(*a).matmul(self.val(*b))?;
        Ok(self.push(value, Op::Matmul(*a, *b), self.needs(*a) || self.needs(*b)))
    }

    fn affine(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let value = self.val(*x).matmul(self.val(*w))?.add_bias(self.val(*b))?;
        let needs = self.needs(*x) || self.needs(*w) || self.needs(*b);
        Ok(self.push(value, Op::Affine { x: *x, w: *w, b: *b }, needs))
    }

    fn silu(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(*a).map(super::silu);
        Ok(self.push(value, Op::Silu(*a), self.needs(*a)))
    }

    fn gelu(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(*a).map(super::gelu);
        Ok(self.push(value, Op::Gelu(*a), self.needs(*a)))
    }

    fn sin(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(*a).map(f64::sin);
        Ok(self.push(value, Op::Sin(*a), self.needs(*a)))
    }

    fn cos(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(*a).map(f64::cos);
        Ok(self.push(value, Op::Cos(*a), self.needs(*a)))
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let value = Tensor::scalar(self.val(*a).sum());
        Ok(self.push(value, Op::Sum(*a), self.needs(*a)))
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let value = Tensor::scalar(self.val(*a).mean());
        Ok(self.push(value, Op::Mean(*a), self.needs(*a)))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let value = Tensor::concat(&tensors)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    fn row(&mut self, table: &Var, index: usize) -> Result<Var> {
        let value = self.val(*table).row(index)?;
        Ok(self.push(
            value,
            Op::Row {
                table: *table,
                index,
            },
            self.needs(*table),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Reverse-mode gradient of a scalar-valued builder vs central finite
    /// differences, coordinate by coordinate.
    fn gradcheck(
        build: impl Fn(&mut Graph, &[Var]) -> Var,
        inputs: &[Tensor],
        tol: f64,
    ) {
        let mut graph = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| graph.leaf(t)).collect();
        let out = build(&mut graph, &leaves);
        let mut grads = graph.backward(out, 1.0).unwrap();

        let eval = |points: &[Tensor]| {
            let mut g = Graph::new();
            let leaves: Vec<Var> = points.iter().map(|t| g.leaf(t)).collect();
            let out = build(&mut g, &leaves);
            g.value(&out).scalar_value()
        };

        let h = 1e-6;
        for (pi, input) in inputs.iter().enumerate() {
            let grad = grads
                .take(leaves[pi])
                .unwrap_or_else(|| Tensor::zeros(input.shape()));
            for ci in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[pi].data_mut()[ci] += h;
                let mut minus = inputs.to_vec();
                minus[pi].data_mut()[ci] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let got = grad.data()[ci];
                let scale = 1.0_f64.max(fd.abs());
                assert!(
                    (got - fd).abs() <= tol * scale,
                    "input {pi} coord {ci}: reverse {got} vs fd {fd}"
                );
            }
        }
    }

    fn rand_vec(rng: &mut Rng, n: usize) -> Tensor {
        Tensor::vector(rng.normal_vec(n))
    }

    #[test]
    fn gradcheck_every_primitive() {
        let mut rng = Rng::seed_from_u64(31);
        let x = rand_vec(&mut rng, 4);
        let y = rand_vec(&mut rng, 4);
        let w = Tensor::matrix(4, 3, rng.normal_vec(12)).unwrap();
        let b = rand_vec(&mut rng, 3);
        let s = Tensor::scalar(rng.normal());

        gradcheck(|g, l| {
            let a = g.add(&l[0], &l[1]).unwrap();
            g.sum(&a).unwrap()
        }, &[x.clone(), y.clone()], 1e-6);

        gradcheck(|g, l| {
            let a = g.sub(&l[0], &l[1]).unwrap();
            let m = g.mul(&a, &a).unwrap();
            g.sum(&m).unwrap()
        }, &[x.clone(), y.clone()], 1e-6);

        gradcheck(|g, l| {
            let m = g.matmul(&l[0], &l[1]).unwrap();
            let sq = g.mul(&m, &m).unwrap();
            g.sum(&sq).unwrap()
        }, &[x.clone(), w.clone()], 1e-5);

        gradcheck(|g, l| {
            let a = g.affine(&l[0], &l[1], &l[2]).unwrap();
            let act = g.silu(&a).unwrap();
            g.sum(&act).unwrap()
        }, &[x.clone(), w.clone(), b.clone()], 1e-5);

        gradcheck(|g, l| {
            let a = g.gelu(&l[0]).unwrap();
            g.mean(&a).unwrap()
        }, &[x.clone()], 1e-6);

        gradcheck(|g, l| {
            let a = g.sin(&l[0]).unwrap();
            let b = g.cos(&l[1]).unwrap();
            let m = g.mul(&a, &b).unwrap();
            g.sum(&m).unwrap()
        }, &[x.clone(), y.clone()], 1e-6);

        gradcheck(|g, l| {
            let sc = g.scale(&l[0], -2.5).unwrap();
            g.sum(&sc).unwrap()
        }, &[x.clone()], 1e-6);

        // Rank-0 broadcast: scalar times vector.
        gradcheck(|g, l| {
            let m = g.mul(&l[0], &l[1]).unwrap();
            let sq = g.mul(&m, &m).unwrap();
            g.sum(&sq).unwrap()
        }, &[s.clone(), x.clone()], 1e-6);

        gradcheck(|g, l| {
            let c = g.concat(&[l[0], l[1]]).unwrap();
            let sq = g.mul(&c, &c).unwrap();
            g.sum(&sq).unwrap()
        }, &[x.clone(), y.clone()], 1e-6);
    }

    #[test]
    fn gradcheck_row_lookup_scatters() {
        let mut rng = Rng::seed_from_u64(77);
        let table = Tensor::matrix(3, 2, rng.normal_vec(6)).unwrap();
        gradcheck(|g, l| {
            let r0 = g.row(&l[0], 0).unwrap();
            let r2 = g.row(&l[0], 2).unwrap();
            let a = g.add(&r0, &r2).unwrap();
            let sq = g.mul(&a, &a).unwrap();
            g.sum(&sq).unwrap()
        }, &[table], 1e-6);
    }

    #[test]
    fn gradcheck_rank2_affine() {
        let mut rng = Rng::seed_from_u64(13);
        let x = Tensor::matrix(3, 4, rng.normal_vec(12)).unwrap();
        let w = Tensor::matrix(4, 2, rng.normal_vec(8)).unwrap();
        let b = Tensor::vector(rng.normal_vec(2));
        gradcheck(|g, l| {
            let a = g.affine(&l[0], &l[1], &l[2]).unwrap();
            let s = g.silu(&a).unwrap();
            g.sum(&s).unwrap()
        }, &[x, w, b], 1e-5);
    }

    #[test]
    fn detach_freezes_the_target_branch() {
        // grad of ‖f(θ) − detach(g(θ))‖² must equal the gradient with
        // c := g(θ) entered as a plain constant.
        let theta = Tensor::vector(vec![0.3, -0.8, 1.1]);

        let run = |use_detach: bool| {
            let mut g = Graph::new();
            let leaf = g.leaf(&theta);
            let f = g.silu(&leaf).unwrap();
            let target = if use_detach {
                let gt = g.sin(&leaf).unwrap();
                g.detach(gt)
            } else {
                let frozen = g.value(&leaf).map(f64::sin);
                g.constant_leaf(&frozen)
            };
            let d = g.sub(&f, &target).unwrap();
            let sq = g.mul(&d, &d).unwrap();
            let loss = g.sum(&sq).unwrap();
            let mut grads = g.backward(loss, 1.0).unwrap();
            grads.take(leaf).unwrap()
        };

        let with_detach = run(true);
        let two_pass = run(false);
        assert!(with_detach.bitwise_eq(&two_pass));
    }

    #[test]
    fn detach_is_value_preserving() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![1.5, -0.0, 2.0_f64.powi(-40)]));
        let d = g.detach(x);
        assert!(g.value(&d).bitwise_eq(&g.value(&x)));
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x, 1.0).is_err());
    }

    #[test]
    fn backward_seed_scales_gradients() {
        let theta = Tensor::vector(vec![0.2, 0.4]);
        let grad_with_seed = |seed: f64| {
            let mut g = Graph::new();
            let leaf = g.leaf(&theta);
            let sq = g.mul(&leaf, &leaf).unwrap();
            let loss = g.sum(&sq).unwrap();
            let mut grads = g.backward(loss, seed).unwrap();
            grads.take(leaf).unwrap()
        };
        let g1 = grad_with_seed(1.0);
        let g3 = grad_with_seed(3.0);
        for i in 0..2 {
            assert_eq!(g3.data()[i], 3.0 * g1.data()[i]);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x·x) + sum(x) → grad = 2x + 1.
        let x = Tensor::vector(vec![1.0, -2.0]);
        let mut g = Graph::new();
        let leaf = g.leaf(&x);
        let sq = g.mul(&leaf, &leaf).unwrap();
        let s1 = g.sum(&sq).unwrap();
        let s2 = g.sum(&leaf).unwrap();
        let loss = g.add(&s1, &s2).unwrap();
        let mut grads = g.backward(loss, 1.0).unwrap();
        let grad = grads.take(leaf).unwrap();
        assert_eq!(grad.data(), &[3.0, -3.0]);
    }
}
