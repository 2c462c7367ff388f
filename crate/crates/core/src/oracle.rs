//! Ground-truth fields for Gaussian-mixture data.
//!
//! For a mixture of isotropic Gaussians the marginal velocity has a closed
//! form via Gaussian conditioning. With z_t = (1−t)x + tε, component k's
//! posterior responsibility is γ_k ∝ π_k·N(z; (1−t)μ_k, s_k²I) with
//! s_k² = (1−t)²σ_k² + t², and
//!
//! v(z, t) = Σ_k γ_k · [(t − (1−t)σ_k²)·z − t·μ_k] / s_k².
//!
//! This arrangement keeps the t→0 limit finite for σ_k > 0 (it tends to
//! −z); the equivalent textbook form (z − Σγ_k m_k)/t cancels
//! catastrophically there. The closed form is validated in-tree against an
//! importance-sampling Monte-Carlo estimate before anything else relies on
//! it.
//!
//! The average velocity has no closed form for mixtures; it is produced by
//! integrating the velocity ODE with a fixed-step fourth-order scheme and
//! dividing the displacement by (t−r). An identity-residual checker probes
//! any candidate field u(z, r, t) against v − (t−r)·du/dt, with du/dt taken
//! by central finite differences along the flow.

use crate::error::{MfError, Result};
use crate::parallel::map_ordered;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Overshoot slack beyond the nominal time domain `[0, 1]`, admitted so
/// finite-difference probes at t ± h and r ± h stay evaluable at the
/// boundary.
pub const TIME_SLACK: f64 = 0.01;

/// One isotropic Gaussian component: `weight·N(mean, var·I)`.
/// Zero variance denotes a point mass at `mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Tensor,
    pub var: f64,
}

/// A Gaussian mixture standing in for the data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    components: Vec<GmmComponent>,
}

impl GmmSpec {
    /// Validates weights (positive, summing to 1 within 1e-12), variances
    /// (finite, ≥ 0), and consistent dimensions.
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(MfError::InvalidSpec("mixture needs a component".into()));
        }
        let d = components[0].mean.len();
        if d == 0 {
            return Err(MfError::InvalidSpec("component means must be non-empty".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(MfError::InvalidSpec(format!(
                    "component {i} weight {} must be positive",
                    c.weight
                )));
            }
            if !(c.var >= 0.0 && c.var.is_finite()) {
                return Err(MfError::InvalidSpec(format!(
                    "component {i} variance {} must be finite and non-negative",
                    c.var
                )));
            }
            if c.mean.rank() != 1 || c.mean.len() != d {
                return Err(MfError::InvalidSpec(format!(
                    "component {i} mean has shape {:?}, expected [{d}]",
                    c.mean.shape()
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(MfError::InvalidSpec(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    /// Equal-weight mixture over the given (mean, var) pairs.
    pub fn equal_weights(pairs: Vec<(Tensor, f64)>) -> Result<Self> {
        let w = 1.0 / pairs.len() as f64;
        Self::new(
            pairs
                .into_iter()
                .map(|(mean, var)| GmmComponent {
                    weight: w,
                    mean,
                    var,
                })
                .collect(),
        )
    }

    /// Single Gaussian `N(mean, var·I)`.
    pub fn single(mean: Tensor, var: f64) -> Result<Self> {
        Self::new(vec![GmmComponent {
            weight: 1.0,
            mean,
            var,
        }])
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn has_zero_variance(&self) -> bool {
        self.components.iter().any(|c| c.var == 0.0)
    }

    /// True for a single zero-variance component, whose flow is a straight
    /// line with an exact formula.
    pub fn is_point_mass(&self) -> bool {
        self.components.len() == 1 && self.components[0].var == 0.0
    }

    /// Mixture mean Σ π_k μ_k.
    pub fn mean(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.dim()]);
        for c in &self.components {
            out.add_scaled(&c.mean, c.weight).expect("dims validated");
        }
        out
    }

    /// Mixture covariance Σ π_k (σ_k²·I + μ_k μ_kᵀ) − m·mᵀ.
    pub fn covariance(&self) -> Tensor {
        let d = self.dim();
        let m = self.mean();
        let mut out = Tensor::zeros(&[d, d]);
        for c in &self.components {
            let outer = c.mean.outer(&c.mean).expect("rank-1 means");
            out.add_scaled(&outer, c.weight).expect("shape fixed");
            for i in 0..d {
                out.data_mut()[i * d + i] += c.weight * c.var;
            }
        }
        let mm = m.outer(&m).expect("rank-1 mean");
        out.add_scaled(&mm, -1.0).expect("shape fixed");
        out
    }

    /// Draws a point and its component index. Consumes one categorical draw
    /// then `dim` normals.
    pub fn sample(&self, rng: &mut Rng) -> (Tensor, usize) {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let k = rng.categorical(&weights);
        let c = &self.components[k];
        let sd = c.var.sqrt();
        let point: Vec<f64> = c
            .mean
            .data()
            .iter()
            .map(|&m| m + sd * rng.normal())
            .collect();
        (Tensor::vector(point), k)
    }

    /// Posterior responsibilities of each component for observing `z` at
    /// time `t`, via log-sum-exp.
    fn responsibilities(&self, z: &[f64], t: f64, gamma: &mut [f64]) {
        if self.components.len() == 1 {
            gamma[0] = 1.0;
            return;
        }
        let d = z.len() as f64;
        let omt = 1.0 - t;
        for (g, c) in gamma.iter_mut().zip(&self.components) {
            let s2 = omt * omt * c.var + t * t;
            let q: f64 = z
                .iter()
                .zip(c.mean.data())
                .map(|(&zi, &mi)| {
                    let diff = zi - omt * mi;
                    diff * diff
                })
                .sum();
            *g = c.weight.ln() - 0.5 * d * s2.ln() - q / (2.0 * s2);
        }
        let m = gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - m).exp();
            sum += *g;
        }
        for g in gamma.iter_mut() {
            *g /= sum;
        }
    }

    /// Allocation-free marginal velocity into `out`; `gamma` is scratch of
    /// length `num_components`.
    fn velocity_into(&self, z: &[f64], t: f64, gamma: &mut [f64], out: &mut [f64]) -> Result<()> {
        if t == 0.0 && self.has_zero_variance() {
            return Err(MfError::SingularTime {
                t,
                reason: "t = 0 is singular off the zero-variance data manifold",
            });
        }
        self.responsibilities(z, t, gamma);
        let omt = 1.0 - t;
        out.fill(0.0);
        for (&g, c) in gamma.iter().zip(&self.components) {
            let s2 = omt * omt * c.var + t * t;
            let coef = t - omt * c.var;
            for ((o, &zi), &mi) in out.iter_mut().zip(z).zip(c.mean.data()) {
                *o += g * (coef * zi - t * mi) / s2;
            }
        }
        Ok(())
    }
}

fn check_time_window(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value < lo || value > hi || !value.is_finite() {
        return Err(MfError::DomainError {
            what,
            value,
            range: "[0, 1] plus finite-difference slack",
        });
    }
    Ok(())
}

/// Marginal velocity v(z, t) = E[ε − x | z_t = z] in closed form.
///
/// The nominal domain is t ∈ [0, 1]; probe overshoot up to [`TIME_SLACK`]
/// beyond either end is admitted. t = 0 errors when the mixture has a
/// zero-variance component (the field is singular off that manifold);
/// otherwise the t→0 limit −z is returned exactly.
pub fn marginal_velocity(gmm: &GmmSpec, z: &Tensor, t: f64) -> Result<Tensor> {
    check_time_window("t", t, -TIME_SLACK, 1.0 + TIME_SLACK)?;
    if z.rank() != 1 || z.len() != gmm.dim() {
        return Err(MfError::ShapeMismatch {
            op: "marginal_velocity",
            lhs: z.shape().to_vec(),
            rhs: vec![gmm.dim()],
        });
    }
    let mut gamma = vec![0.0; gmm.num_components()];
    let mut out = vec![0.0; gmm.dim()];
    gmm.velocity_into(z.data(), t, &mut gamma, &mut out)?;
    Ok(Tensor::vector(out))
}

/// Fixed-step fourth-order integration of dz/dτ = v(z, τ) from `t` to `r`,
/// in either time order. The zero-variance single-component case takes the
/// exact straight line z_r = x₀ + (r/t)(z_t − x₀); other zero-variance
/// mixtures must keep the path ≥ 1e-6 away from the singular endpoint.
pub fn integrate_trajectory(gmm: &GmmSpec, z_t: &Tensor, t: f64, r: f64, h: f64) -> Result<Tensor> {
    check_time_window("t", t, -TIME_SLACK, 1.0 + TIME_SLACK)?;
    check_time_window("r", r, -TIME_SLACK, 1.0 + TIME_SLACK)?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(MfError::DomainError {
            what: "integration step h",
            value: h,
            range: "(0, ∞)",
        });
    }
    if r == t {
        return Ok(z_t.clone());
    }
    if gmm.is_point_mass() {
        let x0 = &gmm.components()[0].mean;
        // z_r = x₀ + (r/t)(z_t − x₀), exact for straight paths.
        let mut out = z_t.sub(x0)?.scale(r / t);
        out.add_scaled(x0, 1.0)?;
        return Ok(out);
    }
    if gmm.has_zero_variance() && r.min(t) < 1e-6 {
        return Err(MfError::SingularTime {
            t: r.min(t),
            reason: "integration into the zero-variance endpoint; keep the path ≥ 1e-6",
        });
    }

    let d = gmm.dim();
    let n_steps = ((t - r).abs() / h).ceil() as usize;
    let mut gamma = vec![0.0; gmm.num_components()];
    let mut z = z_t.data().to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut stage = vec![0.0; d];

    for step in 0..n_steps {
        // Endpoints are interpolated so the final node lands on r exactly.
        let tau = t + (r - t) * step as f64 / n_steps as f64;
        let next = if step + 1 == n_steps {
            r
        } else {
            t + (r - t) * (step + 1) as f64 / n_steps as f64
        };
        let dt = next - tau;

        gmm.velocity_into(&z, tau, &mut gamma, &mut k1)?;
        for i in 0..d {
            stage[i] = z[i] + 0.5 * dt * k1[i];
        }
        gmm.velocity_into(&stage, tau + 0.5 * dt, &mut gamma, &mut k2)?;
        for i in 0..d {
            stage[i] = z[i] + 0.5 * dt * k2[i];
        }
        gmm.velocity_into(&stage, tau + 0.5 * dt, &mut gamma, &mut k3)?;
        for i in 0..d {
            stage[i] = z[i] + dt * k3[i];
        }
        gmm.velocity_into(&stage, next, &mut gamma, &mut k4)?;
        for i in 0..d {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(Tensor::vector(z))
}

/// Brute-force average velocity u(z_t, r, t) = (z_t − z_r)/(t − r), with
/// z_r from [`integrate_trajectory`]. Either time order is accepted;
/// `r == t` is rejected, use [`marginal_velocity`] for the limit.
pub fn average_velocity(gmm: &GmmSpec, z_t: &Tensor, r: f64, t: f64, h: f64) -> Result<Tensor> {
    if r == t {
        return Err(MfError::DomainError {
            what: "t - r",
            value: 0.0,
            range: "nonzero; the r = t limit is the marginal velocity",
        });
    }
    let z_r = integrate_trajectory(gmm, z_t, t, r, h)?;
    Ok(z_t.sub(&z_r)?.scale(1.0 / (t - r)))
}

/// The oracle average-velocity field: a mixture plus an integration step.
#[derive(Debug, Clone)]
pub struct OracleAvgVelocity {
    gmm: GmmSpec,
    h: f64,
}

impl OracleAvgVelocity {
    /// Default integration step.
    pub const DEFAULT_H: f64 = 1e-4;

    /// Requires 0 < h ≤ 1e-3 so integration error stays far below every
    /// downstream tolerance.
    pub fn new(gmm: GmmSpec, h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1e-3) {
            return Err(MfError::DomainError {
                what: "oracle step h",
                value: h,
                range: "(0, 1e-3]",
            });
        }
        Ok(Self { gmm, h })
    }

    pub fn with_default_step(gmm: GmmSpec) -> Self {
        Self::new(gmm, Self::DEFAULT_H).expect("default step is in range")
    }

    pub fn gmm(&self) -> &GmmSpec {
        &self.gmm
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Marginal velocity v(z, t).
    pub fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        marginal_velocity(&self.gmm, z, t)
    }

    /// Average velocity u(z, r, t), dispatching r = t to the marginal
    /// limit. Point-mass data takes the marginal path for every r, since
    /// straight trajectories make the average equal the instantaneous
    /// velocity identically (and bitwise, sharing one code path).
    pub fn avg_velocity(&self, z: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        if r == t || self.gmm.is_point_mass() {
            self.velocity(z, t)
        } else {
            average_velocity(&self.gmm, z, r, t, self.h)
        }
    }

    /// Endpoint z_r of the flow through (z, t).
    pub fn trajectory(&self, z: &Tensor, t: f64, r: f64) -> Result<Tensor> {
        integrate_trajectory(&self.gmm, z, t, r, self.h)
    }
}

/// Finite-difference probe direction for the identity residual. The state
/// component is always the oracle velocity v(z, t); `r_coeff` and `t_coeff`
/// scale the probes of the two time arguments. The tangent that matches the
/// flow is (v, 0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTangent {
    pub r_coeff: f64,
    pub t_coeff: f64,
}

impl FlowTangent {
    /// The correct along-the-flow tangent (v, 0, 1).
    pub fn along_flow() -> Self {
        Self {
            r_coeff: 0.0,
            t_coeff: 1.0,
        }
    }
}

impl Default for FlowTangent {
    fn default() -> Self {
        Self::along_flow()
    }
}

/// Norm of the defect u − (v − (t−r)·du/dt) at one point, with du/dt by a
/// central difference of `u_field` along `tangent`. A field that truly
/// averages the oracle velocity drives this toward zero; probing with a
/// wrong tangent (or a field that is not an average velocity) blows it up.
pub fn identity_residual_with_tangent<F>(
    u_field: &F,
    gmm: &GmmSpec,
    z: &Tensor,
    r: f64,
    t: f64,
    fd_step: f64,
    tangent: FlowTangent,
) -> Result<f64>
where
    F: Fn(&Tensor, f64, f64) -> Result<Tensor>,
{
    if r > t {
        return Err(MfError::DomainError {
            what: "r",
            value: r,
            range: "[0, t]",
        });
    }
    if !(fd_step > 0.0) {
        return Err(MfError::DomainError {
            what: "fd_step",
            value: fd_step,
            range: "(0, ∞)",
        });
    }
    let v = marginal_velocity(gmm, z, t)?;
    let h = fd_step;
    let plus = u_field(
        &z.add(&v.scale(h))?,
        r + h * tangent.r_coeff,
        t + h * tangent.t_coeff,
    )?;
    let minus = u_field(
        &z.sub(&v.scale(h))?,
        r - h * tangent.r_coeff,
        t - h * tangent.t_coeff,
    )?;
    let du_dt = plus.sub(&minus)?.scale(1.0 / (2.0 * h));
    let u = u_field(z, r, t)?;
    let defect = u.sub(&v.sub(&du_dt.scale(t - r))?)?;
    Ok(defect.norm())
}

/// [`identity_residual_with_tangent`] along the flow tangent (v, 0, 1).
pub fn identity_residual<F>(
    u_field: &F,
    gmm: &GmmSpec,
    z: &Tensor,
    r: f64,
    t: f64,
    fd_step: f64,
) -> Result<f64>
where
    F: Fn(&Tensor, f64, f64) -> Result<Tensor>,
{
    identity_residual_with_tangent(u_field, gmm, z, r, t, fd_step, FlowTangent::along_flow())
}

/// One evaluated grid node of a field comparison.
#[derive(Debug, Clone)]
pub struct FieldPoint {
    pub z: Vec<f64>,
    pub r: f64,
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub residual: f64,
}

/// Evaluates `u_field`, the oracle velocity, and the identity residual on
/// every `(z, r, t)` node, in parallel when `MF_THREADS` allows.
pub fn evaluate_field<F>(
    u_field: &F,
    gmm: &GmmSpec,
    nodes: &[(Tensor, f64, f64)],
    fd_step: f64,
    tangent: FlowTangent,
) -> Result<Vec<FieldPoint>>
where
    F: Fn(&Tensor, f64, f64) -> Result<Tensor> + Sync,
{
    let results = map_ordered(nodes, |(z, r, t)| -> Result<FieldPoint> {
        let u = u_field(z, *r, *t)?;
        let v = marginal_velocity(gmm, z, *t)?;
        let residual =
            identity_residual_with_tangent(u_field, gmm, z, *r, *t, fd_step, tangent)?;
        Ok(FieldPoint {
            z: z.data().to_vec(),
            r: *r,
            t: *t,
            u: u.into_data(),
            v: v.into_data(),
            residual,
        })
    });
    results.into_iter().collect()
}
