//! Paths, velocities, and samplers.
//!
//! Time runs from t=1 (prior noise) to t=0 (data). The default linear
//! schedule interpolates z_t = (1−t)·x + t·ε, whose conditional velocity
//! dz/dt = ε − x is time-independent. Average-velocity models sample by
//! stepping z_r = z_t − (t−r)·u(z_t, r, t); instantaneous-velocity models
//! integrate the ODE dz/dt = v(z, t) with an Euler method.

use crate::error::{MfError, Result};
use crate::tensor::Tensor;

/// Interpolation schedule `z_t = a(t)·x + b(t)·ε` with derivatives.
pub trait Schedule {
    fn a(&self, t: f64) -> f64;
    fn b(&self, t: f64) -> f64;
    fn a_prime(&self, t: f64) -> f64;
    fn b_prime(&self, t: f64) -> f64;
}

/// The default schedule: a(t) = 1−t, b(t) = t.
#[derive(Debug, Default, Clone, Copy)]
pub struct LinearSchedule;

impl Schedule for LinearSchedule {
    fn a(&self, t: f64) -> f64 {
        1.0 - t
    }
    fn b(&self, t: f64) -> f64 {
        t
    }
    fn a_prime(&self, _t: f64) -> f64 {
        -1.0
    }
    fn b_prime(&self, _t: f64) -> f64 {
        1.0
    }
}

/// A state paired with its time.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub z: Tensor,
    pub t: f64,
}

/// `a(t)·x + b(t)·ε` under an arbitrary schedule.
pub fn interpolate_with<S: Schedule>(s: &S, x: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    x.scale(s.a(t)).add(&eps.scale(s.b(t)))
}

/// `(1−t)·x + t·ε` under the default schedule.
pub fn interpolate(x: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    interpolate_with(&LinearSchedule, x, eps, t)
}

/// `a′(t)·x + b′(t)·ε`; the default schedule gives ε − x for every t.
pub fn conditional_velocity_with<S: Schedule>(
    s: &S,
    x: &Tensor,
    eps: &Tensor,
    t: f64,
) -> Result<Tensor> {
    x.scale(s.a_prime(t)).add(&eps.scale(s.b_prime(t)))
}

/// `ε − x` under the default schedule.
pub fn conditional_velocity(x: &Tensor, eps: &Tensor, _t: f64) -> Result<Tensor> {
    eps.sub(x)
}

/// One-call sampling from an average-velocity field:
/// `x = ε − u(ε, 0, 1)`.
pub fn one_step_sample<F>(u_fn: F, eps: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor, f64, f64) -> Result<Tensor>,
{
    let u = u_fn(eps, 0.0, 1.0)?;
    eps.sub(&u)
}

/// Multi-step sampling over a strictly descending time grid from 1 to 0,
/// iterating `z_r = z_t − (t−r)·u(z_t, r, t)`.
pub fn multi_step_sample<F>(u_fn: F, eps: &Tensor, time_grid: &[f64]) -> Result<Tensor>
where
    F: Fn(&Tensor, f64, f64) -> Result<Tensor>,
{
    if time_grid.len() < 2 || time_grid[0] != 1.0 || *time_grid.last().unwrap() != 0.0 {
        return Err(MfError::InvalidSpec(format!(
            "time grid must run from 1 to 0, got {time_grid:?}"
        )));
    }
    if time_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MfError::InvalidSpec(format!(
            "time grid must be strictly descending, got {time_grid:?}"
        )));
    }
    let mut z = eps.clone();
    for w in time_grid.windows(2) {
        let (t, r) = (w[0], w[1]);
        let u = u_fn(&z, r, t)?;
        z = z.sub(&u.scale(t - r))?;
    }
    Ok(z)
}

/// Euler integrator flavor for the instantaneous-velocity baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EulerKind {
    /// First-order forward Euler.
    Forward,
    /// Second-order midpoint rule (two field evaluations per step).
    Midpoint,
}

/// Integrates dz/dt = v(z, t) from t=1 down to t=0 in `n_steps` uniform
/// steps of the chosen kind, starting at `eps`.
pub fn euler_fm_sample<F>(v_fn: F, eps: &Tensor, n_steps: usize, kind: EulerKind) -> Result<Tensor>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    if n_steps == 0 {
        return Err(MfError::DomainError {
            what: "n_steps",
            value: 0.0,
            range: "[1, ∞)",
        });
    }
    let grid: Vec<f64> = (0..=n_steps)
        .map(|k| 1.0 - k as f64 / n_steps as f64)
        .collect();
    let mut z = eps.clone();
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let h = t - next;
        match kind {
            EulerKind::Forward => {
                let v = v_fn(&z, t)?;
                z = z.sub(&v.scale(h))?;
            }
            EulerKind::Midpoint => {
                let v = v_fn(&z, t)?;
                let z_mid = z.sub(&v.scale(0.5 * h))?;
                let v_mid = v_fn(&z_mid, t - 0.5 * h)?;
                z = z.sub(&v_mid.scale(h))?;
            }
        }
    }
    Ok(z)
}
