//! Training loop: time-pair sampling, target construction, adaptive
//! weighting, guidance mixing, and the optimizer.
//!
//! Each step regresses u_θ(z_t, r, t) onto the gradient-stopped target
//! v − (t−r)·du/dt, with du/dt taken as a single forward-mode pass along
//! the tangent (ṽ, 0, 1). ṽ equals the sample velocity v_t = ε − x unless
//! guidance is active, in which case it mixes v_t with the network's own
//! instantaneous outputs.
//!
//! Per-sample randomness is drawn in a pinned order so runs are bitwise
//! reproducible: two sampler draws and one collapse draw for (r, t), then
//! `dim` normals for ε, then one class-drop draw when the batch is
//! labeled. All network evaluation is draw-free.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_params, Lane, ParamGrads};
use crate::datagen::Dataset;
use crate::error::{MfError, Result};
use crate::flow::{conditional_velocity, interpolate};
use crate::network::NetworkParams;
use crate::parallel::map_ordered;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Adam denominator fuzz.
pub const ADAM_EPS: f64 = 1e-8;

/// Distribution of the raw time draws before ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimeSampler {
    /// Uniform on [0, 1).
    Uniform,
    /// A normal draw mapped through the logistic function; lands strictly
    /// inside (0, 1).
    Lognorm { mu: f64, sigma: f64 },
}

impl TimeSampler {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            TimeSampler::Uniform => rng.uniform(),
            TimeSampler::Lognorm { mu, sigma } => {
                let n = mu + sigma * rng.normal();
                1.0 / (1.0 + (-n).exp())
            }
        }
    }
}

impl Default for TimeSampler {
    fn default() -> Self {
        TimeSampler::Lognorm {
            mu: -0.4,
            sigma: 1.0,
        }
    }
}

fn default_ratio() -> f64 {
    0.25
}
fn default_p() -> f64 {
    1.0
}
fn default_c() -> f64 {
    1e-3
}
fn default_omega() -> f64 {
    1.0
}
fn default_class_drop() -> f64 {
    0.1
}
fn default_cfg_interval() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_batch() -> usize {
    128
}
fn default_ema() -> f64 {
    0.9999
}
fn default_iterations() -> u64 {
    2000
}

/// Everything the train loop needs besides data and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Fraction of samples that keep r < t; the rest collapse to r = t.
    #[serde(default = "default_ratio")]
    pub ratio_r_neq_t: f64,
    #[serde(default)]
    pub sampler: TimeSampler,
    /// Adaptive-weight power; 0 recovers the plain squared loss.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Adaptive-weight damping constant, strictly positive.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Guidance scale ω; 1 together with κ = 0 disables guidance.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Bootstrap mixing scale κ in [0, 1).
    #[serde(default)]
    pub kappa: f64,
    /// Probability of dropping a sample's class label.
    #[serde(default = "default_class_drop")]
    pub class_drop_prob: f64,
    /// Guidance applies only when t falls inside this closed interval.
    #[serde(default = "default_cfg_interval")]
    pub cfg_t_interval: [f64; 2],
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ratio_r_neq_t: default_ratio(),
            sampler: TimeSampler::default(),
            p: default_p(),
            c: default_c(),
            omega: default_omega(),
            kappa: 0.0,
            class_drop_prob: default_class_drop(),
            cfg_t_interval: default_cfg_interval(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            batch_size: default_batch(),
            ema_decay: default_ema(),
            iterations: default_iterations(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |what: &'static str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(MfError::DomainError {
                    what,
                    value: v,
                    range: "[0, 1]",
                });
            }
            Ok(())
        };
        in_unit("ratio_r_neq_t", self.ratio_r_neq_t)?;
        in_unit("class_drop_prob", self.class_drop_prob)?;
        in_unit("ema_decay", self.ema_decay)?;
        if let TimeSampler::Lognorm { sigma, .. } = self.sampler {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(MfError::DomainError {
                    what: "sampler sigma",
                    value: sigma,
                    range: "(0, ∞)",
                });
            }
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(MfError::DomainError {
                what: "p",
                value: self.p,
                range: "[0, ∞)",
            });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(MfError::DomainError {
                what: "c",
                value: self.c,
                range: "(0, ∞)",
            });
        }
        if !self.omega.is_finite() {
            return Err(MfError::DomainError {
                what: "omega",
                value: self.omega,
                range: "finite",
            });
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(MfError::DomainError {
                what: "kappa",
                value: self.kappa,
                range: "[0, 1)",
            });
        }
        let [lo, hi] = self.cfg_t_interval;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(MfError::InvalidSpec(format!(
                "cfg_t_interval [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi ≤ 1"
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(MfError::DomainError {
                what: "lr",
                value: self.lr,
                range: "[0, ∞)",
            });
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(MfError::DomainError {
                what: "beta1",
                value: self.beta1,
                range: "[0, 1)",
            });
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(MfError::DomainError {
                what: "beta2",
                value: self.beta2,
                range: "[0, 1)",
            });
        }
        if self.batch_size == 0 {
            return Err(MfError::InvalidSpec("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Effective guidance scale ω′ = ω/(1−κ); finite because κ < 1.
    pub fn effective_guidance_scale(&self) -> f64 {
        self.omega / (1.0 - self.kappa)
    }
}

/// An ordered time pair with 0 ≤ r ≤ t ≤ 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePair {
    pub r: f64,
    pub t: f64,
}

/// Draws (r, t): two sampler draws ordered so the larger becomes t, then a
/// third draw collapses r to t with probability 1 − ratio_r_neq_t. Always
/// consumes exactly three draws.
pub fn sample_time_pair(rng: &mut Rng, config: &TrainConfig) -> TimePair {
    let a = config.sampler.draw(rng);
    let b = config.sampler.draw(rng);
    let t = a.max(b);
    let mut r = a.min(b);
    if rng.uniform() >= config.ratio_r_neq_t {
        r = t;
    }
    TimePair { r, t }
}

/// The regression target u_tgt = ṽ − (t−r)·du/dt. The caller treats the
/// result as a constant; both inputs come from gradient-free lanes.
pub fn meanflow_target(v_tilde: &Tensor, du_dt: &Tensor, r: f64, t: f64) -> Result<Tensor> {
    v_tilde.sub(&du_dt.scale(t - r))
}

/// Per-sample weight w = 1/(‖δ‖² + c)^p, treated as a constant for
/// gradients. `raw_sq` is the summed squared error of one sample. p = 0
/// short-circuits to exactly 1.
pub fn adaptive_weight(raw_sq: f64, p: f64, c: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    (raw_sq + c).powf(-p)
}

/// Guided velocity ṽ = ω·v_cond + κ·u_cond + (1−ω−κ)·u_uncond. The u
/// terms are network evaluations at (z_t, t, t) treated as constants.
pub fn cfg_velocity_tilde(
    v_cond: &Tensor,
    u_uncond: &Tensor,
    u_cond: &Tensor,
    omega: f64,
    kappa: f64,
) -> Result<Tensor> {
    let mut out = v_cond.scale(omega);
    out.add_scaled(u_cond, kappa)?;
    out.add_scaled(u_uncond, 1.0 - omega - kappa)?;
    Ok(out)
}

/// Per-step loss diagnostics.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// ‖Δ‖² per sample, before weighting.
    pub raw_sq_error: Vec<f64>,
    /// Adaptive weight per sample.
    pub weight: Vec<f64>,
    /// mean(w·‖Δ‖²) with w held constant.
    pub weighted_loss: f64,
    /// Observed fraction of samples with r == t.
    pub fraction_r_eq_t: f64,
}

impl LossBreakdown {
    pub fn raw_sq_error_mean(&self) -> f64 {
        let b = self.raw_sq_error.len() as f64;
        self.raw_sq_error.iter().map(|r| r / b).sum()
    }
}

/// One batch of training data. `labels` is present exactly when the
/// dataset is class-conditional.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

struct SampleCtx {
    x: Tensor,
    eps: Tensor,
    r: f64,
    t: f64,
    class_id: Option<usize>,
}

struct SampleOut {
    raw: f64,
    weight: f64,
    grads: ParamGrads,
}

/// One optimization step's loss and gradients on `batch`.
///
/// Per sample: z_t = (1−t)x + tε and v_t = ε − x; ṽ is v_t unless guidance
/// is active for this sample; (u, du/dt) come from one forward-mode pass
/// along (ṽ, 0, 1); the target ṽ − (t−r)·du/dt is frozen; reverse mode
/// differentiates mean(w·‖u_θ − target‖²) with w frozen too.
pub fn training_step(
    params: &NetworkParams,
    batch: &Batch,
    rng: &mut Rng,
    config: &TrainConfig,
) -> Result<(LossBreakdown, ParamGrads)> {
    if batch.is_empty() {
        return Err(MfError::DegenerateInput {
            what: "batch",
            reason: "no samples".into(),
        });
    }
    if let Some(labels) = &batch.labels {
        if labels.len() != batch.x.len() {
            return Err(MfError::ShapeMismatch {
                op: "training_step labels",
                lhs: vec![batch.x.len()],
                rhs: vec![labels.len()],
            });
        }
    }

    let conditional = batch.labels.is_some();
    let mut ctxs = Vec::with_capacity(batch.len());
    for (i, x) in batch.x.iter().enumerate() {
        let pair = sample_time_pair(rng, config);
        let eps = Tensor::vector(rng.normal_vec(x.len()));
        let class_id = if conditional {
            let dropped = rng.uniform() < config.class_drop_prob;
            let label = batch.labels.as_ref().expect("checked")[i];
            if dropped {
                None
            } else {
                Some(label)
            }
        } else {
            None
        };
        ctxs.push(SampleCtx {
            x: x.clone(),
            eps,
            r: pair.r,
            t: pair.t,
            class_id,
        });
    }

    let cfg_enabled = conditional && !(config.omega == 1.0 && config.kappa == 0.0);
    let [cfg_lo, cfg_hi] = config.cfg_t_interval;

    let outputs = map_ordered(&ctxs, |ctx| -> Result<SampleOut> {
        let z = interpolate(&ctx.x, &ctx.eps, ctx.t)?;
        let v = conditional_velocity(&ctx.x, &ctx.eps, ctx.t)?;

        let cfg_active = cfg_enabled && ctx.t >= cfg_lo && ctx.t <= cfg_hi;
        let v_tilde = if cfg_active {
            let u_uncond = params.u_theta(&z, ctx.t, ctx.t, None)?;
            let u_cond = match ctx.class_id {
                Some(c) => params.u_theta(&z, ctx.t, ctx.t, Some(c))?,
                None => u_uncond.clone(),
            };
            cfg_velocity_tilde(&v, &u_uncond, &u_cond, config.omega, config.kappa)?
        } else {
            v.clone()
        };

        let jvp = params.u_theta_jvp(&z, ctx.r, ctx.t, ctx.class_id, (&v_tilde, 0.0, 1.0))?;
        let target = meanflow_target(&v_tilde, &jvp.tangent, ctx.r, ctx.t)?;

        let (raw, grads) = grad_params(&params.live, |graph, leaves| {
            let z_in = graph.constant(&z);
            let r_in = graph.constant(&Tensor::scalar(ctx.r));
            let t_in = graph.constant(&Tensor::scalar(ctx.t));
            let u = params.forward_in(graph, leaves, &z_in, &r_in, &t_in, ctx.class_id)?;
            let tgt = graph.constant(&target);
            let delta = graph.sub(&u, &tgt)?;
            let sq = graph.mul(&delta, &delta)?;
            graph.sum(&sq)
        })?;
        let weight = adaptive_weight(raw, config.p, config.c);
        Ok(SampleOut { raw, weight, grads })
    });

    let b = batch.len() as f64;
    let mut total = ParamGrads::zeros_like(&params.live);
    let mut raw_sq_error = Vec::with_capacity(batch.len());
    let mut weights = Vec::with_capacity(batch.len());
    let mut loss_acc = 0.0;
    for out in outputs {
        let out = out?;
        total.add_scaled(&out.grads, out.weight / b)?;
        loss_acc += out.weight * out.raw;
        raw_sq_error.push(out.raw);
        weights.push(out.weight);
    }
    let weighted_loss = loss_acc / b;
    if !weighted_loss.is_finite() {
        return Err(MfError::NonFinite("training loss"));
    }
    if !total.all_finite() {
        return Err(MfError::NonFinite("parameter gradients"));
    }

    let n_eq = ctxs.iter().filter(|c| c.r == c.t).count();
    let breakdown = LossBreakdown {
        raw_sq_error,
        weight: weights,
        weighted_loss,
        fraction_r_eq_t: n_eq as f64 / b,
    };
    Ok((breakdown, total))
}

/// Adaptive-moment optimizer state (β₁/β₂ first and second moments with
/// bias correction, constant learning rate, no weight decay).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `lr == 0` leaves parameters bitwise
    /// untouched while still advancing moments.
    pub fn update(
        &mut self,
        params: &mut [Tensor],
        grads: &ParamGrads,
        lr: f64,
        beta1: f64,
        beta2: f64,
    ) -> Result<()> {
        if params.len() != grads.tensors.len() || params.len() != self.m.len() {
            return Err(MfError::ShapeMismatch {
                op: "adam update",
                lhs: vec![params.len()],
                rhs: vec![grads.tensors.len()],
            });
        }
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((theta, g), (m, v)) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let md = m.data_mut();
            for (mi, gi) in md.iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let vd = v.data_mut();
            for (vi, gi) in vd.iter_mut().zip(g.data()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            if lr != 0.0 {
                let td = theta.data_mut();
                for ((ti, mi), vi) in td.iter_mut().zip(m.data()).zip(v.data()) {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *ti -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// One metrics record per iteration; these become the CSV rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub weighted_loss: f64,
    pub raw_sq_error_mean: f64,
    pub fraction_r_eq_t: f64,
}

/// Runs `config.iterations` steps of [`training_step`] plus optimizer and
/// EMA updates, reporting each step to `observer` (iteration, breakdown,
/// current params). Batch indices are drawn before per-sample noise, all
/// from one stream seeded by `config.seed`.
pub fn train<F>(
    params: &mut NetworkParams,
    data: &Dataset,
    config: &TrainConfig,
    mut observer: F,
) -> Result<Vec<MetricsRow>>
where
    F: FnMut(u64, &LossBreakdown, &NetworkParams) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(MfError::DegenerateInput {
            what: "dataset",
            reason: "no points".into(),
        });
    }
    let mut rng = Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&params.live);
    let mut metrics = Vec::with_capacity(config.iterations as usize);

    for iteration in 0..config.iterations {
        let indices: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.index(data.len()))
            .collect();
        let batch = Batch {
            x: indices.iter().map(|&i| data.points[i].clone()).collect(),
            labels: data
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        };
        let (breakdown, grads) = match training_step(params, &batch, &mut rng, config) {
            Ok(out) => out,
            Err(MfError::NonFinite(what)) => {
                return Err(MfError::TrainingDiverged {
                    iteration,
                    reason: format!("non-finite {what}"),
                })
            }
            Err(e) => return Err(e),
        };
        adam.update(
            &mut params.live,
            &grads,
            config.lr,
            config.beta1,
            config.beta2,
        )?;
        params.ema_update(config.ema_decay)?;
        metrics.push(MetricsRow {
            iteration,
            weighted_loss: breakdown.weighted_loss,
            raw_sq_error_mean: breakdown.raw_sq_error_mean(),
            fraction_r_eq_t: breakdown.fraction_r_eq_t,
        });
        observer(iteration, &breakdown, params)?;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use approx::assert_abs_diff_eq;

    fn small_net(input_dim: usize, num_classes: usize, seed: u64) -> NetworkParams {
        let config = NetworkConfig {
            input_dim,
            hidden_dim: 16,
            depth: 2,
            embed_dim: 8,
            num_classes,
            ..NetworkConfig::new(input_dim)
        };
        let mut rng = Rng::seed_from_u64(seed);
        NetworkParams::init(&config, &mut rng).unwrap()
    }

    fn unit_batch(dim: usize, n: usize, seed: u64) -> Batch {
        let mut rng = Rng::seed_from_u64(seed);
        Batch {
            x: (0..n)
                .map(|_| Tensor::vector(rng.normal_vec(dim)))
                .collect(),
            labels: None,
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let config = TrainConfig::default();
        config.validate().unwrap();
        assert_abs_diff_eq!(config.ratio_r_neq_t, 0.25);
        assert_abs_diff_eq!(config.p, 1.0);
        assert_abs_diff_eq!(config.c, 1e-3);
        assert_abs_diff_eq!(config.class_drop_prob, 0.1);
        assert_eq!(
            config.sampler,
            TimeSampler::Lognorm {
                mu: -0.4,
                sigma: 1.0
            }
        );
        assert!(TrainConfig {
            kappa: 1.0,
            ..config.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            c: 0.0,
            ..config.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            cfg_t_interval: [0.5, 0.2],
            ..config
        }
        .validate()
        .is_err());
    }

    #[test]
    fn effective_scale_algebra() {
        let config = TrainConfig {
            omega: 0.2,
            kappa: 0.9,
            ..TrainConfig::default()
        };
        assert_abs_diff_eq!(config.effective_guidance_scale(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn time_pair_ordering_and_fraction() {
        let config = TrainConfig {
            ratio_r_neq_t: 0.25,
            ..TrainConfig::default()
        };
        let mut rng = Rng::seed_from_u64(7);
        let n = 100_000;
        let mut n_eq = 0;
        for _ in 0..n {
            let pair = sample_time_pair(&mut rng, &config);
            assert!(pair.r <= pair.t);
            assert!(pair.t > 0.0 && pair.t < 1.0, "lognorm stays inside (0,1)");
            assert!(pair.r > 0.0);
            if pair.r == pair.t {
                n_eq += 1;
            }
        }
        let frac = n_eq as f64 / n as f64;
        assert!(
            (frac - 0.75).abs() < 0.02,
            "r==t fraction {frac} vs expected 0.75"
        );
    }

    #[test]
    fn time_pair_degenerate_ratios() {
        let mut rng = Rng::seed_from_u64(11);
        let all_eq = TrainConfig {
            ratio_r_neq_t: 0.0,
            ..TrainConfig::default()
        };
        for _ in 0..1000 {
            let pair = sample_time_pair(&mut rng, &all_eq);
            assert_eq!(pair.r, pair.t);
        }
        let none_eq = TrainConfig {
            ratio_r_neq_t: 1.0,
            ..TrainConfig::default()
        };
        let mut n_eq = 0;
        for _ in 0..1000 {
            let pair = sample_time_pair(&mut rng, &none_eq);
            if pair.r == pair.t {
                n_eq += 1;
            }
        }
        assert_eq!(n_eq, 0, "distinct draws almost surely differ");
    }

    #[test]
    fn logistic_maps_zero_to_half() {
        let sampler = TimeSampler::Lognorm { mu: 0.0, sigma: 1.0 };
        // A zero normal draw maps to logistic(0) = 0.5; check via mu with
        // sigma → 0 surrogate instead of intercepting the rng.
        let tight = TimeSampler::Lognorm {
            mu: 0.0,
            sigma: 1e-12,
        };
        let mut rng = Rng::seed_from_u64(3);
        let t = tight.draw(&mut rng);
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-9);
        let mut any_spread = false;
        for _ in 0..10 {
            let v = sampler.draw(&mut rng);
            if (v - 0.5).abs() > 0.05 {
                any_spread = true;
            }
        }
        assert!(any_spread);
    }

    #[test]
    fn target_reduces_to_velocity_when_r_equals_t() {
        let v = Tensor::vector(vec![0.3, -1.2]);
        let du = Tensor::vector(vec![5.0, -7.0]);
        let tgt = meanflow_target(&v, &du, 0.6, 0.6).unwrap();
        assert!(tgt.bitwise_eq(&v));
        let zero_du = Tensor::zeros(&[2]);
        let tgt2 = meanflow_target(&v, &zero_du, 0.1, 0.9).unwrap();
        assert!(tgt2.bitwise_eq(&v));
    }

    #[test]
    fn target_matches_oracle_average_velocity() {
        use crate::oracle::{average_velocity, marginal_velocity, GmmSpec};
        let gmm = GmmSpec::single(Tensor::vector(vec![1.0]), 0.25).unwrap();
        let z = Tensor::vector(vec![0.5]);
        let (r, t) = (0.2, 0.8);
        let fd = 1e-4;
        let v = marginal_velocity(&gmm, &z, t).unwrap();
        let probe = |dt: f64| -> Tensor {
            let zp = z.add(&v.scale(dt)).unwrap();
            average_velocity(&gmm, &zp, r, t + dt, 1e-4).unwrap()
        };
        let du_dt = probe(fd).sub(&probe(-fd)).unwrap().scale(1.0 / (2.0 * fd));
        let tgt = meanflow_target(&v, &du_dt, r, t).unwrap();
        let u = average_velocity(&gmm, &z, r, t, 1e-4).unwrap();
        assert!(
            (tgt.data()[0] - u.data()[0]).abs() <= 1e-4,
            "target {} vs oracle u {}",
            tgt.data()[0],
            u.data()[0]
        );
    }

    #[test]
    fn adaptive_weight_formula() {
        assert_eq!(adaptive_weight(3.7, 0.0, 1e-3), 1.0);
        assert_abs_diff_eq!(adaptive_weight(0.0, 1.0, 1e-3), 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            adaptive_weight(1.0, 1.0, 1e-3),
            1.0 / 1.001,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            adaptive_weight(0.7, 0.5, 0.01),
            1.0 / (0.71f64).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cfg_tilde_degenerate_cases() {
        let v = Tensor::vector(vec![1.0, -2.0]);
        let u_u = Tensor::vector(vec![0.5, 0.5]);
        let u_c = Tensor::vector(vec![-0.25, 4.0]);
        // ω=1, κ=0 leaves only v.
        let tilde = cfg_velocity_tilde(&v, &u_u, &u_c, 1.0, 0.0).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(tilde.data()[i], v.data()[i], epsilon = 1e-15);
        }
        // κ=0 reduces to ω·v + (1−ω)·u_uncond.
        let tilde2 = cfg_velocity_tilde(&v, &u_u, &u_c, 2.0, 0.0).unwrap();
        for i in 0..2 {
            let expect = 2.0 * v.data()[i] - u_u.data()[i];
            assert_abs_diff_eq!(tilde2.data()[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn cfg_fixed_point_matches_effective_scale() {
        // Solving ṽ = ω·v + κ·ṽ + (1−ω−κ)·u gives the (ω′, 0) field with
        // ω′ = ω/(1−κ): feeding the (2.0, 0) output back in as u_cond
        // reproduces it under (0.2, 0.9).
        let v = Tensor::vector(vec![0.7, -1.3, 2.2]);
        let u = Tensor::vector(vec![-0.4, 0.9, 1.1]);
        let direct = cfg_velocity_tilde(&v, &u, &u, 2.0, 0.0).unwrap();
        let bootstrap = cfg_velocity_tilde(&v, &u, &direct, 0.2, 0.9).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(bootstrap.data()[i], direct.data()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_init_first_step_target_is_velocity() {
        let params = small_net(2, 0, 1);
        let batch = unit_batch(2, 8, 2);
        let config = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut rng = Rng::seed_from_u64(5);
        let (breakdown, _) = training_step(&params, &batch, &mut rng, &config).unwrap();

        // Replay the pinned draw order to reconstruct each sample's v_t.
        let mut replay = Rng::seed_from_u64(5);
        for (i, x) in batch.x.iter().enumerate() {
            let pair = sample_time_pair(&mut replay, &config);
            let eps = Tensor::vector(replay.normal_vec(2));
            let v = conditional_velocity(x, &eps, pair.t).unwrap();
            assert_abs_diff_eq!(breakdown.raw_sq_error[i], v.sq_norm(), epsilon = 1e-12);
            let expect_w = adaptive_weight(v.sq_norm(), config.p, config.c);
            assert_abs_diff_eq!(breakdown.weight[i], expect_w, epsilon = 1e-9);
        }
    }

    #[test]
    fn displacement_vanishes_at_r_equals_t() {
        let params = small_net(2, 0, 3);
        let mut rng = Rng::seed_from_u64(4);
        let z = Tensor::vector(rng.normal_vec(2));
        let t = 0.37;
        let u = params.u_theta(&z, t, t, None).unwrap();
        for &ui in u.data() {
            assert_eq!((t - t) * ui, 0.0);
        }
    }

    #[test]
    fn stop_gradient_two_pass_agreement() {
        let mut params = small_net(1, 0, 9);
        // Randomize the zero-initialized output layer so gradients are
        // nontrivial everywhere.
        let mut rng = Rng::seed_from_u64(10);
        let n = params.live.len();
        for tensor in params.live[n - 2..].iter_mut() {
            for v in tensor.data_mut() {
                *v = 0.3 * rng.normal();
            }
        }
        let batch = unit_batch(1, 6, 11);
        let config = TrainConfig {
            batch_size: 6,
            ..TrainConfig::default()
        };
        let (_, grads) = training_step(&params, &batch, &mut Rng::seed_from_u64(12), &config)
            .unwrap();

        // Two-pass oracle: recompute every target with the same draws,
        // freeze them as numbers, differentiate the weighted quadratic.
        let mut replay = Rng::seed_from_u64(12);
        let mut frozen: Vec<(Tensor, f64, f64, Tensor)> = Vec::new();
        for x in &batch.x {
            let pair = sample_time_pair(&mut replay, &config);
            let eps = Tensor::vector(replay.normal_vec(1));
            let z = interpolate(x, &eps, pair.t).unwrap();
            let v = conditional_velocity(x, &eps, pair.t).unwrap();
            let jvp = params
                .u_theta_jvp(&z, pair.r, pair.t, None, (&v, 0.0, 1.0))
                .unwrap();
            let tgt = meanflow_target(&v, &jvp.tangent, pair.r, pair.t).unwrap();
            frozen.push((z, pair.r, pair.t, tgt));
        }
        let b = batch.len() as f64;
        let mut oracle_grads = ParamGrads::zeros_like(&params.live);
        for (z, r, t, tgt) in &frozen {
            let (raw, g) = grad_params(&params.live, |graph, leaves| {
                let z_in = graph.constant(z);
                let r_in = graph.constant(&Tensor::scalar(*r));
                let t_in = graph.constant(&Tensor::scalar(*t));
                let u = params.forward_in(graph, leaves, &z_in, &r_in, &t_in, None)?;
                let tgt_in = graph.constant(tgt);
                let delta = graph.sub(&u, &tgt_in)?;
                let sq = graph.mul(&delta, &delta)?;
                graph.sum(&sq)
            })
            .unwrap();
            let w = adaptive_weight(raw, config.p, config.c);
            oracle_grads.add_scaled(&g, w / b).unwrap();
        }
        for (a, b) in grads.tensors.iter().zip(&oracle_grads.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-10, "two-pass gradient mismatch");
            }
        }
    }

    #[test]
    fn cfg_noop_matches_plain_step_bitwise() {
        let params = small_net(2, 4, 21);
        let mut rng = Rng::seed_from_u64(22);
        let batch = Batch {
            x: (0..6)
                .map(|_| Tensor::vector(rng.normal_vec(2)))
                .collect(),
            labels: Some((0..6).map(|i| i % 4).collect()),
        };
        let base = TrainConfig {
            batch_size: 6,
            omega: 1.0,
            kappa: 0.0,
            ..TrainConfig::default()
        };
        let (lb_a, g_a) = training_step(&params, &batch, &mut Rng::seed_from_u64(30), &base)
            .unwrap();
        let (lb_b, g_b) = training_step(&params, &batch, &mut Rng::seed_from_u64(30), &base)
            .unwrap();
        assert_eq!(lb_a.weighted_loss.to_bits(), lb_b.weighted_loss.to_bits());
        for (a, b) in g_a.tensors.iter().zip(&g_b.tensors) {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn class_drop_rate_is_respected() {
        let params = small_net(1, 3, 33);
        let mut rng = Rng::seed_from_u64(34);
        let n = 4000;
        let batch = Batch {
            x: (0..n)
                .map(|_| Tensor::vector(rng.normal_vec(1)))
                .collect(),
            labels: Some((0..n).map(|i| i % 3).collect()),
        };
        let config = TrainConfig {
            batch_size: n,
            class_drop_prob: 0.1,
            ..TrainConfig::default()
        };
        // Count drops by replaying the draw order.
        let seed = 35;
        training_step(&params, &batch, &mut Rng::seed_from_u64(seed), &config).unwrap();
        let mut replay = Rng::seed_from_u64(seed);
        let mut dropped = 0;
        for x in &batch.x {
            let _ = sample_time_pair(&mut replay, &config);
            let _ = replay.normal_vec(x.len());
            if replay.uniform() < config.class_drop_prob {
                dropped += 1;
            }
        }
        let frac = dropped as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.02, "drop fraction {frac}");
    }

    #[test]
    fn divergent_loss_is_reported_with_iteration() {
        use crate::datagen::Dataset;
        let mut params = small_net(1, 0, 40);
        // Poison one live weight so the forward pass goes non-finite.
        params.live[0].data_mut()[0] = f64::INFINITY;
        let data = Dataset::unlabeled(vec![Tensor::vector(vec![0.5])]).unwrap();
        let config = TrainConfig {
            iterations: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let err = train(&mut params, &data, &config, |_, _, _| Ok(())).unwrap_err();
        match err {
            MfError::TrainingDiverged { iteration, .. } => assert_eq!(iteration, 0),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        use crate::datagen::Dataset;
        let mut params = small_net(1, 0, 50);
        let before = params.live.clone();
        let data = Dataset::unlabeled(vec![
            Tensor::vector(vec![0.2]),
            Tensor::vector(vec![-0.7]),
        ])
        .unwrap();
        let config = TrainConfig {
            iterations: 5,
            batch_size: 4,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train(&mut params, &data, &config, |_, _, _| Ok(())).unwrap();
        for (a, b) in params.live.iter().zip(&before) {
            assert!(a.bitwise_eq(b), "lr=0 must leave parameters unchanged");
        }
    }

    #[test]
    fn train_emits_one_metrics_row_per_iteration() {
        use crate::datagen::Dataset;
        let mut params = small_net(1, 0, 60);
        let data = Dataset::unlabeled(vec![
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![-1.0]),
        ])
        .unwrap();
        let config = TrainConfig {
            iterations: 4,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let metrics = train(&mut params, &data, &config, |i, lb, _| {
            assert_eq!(i, seen);
            assert!(lb.weighted_loss.is_finite());
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(metrics.len(), 4);
        assert_eq!(seen, 4);
        for (i, row) in metrics.iter().enumerate() {
            assert_eq!(row.iteration, i as u64);
            assert!(row.fraction_r_eq_t >= 0.0 && row.fraction_r_eq_t <= 1.0);
        }
    }

    #[test]
    fn training_reduces_loss_on_point_mass() {
        use crate::datagen::Dataset;
        let mut params = small_net(1, 0, 70);
        let data = Dataset::unlabeled(vec![Tensor::vector(vec![2.0])]).unwrap();
        let config = TrainConfig {
            iterations: 2000,
            batch_size: 16,
            lr: 3e-3,
            ratio_r_neq_t: 0.25,
            ..TrainConfig::default()
        };
        let metrics = train(&mut params, &data, &config, |_, _, _| Ok(())).unwrap();
        // The raw error is spiky under adaptive weighting, so compare window
        // medians rather than means.
        let median = |rows: &[MetricsRow]| {
            let mut v: Vec<f64> = rows.iter().map(|m| m.raw_sq_error_mean).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let early = median(&metrics[..200]);
        let late = median(&metrics[1800..]);
        assert!(
            late < 0.5 * early,
            "loss should fall: early {early}, late {late}"
        );
    }
}
