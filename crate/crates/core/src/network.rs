//! The velocity network u_θ(z, r, t | c).
//!
//! An MLP over the state `z`, conditioned on the two time variables through
//! sinusoidal features (one block per conditioning variable, each refined by
//! its own 2-layer MLP and summed) and on an optional class embedding. The
//! summed conditioning vector is added to the first trunk layer's
//! pre-activation. The final layer starts at zero so the untrained network
//! predicts u ≡ 0.
//!
//! The forward pass is written once over [`Lane`], so plain evaluation,
//! Jacobian-vector products, and parameter gradients all execute the same
//! arithmetic.

use crate::autodiff::{self, Graph, JvpOutput, Lane, ParamGrads, Var};
use crate::error::{MfError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Which time variables condition the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeCondMode {
    /// (t, r)
    #[serde(rename = "t_r")]
    TR,
    /// (t, t−r)
    #[serde(rename = "t_dt")]
    TDt,
    /// (t, r, t−r)
    #[serde(rename = "t_r_dt")]
    TRDt,
    /// (t−r) only
    #[serde(rename = "dt_only")]
    DtOnly,
}

impl TimeCondMode {
    /// Number of conditioning variables for this mode.
    pub fn num_vars(self) -> usize {
        match self {
            TimeCondMode::TR | TimeCondMode::TDt => 2,
            TimeCondMode::TRDt => 3,
            TimeCondMode::DtOnly => 1,
        }
    }
}

fn default_hidden_dim() -> usize {
    256
}
fn default_depth() -> usize {
    4
}
fn default_embed_dim() -> usize {
    128
}
fn default_mode() -> TimeCondMode {
    TimeCondMode::TDt
}

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_mode")]
    pub time_cond_mode: TimeCondMode,
    /// 0 means unconditional; otherwise the class table carries
    /// `num_classes + 1` rows, the last being the null token.
    #[serde(default)]
    pub num_classes: usize,
}

impl NetworkConfig {
    /// Defaults with the given input dimension.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: default_hidden_dim(),
            depth: default_depth(),
            embed_dim: default_embed_dim(),
            time_cond_mode: default_mode(),
            num_classes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(MfError::InvalidSpec(
                "input_dim and hidden_dim must be positive".into(),
            ));
        }
        if self.depth < 1 {
            return Err(MfError::InvalidSpec("depth must be at least 1".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(MfError::InvalidSpec(format!(
                "embed_dim must be even and at least 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order. Initialization,
    /// gradient layout, checkpoints, and the forward pass all follow this
    /// single definition.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_dim;
        let mut out = Vec::new();
        for v in 0..self.time_cond_mode.num_vars() {
            out.push((format!("time_embed.{v}.w1"), vec![self.embed_dim, h]));
            out.push((format!("time_embed.{v}.b1"), vec![h]));
            out.push((format!("time_embed.{v}.w2"), vec![h, h]));
            out.push((format!("time_embed.{v}.b2"), vec![h]));
        }
        out.push(("class_table".into(), vec![self.num_classes + 1, h]));
        out.push(("trunk.0.w".into(), vec![self.input_dim, h]));
        out.push(("trunk.0.b".into(), vec![h]));
        for i in 1..self.depth {
            out.push((format!("trunk.{i}.w"), vec![h, h]));
            out.push((format!("trunk.{i}.b"), vec![h]));
        }
        out.push(("out.w".into(), vec![h, self.input_dim]));
        out.push(("out.b".into(), vec![self.input_dim]));
        out
    }
}

/// Interleaved frequency/phase tables producing `(sin f₀x, cos f₀x,
/// sin f₁x, cos f₁x, …)` when evaluated as `sin(x·freqs + offsets)`.
/// Frequencies climb geometrically from 1 to 10²; the times live in [0, 1],
/// so the top rung already resolves structure ~16 periods fine while
/// keeping ∂u/∂t at magnitudes the bootstrap target can chase.
fn frequency_tables(embed_dim: usize) -> (Tensor, Tensor) {
    let half = embed_dim / 2;
    let mut freqs = Vec::with_capacity(embed_dim);
    let mut offsets = Vec::with_capacity(embed_dim);
    for j in 0..half {
        let f = if half == 1 {
            1.0
        } else {
            10f64.powf(2.0 * j as f64 / (half - 1) as f64)
        };
        freqs.push(f);
        offsets.push(0.0);
        freqs.push(f);
        offsets.push(std::f64::consts::FRAC_PI_2);
    }
    (Tensor::vector(freqs), Tensor::vector(offsets))
}

/// Raw sinusoidal feature block for one scalar variable.
pub fn sinusoid_block(x: f64, embed_dim: usize) -> Tensor {
    let (freqs, offsets) = frequency_tables(embed_dim);
    freqs.map(|f| f * x).add(&offsets).unwrap().map(f64::sin)
}

/// Raw (pre-MLP) sinusoidal features of the mode's conditioning variables,
/// concatenated in variable order; each variable contributes `embed_dim`
/// entries. The per-variable refinement MLPs live in the network parameters
/// and are applied inside the forward pass.
pub fn embed_times(r: f64, t: f64, mode: TimeCondMode, embed_dim: usize) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(MfError::DomainError {
            what: "t",
            value: t,
            range: "[0, 1]",
        });
    }
    if r < 0.0 || r > t {
        return Err(MfError::DomainError {
            what: "r",
            value: r,
            range: "[0, t]",
        });
    }
    let vars: Vec<f64> = match mode {
        TimeCondMode::TR => vec![t, r],
        TimeCondMode::TDt => vec![t, t - r],
        TimeCondMode::TRDt => vec![t, r, t - r],
        TimeCondMode::DtOnly => vec![t - r],
    };
    let blocks: Vec<Tensor> = vars
        .into_iter()
        .map(|x| sinusoid_block(x, embed_dim))
        .collect();
    let refs: Vec<&Tensor> = blocks.iter().collect();
    Tensor::concat(&refs)
}

/// Selects live (training) or EMA (inference) weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSet {
    Live,
    Ema,
}

/// Network parameters: live weights, an EMA shadow of identical layout, and
/// the layout names shared by both.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub names: Vec<String>,
    pub live: Vec<Tensor>,
    pub ema: Vec<Tensor>,
}

/// In-order reader over lifted parameter values; keeps the forward pass in
/// lockstep with [`NetworkConfig::layout`].
struct Cursor<'a, V> {
    items: &'a [V],
    pos: usize,
}

impl<'a, V> Cursor<'a, V> {
    fn next(&mut self) -> &'a V {
        let item = &self.items[self.pos];
        self.pos += 1;
        item
    }
}

impl NetworkParams {
    /// Fresh parameters: hidden weights drawn uniformly with fan-in
    /// scaling, biases zero, class rows small-normal, final layer zero.
    /// Draws consume `rng` in layout order.
    pub fn init(config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut live = Vec::new();
        for (name, shape) in config.layout() {
            let tensor = if name.starts_with("out.") {
                Tensor::zeros(&shape)
            } else if name == "class_table" {
                if config.num_classes == 0 {
                    Tensor::zeros(&shape)
                } else {
                    let n: usize = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| 0.02 * rng.normal()).collect())?
                }
            } else if shape.len() == 2 {
                let bound = (1.0 / shape[0] as f64).sqrt();
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
                Tensor::new(shape, data)?
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            live.push(tensor);
        }
        Ok(Self {
            config: config.clone(),
            names,
            ema: live.clone(),
            live,
        })
    }

    /// Rebuilds parameters from stored tensors, checking names and shapes
    /// against the config's layout.
    pub fn from_parts(
        config: NetworkConfig,
        names: Vec<String>,
        live: Vec<Tensor>,
        ema: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if names.len() != layout.len() || live.len() != layout.len() || ema.len() != layout.len() {
            return Err(MfError::InvalidSpec(format!(
                "parameter table has {} names, {} live, {} ema tensors; layout wants {}",
                names.len(),
                live.len(),
                ema.len(),
                layout.len()
            )));
        }
        for (((name, tensor), shadow), (want_name, want_shape)) in
            names.iter().zip(&live).zip(&ema).zip(&layout)
        {
            if name != want_name {
                return Err(MfError::InvalidSpec(format!(
                    "parameter {name} out of order; expected {want_name}"
                )));
            }
            if tensor.shape() != &want_shape[..] || shadow.shape() != &want_shape[..] {
                return Err(MfError::InvalidSpec(format!(
                    "parameter {name} has shape {:?} (ema {:?}); layout wants {:?}",
                    tensor.shape(),
                    shadow.shape(),
                    want_shape
                )));
            }
        }
        Ok(Self {
            config,
            names,
            live,
            ema,
        })
    }

    fn weights(&self, set: WeightSet) -> &[Tensor] {
        match set {
            WeightSet::Live => &self.live,
            WeightSet::Ema => &self.ema,
        }
    }

    /// Lifts one weight set into a lane as constants (no gradients).
    pub fn lift_constants<L: Lane>(&self, lane: &mut L, set: WeightSet) -> Vec<L::V> {
        self.weights(set).iter().map(|t| lane.constant(t)).collect()
    }

    /// Lifts the live weights as gradient-enabled graph leaves.
    pub fn graph_leaves(&self, graph: &mut Graph) -> Vec<Var> {
        self.live.iter().map(|t| graph.leaf(t)).collect()
    }

    fn class_row(&self, class_id: Option<usize>) -> Result<Option<usize>> {
        match class_id {
            Some(c) if self.config.num_classes == 0 => Err(MfError::InvalidSpec(format!(
                "class {c} requested from an unconditional network"
            ))),
            Some(c) if c >= self.config.num_classes => Err(MfError::InvalidSpec(format!(
                "class {c} out of range for {} classes",
                self.config.num_classes
            ))),
            Some(c) => Ok(Some(c)),
            None if self.config.num_classes > 0 => Ok(Some(self.config.num_classes)),
            None => Ok(None),
        }
    }

    /// The full forward pass over any lane. `lifted` must come from
    /// [`Self::lift_constants`] or [`Self::graph_leaves`]; `r` and `t` are
    /// rank-0 lane values.
    pub fn forward_in<L: Lane>(
        &self,
        lane: &mut L,
        lifted: &[L::V],
        z: &L::V,
        r: &L::V,
        t: &L::V,
        class_id: Option<usize>,
    ) -> Result<L::V> {
        let row_index = self.class_row(class_id)?;
        let mut cursor = Cursor {
            items: lifted,
            pos: 0,
        };

        let (freqs, offsets) = frequency_tables(self.config.embed_dim);
        let freqs = lane.constant(&freqs);
        let offsets = lane.constant(&offsets);

        let vars: Vec<L::V> = match self.config.time_cond_mode {
            TimeCondMode::TR => vec![t.clone(), r.clone()],
            TimeCondMode::TDt => vec![t.clone(), lane.sub(t, r)?],
            TimeCondMode::TRDt => vec![t.clone(), r.clone(), lane.sub(t, r)?],
            TimeCondMode::DtOnly => vec![lane.sub(t, r)?],
        };

        let mut cond: Option<L::V> = None;
        for x in &vars {
            let scaled = lane.mul(x, &freqs)?;
            let shifted = lane.add(&scaled, &offsets)?;
            let raw = lane.sin(&shifted)?;
            let (w1, b1) = (cursor.next(), cursor.next());
            let (w2, b2) = (cursor.next(), cursor.next());
            let pre_embed = lane.affine(&raw, w1, b1)?;
            let hidden = lane.silu(&pre_embed)?;
            let e = lane.affine(&hidden, w2, b2)?;
            cond = Some(match cond {
                Some(acc) => lane.add(&acc, &e)?,
                None => e,
            });
        }
        let mut cond = cond.expect("every mode has at least one time variable");

        let table = cursor.next();
        if let Some(idx) = row_index {
            let row = lane.row(table, idx)?;
            cond = lane.add(&cond, &row)?;
        }

        let (w0, b0) = (cursor.next(), cursor.next());
        let stem = lane.affine(z, w0, b0)?;
        let pre = lane.add(&stem, &cond)?;
        let mut h = lane.silu(&pre)?;
        for _ in 1..self.config.depth {
            let (w, b) = (cursor.next(), cursor.next());
            let pre_h = lane.affine(&h, w, b)?;
            h = lane.silu(&pre_h)?;
        }
        let (wo, bo) = (cursor.next(), cursor.next());
        lane.affine(&h, wo, bo)
    }

    /// Evaluates u_θ(z, r, t | c) with the chosen weight set.
    pub fn u_theta_with(
        &self,
        set: WeightSet,
        z: &Tensor,
        r: f64,
        t: f64,
        class_id: Option<usize>,
    ) -> Result<Tensor> {
        let mut lane = autodiff::EvalLane;
        let lifted = self.lift_constants(&mut lane, set);
        self.forward_in(
            &mut lane,
            &lifted,
            &z.clone(),
            &Tensor::scalar(r),
            &Tensor::scalar(t),
            class_id,
        )
    }

    /// Evaluates u_θ with live weights.
    pub fn u_theta(&self, z: &Tensor, r: f64, t: f64, class_id: Option<usize>) -> Result<Tensor> {
        self.u_theta_with(WeightSet::Live, z, r, t, class_id)
    }

    /// Value and Jacobian-vector product of u_θ at `(z, r, t)` along
    /// `tangent = (v_z, v_r, v_t)`, in one dual-number pass over live
    /// weights.
    pub fn u_theta_jvp(
        &self,
        z: &Tensor,
        r: f64,
        t: f64,
        class_id: Option<usize>,
        tangent: (&Tensor, f64, f64),
    ) -> Result<JvpOutput> {
        autodiff::jvp(
            |lane, zd, rd, td| {
                let lifted = self.lift_constants(lane, WeightSet::Live);
                self.forward_in(lane, &lifted, zd, rd, td, class_id)
            },
            (z, r, t),
            tangent,
        )
    }

    /// Reverse-mode gradients of a scalar loss built on a fresh tape whose
    /// leaves are the live parameters.
    pub fn grad<F>(&self, loss_fn: F) -> Result<(f64, ParamGrads)>
    where
        F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
    {
        autodiff::grad_params(&self.live, loss_fn)
    }

    /// `ema ← decay·ema + (1−decay)·live`, per tensor. `decay` must lie in
    /// `[0, 1]`; the endpoints short-circuit so they are bitwise exact.
    pub fn ema_update(&mut self, decay: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(MfError::DomainError {
                what: "ema decay",
                value: decay,
                range: "[0, 1]",
            });
        }
        if decay == 1.0 {
            return Ok(());
        }
        if decay == 0.0 {
            self.ema = self.live.clone();
            return Ok(());
        }
        for (ema, live) in self.ema.iter_mut().zip(&self.live) {
            ema.scale_in_place(decay);
            ema.add_scaled(live, 1.0 - decay)?;
        }
        Ok(())
    }
}
