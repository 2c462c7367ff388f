//! The `verify` subcommand: checks the average-velocity identity against
//! the brute-force oracle on a grid, and optionally scores a checkpoint
//! against the oracle field.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use meanflow::oracle::{evaluate_field, FieldPoint, FlowTangent, OracleAvgVelocity};
use meanflow::Tensor;

use crate::checkpoint;
use crate::commands::{fmt_f64, weight_set};
use crate::parse::{parse_gmm, parse_grid, parse_tangent};
use crate::CliError;

/// Tolerance on the interval-additivity defect of the oracle field.
const ADDITIVITY_TOL: f64 = 1e-6;

/// Tolerance on |u(z, t−δ, t) − v(z, t)| as the window shrinks.
const LIMIT_TOL: f64 = 1e-3;

/// Window width used for the shrinking-interval limit check.
const LIMIT_DELTA: f64 = 1e-4;

/// Arguments for `meanflow verify`.
#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Mixture to verify against, e.g. "1:0 0:1" or "ring:8:3:0.01".
    #[arg(long)]
    pub data: String,
    /// Grid of nodes as "z=LO:HI:N,t=LO:HI:N,r=LO:HI:N" (r in fractions of t).
    #[arg(long, default_value = "z=-2:3:10,t=0.1:0.95:10,r=0:0.9:10")]
    pub grid: String,
    /// Maximum identity residual accepted at any node.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step for du/dt. Mixtures with sharp component
    /// boundaries need a larger step to average out oracle integration
    /// noise.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    /// Tangent for the du/dt probe as "v,R,T"; defaults to the flow tangent "v,0,1".
    #[arg(long)]
    pub jvp_tangent: Option<String>,
    /// Checkpoint to score against the oracle field.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Fail (exit 4) when the checkpoint RMSE against the oracle exceeds this.
    #[arg(long)]
    pub max_rmse: Option<f64>,
    /// Use live weights instead of EMA weights for the checkpoint score.
    #[arg(long)]
    pub live: bool,
    /// Write per-node residuals to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs the verification and returns the process exit code contribution.
pub fn run(args: &VerifyArgs) -> Result<(), CliError> {
    let gmm = parse_gmm(&args.data)?;
    let grid = parse_grid(&args.grid)?;
    let nodes = grid.nodes(gmm.dim())?;
    if !(args.tol > 0.0) {
        return Err(CliError::config(format!(
            "config error: --tol must be positive, got {}",
            args.tol
        )));
    }
    let tangent = match &args.jvp_tangent {
        Some(text) => parse_tangent(text)?,
        None => FlowTangent::along_flow(),
    };

    let oracle = OracleAvgVelocity::with_default_step(gmm.clone());
    let u_field = |z: &Tensor, r: f64, t: f64| oracle.avg_velocity(z, r, t);
    let points = evaluate_field(&u_field, &gmm, &nodes, args.fd_step, tangent)?;

    let mut failures: Vec<String> = Vec::new();
    report_identity(&points, args.tol, &mut failures);
    report_additivity(&oracle, &points, &mut failures)?;
    report_limit(&oracle, &points, &mut failures)?;
    if gmm.is_point_mass() {
        report_point_mass(&oracle, &points, &mut failures)?;
    }
    if let Some(path) = &args.ckpt {
        report_checkpoint(args, path, &points, &mut failures)?;
    }
    if let Some(path) = &args.out {
        write_report(path, &points)?;
    }

    if failures.is_empty() {
        println!("verify ok");
        Ok(())
    } else {
        Err(CliError::verification(format!(
            "verification failed: {}",
            failures.join("; ")
        )))
    }
}

/// Prints identity-residual statistics and records a failure when the worst
/// node exceeds the tolerance.
fn report_identity(points: &[FieldPoint], tol: f64, failures: &mut Vec<String>) {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.residual).sum::<f64>() / n;
    let (worst, max) = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.residual))
        .fold((0, f64::NEG_INFINITY), |acc, it| {
            if it.1 > acc.1 {
                it
            } else {
                acc
            }
        });
    println!(
        "identity_residual mean {} max {} tol {}",
        fmt_f64(mean),
        fmt_f64(max),
        fmt_f64(tol)
    );
    if max > tol {
        let p = &points[worst];
        failures.push(format!(
            "identity residual {} > {} at z = ({}), r = {}, t = {}",
            fmt_f64(max),
            fmt_f64(tol),
            crate::commands::fmt_coords(&Tensor::vector(p.z.clone())),
            fmt_f64(p.r),
            fmt_f64(p.t)
        ));
    }
}

/// Checks (t−r)·u(z,r,t) = (s−r)·u(z_s,r,s) + (t−s)·u(z,s,t) with s the
/// window midpoint and z_s the trajectory state at s, on a handful of
/// nodes with genuinely open windows.
fn report_additivity(
    oracle: &OracleAvgVelocity,
    points: &[FieldPoint],
    failures: &mut Vec<String>,
) -> Result<(), CliError> {
    let open: Vec<&FieldPoint> = points.iter().filter(|p| p.t - p.r > 1e-3).collect();
    if open.is_empty() {
        return Ok(());
    }
    let stride = (open.len() / 5).max(1);
    let mut max = 0.0f64;
    for p in open.iter().step_by(stride) {
        let z = Tensor::vector(p.z.clone());
        let s = 0.5 * (p.r + p.t);
        let z_s = oracle.trajectory(&z, p.t, s)?;
        let whole = oracle.avg_velocity(&z, p.r, p.t)?.scale(p.t - p.r);
        let left = oracle.avg_velocity(&z_s, p.r, s)?.scale(s - p.r);
        let right = oracle.avg_velocity(&z, s, p.t)?.scale(p.t - s);
        let defect = whole.sub(&left.add(&right)?)?.norm();
        max = max.max(defect);
    }
    println!(
        "additivity max {} tol {}",
        fmt_f64(max),
        fmt_f64(ADDITIVITY_TOL)
    );
    if max > ADDITIVITY_TOL {
        failures.push(format!(
            "interval additivity defect {} > {}",
            fmt_f64(max),
            fmt_f64(ADDITIVITY_TOL)
        ));
    }
    Ok(())
}

/// Checks that u(z, t−δ, t) approaches the marginal velocity at a handful
/// of nodes.
fn report_limit(
    oracle: &OracleAvgVelocity,
    points: &[FieldPoint],
    failures: &mut Vec<String>,
) -> Result<(), CliError> {
    let usable: Vec<&FieldPoint> = points.iter().filter(|p| p.t > 2.0 * LIMIT_DELTA).collect();
    if usable.is_empty() {
        return Ok(());
    }
    let stride = (usable.len() / 5).max(1);
    let mut max = 0.0f64;
    for p in usable.iter().step_by(stride) {
        let z = Tensor::vector(p.z.clone());
        let near = oracle.avg_velocity(&z, p.t - LIMIT_DELTA, p.t)?;
        let v = oracle.velocity(&z, p.t)?;
        max = max.max(near.sub(&v)?.norm());
    }
    println!("r_limit max {} tol {}", fmt_f64(max), fmt_f64(LIMIT_TOL));
    if max > LIMIT_TOL {
        failures.push(format!(
            "shrinking-window limit defect {} > {}",
            fmt_f64(max),
            fmt_f64(LIMIT_TOL)
        ));
    }
    Ok(())
}

/// For a point mass the average velocity must equal the marginal velocity
/// bitwise at every node.
fn report_point_mass(
    oracle: &OracleAvgVelocity,
    points: &[FieldPoint],
    failures: &mut Vec<String>,
) -> Result<(), CliError> {
    let mut mismatches = 0usize;
    for p in points {
        let z = Tensor::vector(p.z.clone());
        let u = oracle.avg_velocity(&z, p.r, p.t)?;
        let v = oracle.velocity(&z, p.t)?;
        if !u.bitwise_eq(&v) {
            mismatches += 1;
        }
    }
    println!("point_mass_mismatches {mismatches}");
    if mismatches > 0 {
        failures.push(format!(
            "point mass: u differs from v at {mismatches} nodes"
        ));
    }
    Ok(())
}

/// Scores the checkpoint field against the oracle field on the same nodes
/// and records a failure when `--max-rmse` is exceeded.
fn report_checkpoint(
    args: &VerifyArgs,
    path: &PathBuf,
    points: &[FieldPoint],
    failures: &mut Vec<String>,
) -> Result<(), CliError> {
    let ckpt = checkpoint::load(path)?;
    let set = weight_set(args.live);
    let dim = ckpt.params.config.input_dim;
    if dim != points[0].z.len() {
        return Err(CliError::config(format!(
            "config error: checkpoint expects dimension {dim} but the mixture has dimension {}",
            points[0].z.len()
        )));
    }
    let mut sq_sum = 0.0f64;
    let mut count = 0usize;
    for p in points {
        let z = Tensor::vector(p.z.clone());
        let u_model = ckpt.params.u_theta_with(set, &z, p.r, p.t, None)?;
        let u_oracle = Tensor::vector(p.u.clone());
        let diff = u_model.sub(&u_oracle)?;
        sq_sum += diff.data().iter().map(|d| d * d).sum::<f64>();
        count += diff.len();
    }
    let rmse = (sq_sum / count as f64).sqrt();
    println!("model_rmse {}", fmt_f64(rmse));
    if let Some(gate) = args.max_rmse {
        if rmse > gate {
            failures.push(format!(
                "model RMSE {} > {}",
                fmt_f64(rmse),
                fmt_f64(gate)
            ));
        }
    }
    Ok(())
}

/// Writes one CSV row per node: coordinates, window, oracle values, residual.
fn write_report(path: &PathBuf, points: &[FieldPoint]) -> Result<(), CliError> {
    let dim = points[0].z.len();
    let mut text = String::new();
    for j in 0..dim {
        text.push_str(&format!("z{j},"));
    }
    text.push_str("r,t,");
    for j in 0..dim {
        text.push_str(&format!("u{j},"));
    }
    for j in 0..dim {
        text.push_str(&format!("v{j},"));
    }
    text.push_str("residual\n");
    for p in points {
        for c in &p.z {
            text.push_str(&format!("{c:?},"));
        }
        text.push_str(&format!("{:?},{:?},", p.r, p.t));
        for c in &p.u {
            text.push_str(&format!("{c:?},"));
        }
        for c in &p.v {
            text.push_str(&format!("{c:?},"));
        }
        text.push_str(&format!("{:?}\n", p.residual));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
