//! The `eval` subcommand: draws one-step samples from a checkpoint and
//! scores them against reference data, optionally alongside a multi-step
//! instantaneous-velocity baseline.

use std::path::{Path, PathBuf};

use clap::Args;
use meanflow::datagen::{load_csv, sample_gmm, save_csv, Dataset};
use meanflow::eval::{mmd_rbf, moment_report, nearest_mean, wasserstein_1d, Bandwidth};
use meanflow::flow::{euler_fm_sample, one_step_sample, EulerKind};
use meanflow::network::{NetworkParams, WeightSet};
use meanflow::oracle::GmmSpec;
use meanflow::rng::Rng;
use meanflow::Tensor;

use crate::checkpoint;
use crate::commands::{fmt_f64, weight_set};
use crate::parse::parse_gmm;
use crate::CliError;

/// Substream index for reference-data draws.
const REF_STREAM: u64 = 1;
/// Substream index for the checkpoint's sampling noise.
const NOISE_STREAM: u64 = 2;
/// Substream index for the baseline checkpoint's sampling noise.
const BASELINE_STREAM: u64 = 3;

/// Arguments for `meanflow eval`.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Reference data: a mixture spec (e.g. "ring:8:3:0.01") or a CSV path.
    #[arg(long)]
    pub data: String,
    /// Metric: "mmd", "w1", or "moments".
    #[arg(long, default_value = "mmd")]
    pub metric: String,
    /// Number of samples to draw (and reference points to use).
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    /// Seed for reference draws and sampling noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use live weights instead of EMA weights.
    #[arg(long)]
    pub live: bool,
    /// Second checkpoint scored with multi-step integration of u(z, t, t).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Integration steps for the baseline.
    #[arg(long, default_value_t = 100)]
    pub baseline_steps: usize,
    /// Write the generated samples to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reference data with the analytic mixture when one is available.
struct Reference {
    data: Dataset,
    gmm: Option<GmmSpec>,
}

/// Runs the evaluation.
pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.n < 2 {
        return Err(CliError::config(format!(
            "config error: --n must be at least 2, got {}",
            args.n
        )));
    }
    if args.baseline_steps == 0 {
        return Err(CliError::config(
            "config error: --baseline-steps must be at least 1".to_string(),
        ));
    }
    let ckpt = checkpoint::load(&args.ckpt)?;
    let set = weight_set(args.live);
    let reference = resolve_reference(&args.data, args.n, args.seed)?;
    let dim = ckpt.params.config.input_dim;
    if dim != reference.data.dim() {
        return Err(CliError::config(format!(
            "config error: checkpoint dimension {dim} does not match reference dimension {}",
            reference.data.dim()
        )));
    }

    let generated = draw_samples(&ckpt.params, set, args.n, args.seed, NOISE_STREAM)?;
    println!("samples {} dim {}", args.n, dim);
    score(
        "",
        &args.metric,
        &generated,
        &reference,
        ckpt.params.config.num_classes > 0,
    )?;

    if let Some(path) = &args.baseline {
        let baseline = checkpoint::load(path)?;
        if baseline.params.config.input_dim != dim {
            return Err(CliError::config(format!(
                "config error: baseline dimension {} does not match checkpoint dimension {dim}",
                baseline.params.config.input_dim
            )));
        }
        let base_samples = draw_baseline(
            &baseline.params,
            set,
            args.n,
            args.seed,
            args.baseline_steps,
        )?;
        score(
            "baseline_",
            &args.metric,
            &base_samples,
            &reference,
            baseline.params.config.num_classes > 0,
        )?;
    }

    if let Some(path) = &args.out {
        save_csv(path, &generated)?;
        println!("samples written to {}", path.display());
    }
    Ok(())
}

/// Loads a CSV reference when `spec` names an existing file (or ends with
/// ".csv"); otherwise parses it as a mixture and draws `n` points.
fn resolve_reference(spec: &str, n: usize, seed: u64) -> Result<Reference, CliError> {
    let path = Path::new(spec);
    if path.exists() || spec.ends_with(".csv") {
        let data = load_csv(path)?;
        if data.len() < n {
            return Err(CliError::config(format!(
                "config error: reference file has {} points but --n is {n}",
                data.len()
            )));
        }
        let trimmed = truncate(&data, n)?;
        return Ok(Reference {
            data: trimmed,
            gmm: None,
        });
    }
    let gmm = parse_gmm(spec)?;
    let mut rng = Rng::substream(seed, REF_STREAM);
    let data = sample_gmm(&gmm, n, true, &mut rng)?;
    Ok(Reference {
        data,
        gmm: Some(gmm),
    })
}

/// First `n` points (and labels) of a dataset.
fn truncate(data: &Dataset, n: usize) -> Result<Dataset, CliError> {
    let points = data.points[..n].to_vec();
    let out = match &data.labels {
        Some(labels) => Dataset::labeled(points, labels[..n].to_vec(), data.num_classes())?,
        None => Dataset::unlabeled(points)?,
    };
    Ok(out)
}

/// Draws `n` one-step samples. Per sample: one uniform class draw when the
/// network is conditional, then `dim` normals for the noise.
fn draw_samples(
    params: &NetworkParams,
    set: WeightSet,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Dataset, CliError> {
    let mut rng = Rng::substream(seed, stream);
    let dim = params.config.input_dim;
    let classes = params.config.num_classes;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = (classes > 0).then(|| rng.index(classes));
        let eps = Tensor::vector(rng.normal_vec(dim));
        let u_fn = |z: &Tensor, r: f64, t: f64| params.u_theta_with(set, z, r, t, class);
        points.push(one_step_sample(u_fn, &eps)?);
        if let Some(c) = class {
            labels.push(c);
        }
    }
    let data = if classes > 0 {
        Dataset::labeled(points, labels, classes)?
    } else {
        Dataset::unlabeled(points)?
    };
    Ok(data)
}

/// Draws `n` baseline samples by integrating the instantaneous field
/// v(z, t) = u(z, t, t) with forward Euler. Same per-sample draw order as
/// [`draw_samples`].
fn draw_baseline(
    params: &NetworkParams,
    set: WeightSet,
    n: usize,
    seed: u64,
    steps: usize,
) -> Result<Dataset, CliError> {
    let mut rng = Rng::substream(seed, BASELINE_STREAM);
    let dim = params.config.input_dim;
    let classes = params.config.num_classes;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = (classes > 0).then(|| rng.index(classes));
        let eps = Tensor::vector(rng.normal_vec(dim));
        let v_fn = |z: &Tensor, t: f64| params.u_theta_with(set, z, t, t, class);
        points.push(euler_fm_sample(v_fn, &eps, steps, EulerKind::Forward)?);
        if let Some(c) = class {
            labels.push(c);
        }
    }
    let data = if classes > 0 {
        Dataset::labeled(points, labels, classes)?
    } else {
        Dataset::unlabeled(points)?
    };
    Ok(data)
}

/// Prints the requested metric for `generated` against the reference,
/// prefixing each line with `prefix`.
fn score(
    prefix: &str,
    metric: &str,
    generated: &Dataset,
    reference: &Reference,
    conditional: bool,
) -> Result<(), CliError> {
    match metric {
        "mmd" => {
            let est = mmd_rbf(&generated.points, &reference.data.points, Bandwidth::Median)?;
            let dist = est.max(0.0).sqrt();
            println!("{prefix}mmd_sq {}", fmt_f64(est));
            println!("{prefix}mmd {}", fmt_f64(dist));
        }
        "w1" => {
            if generated.dim() != 1 {
                return Err(CliError::config(format!(
                    "config error: metric w1 needs 1D data, got dimension {}",
                    generated.dim()
                )));
            }
            let a: Vec<f64> = generated.points.iter().map(|p| p.data()[0]).collect();
            let b: Vec<f64> = reference.data.points.iter().map(|p| p.data()[0]).collect();
            let w = wasserstein_1d(&a, &b)?;
            println!("{prefix}w1 {}", fmt_f64(w));
        }
        "moments" => {
            let Some(gmm) = &reference.gmm else {
                return Err(CliError::config(
                    "config error: metric moments needs a mixture spec, not a CSV reference"
                        .to_string(),
                ));
            };
            let report = moment_report(&generated.points, gmm)?;
            println!("{prefix}mean_err {}", fmt_f64(report.mean_err));
            println!("{prefix}cov_err {}", fmt_f64(report.cov_err));
        }
        other => {
            return Err(CliError::config(format!(
                "config error: unknown metric {other:?}; expected mmd, w1, or moments"
            )));
        }
    }
    if conditional {
        if let (Some(gmm), Some(labels)) = (&reference.gmm, &generated.labels) {
            if gmm.num_components() == generated.num_classes() {
                let hits = generated
                    .points
                    .iter()
                    .zip(labels)
                    .filter(|(p, &c)| nearest_mean(gmm, p) == c)
                    .count();
                let acc = hits as f64 / generated.len() as f64;
                println!("{prefix}class_accuracy {}", fmt_f64(acc));
            }
        }
    }
    Ok(())
}
