//! The `sample` subcommand: pulls noise through a trained model in one or
//! more steps and writes the results as CSV.

use std::path::PathBuf;

use clap::Args;
use meanflow::datagen::{save_csv, Dataset};
use meanflow::flow::{multi_step_sample, one_step_sample};
use meanflow::rng::Rng;
use meanflow::Tensor;

use crate::checkpoint;
use crate::commands::{check_class, weight_set};
use crate::CliError;

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Sampling steps; 1 is the single-evaluation path.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Class id for conditional checkpoints.
    #[arg(long)]
    pub class: Option<usize>,
    /// Output CSV of samples.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the raw training weights instead of the EMA set.
    #[arg(long)]
    pub live: bool,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &SampleArgs) -> Result<(), CliError> {
    if args.steps == 0 {
        return Err(CliError::config("--steps must be at least 1"));
    }
    if args.n == 0 {
        return Err(CliError::config("--n must be at least 1"));
    }
    let ckpt = checkpoint::load(&args.ckpt)?;
    let params = &ckpt.params;
    check_class(params, args.class)?;
    let set = weight_set(args.live);
    let dim = params.config.input_dim;

    let u_fn =
        |z: &Tensor, r: f64, t: f64| params.u_theta_with(set, z, r, t, args.class);
    let grid: Vec<f64> = (0..=args.steps)
        .map(|k| 1.0 - k as f64 / args.steps as f64)
        .collect();

    let mut rng = Rng::seed_from_u64(args.seed);
    let mut points = Vec::with_capacity(args.n);
    for _ in 0..args.n {
        let eps = Tensor::vector(rng.normal_vec(dim));
        let x = if args.steps == 1 {
            one_step_sample(u_fn, &eps)?
        } else {
            multi_step_sample(u_fn, &eps, &grid)?
        };
        points.push(x);
    }

    let data = match args.class {
        Some(c) => Dataset::labeled(points, vec![c; args.n], params.config.num_classes)?,
        None => Dataset::unlabeled(points)?,
    };
    save_csv(&args.out, &data)?;
    println!(
        "wrote {} samples ({} step{}) to {}",
        args.n,
        args.steps,
        if args.steps == 1 { "" } else { "s" },
        args.out.display()
    );
    Ok(())
}
