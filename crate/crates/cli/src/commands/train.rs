//! The `train` subcommand: dataset construction, the optimization loop,
//! metrics logging, and checkpoint writes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use meanflow::network::NetworkParams;
use meanflow::rng::Rng;
use meanflow::training::train;
use meanflow::MfError;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::CliError;

/// Substream indices so dataset generation, parameter init, and the
/// training loop never share RNG draws.
const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for metrics.csv and checkpoint.mfck.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.training.seed = seed;
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::other(format!("{}: {e}", args.out.display())))?;

    let seed = config.training.seed;
    let mut data_rng = Rng::substream(seed, DATA_STREAM);
    let (data, _gmm) = config.data.resolve(&mut data_rng)?;
    let net_config = config.network.resolve(data.dim(), data.num_classes())?;
    let mut init_rng = Rng::substream(seed, INIT_STREAM);
    let mut params =
        NetworkParams::init(&net_config, &mut init_rng).map_err(|e| CliError::config(e.to_string()))?;

    let echo = config.resolved_text(&net_config)?;
    let ckpt_path = args.out.join("checkpoint.mfck");
    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = MetricsWriter::create(&metrics_path)?;

    let log_every = config.log_every;
    let checkpoint_every = config.checkpoint_every;
    let iterations = config.training.iterations;
    let result = train(&mut params, &data, &config.training, |i, lb, p| {
        metrics
            .row(i, lb.weighted_loss, lb.raw_sq_error_mean(), lb.fraction_r_eq_t)
            .map_err(|e| MfError::InvalidSpec(format!("metrics write failed: {e}")))?;
        if log_every > 0 && (i % log_every == 0 || i + 1 == iterations) {
            eprintln!(
                "iter {i:>6}  weighted_loss {:.6}  raw {:.6}",
                lb.weighted_loss,
                lb.raw_sq_error_mean()
            );
        }
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 && i + 1 != iterations {
            checkpoint::save(&ckpt_path, &echo, p)
                .map_err(|e| MfError::InvalidSpec(format!("checkpoint write failed: {e}")))?;
        }
        Ok(())
    });

    match result {
        Ok(rows) => {
            metrics.flush()?;
            checkpoint::save(&ckpt_path, &echo, &params)?;
            let last = rows.last().map(|r| r.weighted_loss).unwrap_or(f64::NAN);
            println!(
                "trained {} iterations; final weighted loss {last:?}; wrote {} and {}",
                rows.len(),
                ckpt_path.display(),
                metrics_path.display()
            );
            Ok(())
        }
        Err(MfError::TrainingDiverged { iteration, reason }) => {
            metrics.flush()?;
            Err(CliError::diverged(format!(
                "training diverged at iteration {iteration}: {reason}"
            )))
        }
        Err(other) => Err(other.into()),
    }
}

/// Incremental metrics CSV writer; one row per iteration, floats printed
/// with `{:?}` so identical runs produce identical bytes.
struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self, CliError> {
        let file =
            File::create(path).map_err(|e| CliError::other(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "iteration,weighted_loss,raw_sq_error,fraction_r_eq_t")
            .map_err(CliError::from)?;
        Ok(Self { out })
    }

    fn row(&mut self, iteration: u64, loss: f64, raw: f64, frac: f64) -> Result<(), CliError> {
        writeln!(self.out, "{iteration},{loss:?},{raw:?},{frac:?}").map_err(CliError::from)
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.out.flush().map_err(CliError::from)
    }
}
