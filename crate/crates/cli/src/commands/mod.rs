//! Subcommand implementations.

pub mod eval;
pub mod export;
pub mod sample;
pub mod train;
pub mod verify;

use meanflow::network::{NetworkParams, WeightSet};
use meanflow::Tensor;

use crate::CliError;

/// Picks the inference weight set: EMA unless `--live` asked for the raw
/// training weights.
pub fn weight_set(live: bool) -> WeightSet {
    if live {
        WeightSet::Live
    } else {
        WeightSet::Ema
    }
}

/// Resolves a requested class id against a checkpoint's class table.
pub fn check_class(params: &NetworkParams, class: Option<usize>) -> Result<(), CliError> {
    if let Some(c) = class {
        if params.config.num_classes == 0 {
            return Err(CliError::config(
                "--class given but the checkpoint is unconditional",
            ));
        }
        if c >= params.config.num_classes {
            return Err(CliError::config(format!(
                "class id {c} out of range; the checkpoint has {} classes",
                params.config.num_classes
            )));
        }
    }
    Ok(())
}

/// Formats one float the way every CSV in this crate does: `{:?}` is the
/// shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Joins a state vector for a CSV row.
pub fn fmt_coords(z: &Tensor) -> String {
    z.data()
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}
