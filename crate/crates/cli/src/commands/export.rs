//! The `export-field` subcommand: tabulates the oracle velocity fields
//! (and optionally a checkpoint's field) on a grid for plotting.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use meanflow::oracle::OracleAvgVelocity;
use meanflow::Tensor;

use crate::checkpoint;
use crate::commands::{check_class, weight_set};
use crate::parse::{parse_gmm, parse_range, parse_t_list};
use crate::CliError;

/// Arguments for `meanflow export-field`.
#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Mixture whose fields to export, e.g. "1:0 0:1" or "ring:8:3:0.01".
    #[arg(long)]
    pub data: String,
    /// Comma-separated list of end times t in (0, 1].
    #[arg(long, default_value = "0.25,0.5,1")]
    pub t: String,
    /// Spatial range per axis as "lo:hi:count".
    #[arg(long, default_value = "-3:3:61", allow_hyphen_values = true)]
    pub z: String,
    /// Start times as fractions of t, "lo:hi:count"; 1 means r = t.
    #[arg(long, default_value = "0:1:5")]
    pub r_frac: String,
    /// Checkpoint whose field to export alongside the oracle's.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Class id to condition the checkpoint on.
    #[arg(long)]
    pub class: Option<usize>,
    /// Use live weights instead of EMA weights.
    #[arg(long)]
    pub live: bool,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs the export.
pub fn run(args: &ExportArgs) -> Result<(), CliError> {
    let gmm = parse_gmm(&args.data)?;
    let dim = gmm.dim();
    if dim > 2 {
        return Err(CliError::config(format!(
            "config error: export-field supports 1D and 2D mixtures, got dimension {dim}"
        )));
    }
    let ts = parse_t_list(&args.t)?;
    let z_range = parse_range(&args.z)?;
    let r_range = parse_range(&args.r_frac)?;
    if r_range.lo < 0.0 || r_range.hi > 1.0 {
        return Err(CliError::config(format!(
            "config error: --r-frac must stay within [0, 1], got {}:{}",
            r_range.lo, r_range.hi
        )));
    }

    let ckpt = match &args.ckpt {
        Some(path) => {
            let c = checkpoint::load(path)?;
            if c.params.config.input_dim != dim {
                return Err(CliError::config(format!(
                    "config error: checkpoint dimension {} does not match mixture dimension {dim}",
                    c.params.config.input_dim
                )));
            }
            check_class(&c.params, args.class)?;
            Some(c)
        }
        None => {
            if args.class.is_some() {
                return Err(CliError::config(
                    "config error: --class needs --ckpt".to_string(),
                ));
            }
            None
        }
    };
    let set = weight_set(args.live);

    let axis = z_range.values();
    let nodes: Vec<Tensor> = if dim == 1 {
        axis.iter().map(|&x| Tensor::vector(vec![x])).collect()
    } else {
        let mut out = Vec::with_capacity(axis.len() * axis.len());
        for &x in &axis {
            for &y in &axis {
                out.push(Tensor::vector(vec![x, y]));
            }
        }
        out
    };

    let oracle = OracleAvgVelocity::with_default_step(gmm);
    let mut text = String::from("t,r");
    for j in 0..dim {
        text.push_str(&format!(",z{j}"));
    }
    for j in 0..dim {
        text.push_str(&format!(",v{j}"));
    }
    for j in 0..dim {
        text.push_str(&format!(",u{j}"));
    }
    if ckpt.is_some() {
        for j in 0..dim {
            text.push_str(&format!(",model{j}"));
        }
    }
    text.push('\n');

    let mut rows = 0usize;
    for &t in &ts {
        for frac in r_range.values() {
            let r = frac * t;
            for z in &nodes {
                let v = oracle.velocity(z, t)?;
                let u = oracle.avg_velocity(z, r, t)?;
                text.push_str(&format!("{t:?},{r:?}"));
                for c in z.data() {
                    text.push_str(&format!(",{c:?}"));
                }
                for c in v.data() {
                    text.push_str(&format!(",{c:?}"));
                }
                for c in u.data() {
                    text.push_str(&format!(",{c:?}"));
                }
                if let Some(c) = &ckpt {
                    let m = c.params.u_theta_with(set, z, r, t, args.class)?;
                    for x in m.data() {
                        text.push_str(&format!(",{x:?}"));
                    }
                }
                text.push('\n');
                rows += 1;
            }
        }
    }

    let mut file = fs::File::create(&args.out)?;
    file.write_all(text.as_bytes())?;
    println!("wrote {rows} rows to {}", args.out.display());
    Ok(())
}
