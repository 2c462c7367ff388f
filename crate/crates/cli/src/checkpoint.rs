//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "MFCK"
//! version u32      currently 1
//! config  u32 length + UTF-8 resolved run-file text
//! live    tensor table
//! ema     tensor table
//! ```
//!
//! A tensor table is a u32 count followed by, per tensor: u16 name length,
//! name bytes, u8 rank, u32 extent per axis, then the f64 entries. Entries
//! round-trip bitwise since only raw bits move; non-finite entries are
//! rejected at load, as training never persists them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use meanflow::network::NetworkParams;
use meanflow::Tensor;

use crate::config::RunConfig;
use crate::CliError;

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;

/// A loaded checkpoint: the resolved config text it was trained under and
/// the reconstructed parameters (live and EMA weight sets).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub run_config: RunConfig,
    pub params: NetworkParams,
}

/// Writes `params` with its resolved config text.
pub fn save(path: &Path, config_text: &str, params: &NetworkParams) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::other(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let echo = config_text.as_bytes();
    w.write_all(&(echo.len() as u32).to_le_bytes())?;
    w.write_all(echo)?;
    write_table(&mut w, &params.names, &params.live)?;
    write_table(&mut w, &params.names, &params.ema)?;
    w.flush()?;
    Ok(())
}

fn write_table<W: Write>(w: &mut W, names: &[String], tensors: &[Tensor]) -> Result<(), CliError> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in names.iter().zip(tensors) {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[tensor.rank() as u8])?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint, refusing wrong magic or version, and validates the
/// tensor tables against the architecture named in the config echo.
pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::other(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CliError::other(format!(
            "{}: not a checkpoint (magic {:02x?}, expected \"MFCK\")",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CliError::other(format!(
            "{}: checkpoint version {version} unsupported; this build reads version {VERSION}",
            path.display()
        )));
    }
    let echo_len = read_u32(&mut r)? as usize;
    let mut echo = vec![0u8; echo_len];
    read_exact(&mut r, &mut echo, "config echo")?;
    let config_text = String::from_utf8(echo)
        .map_err(|_| CliError::other("checkpoint config echo is not UTF-8"))?;
    let run_config = RunConfig::from_text(&config_text)
        .map_err(|e| CliError::other(format!("checkpoint config echo: {}", e.message)))?;

    let (names, live) = read_table(&mut r)?;
    let (ema_names, ema) = read_table(&mut r)?;
    if names != ema_names {
        return Err(CliError::other(
            "checkpoint live and ema tables disagree on tensor names",
        ));
    }

    let input_dim = run_config.network.input_dim.ok_or_else(|| {
        CliError::other("checkpoint config echo lacks network.input_dim")
    })?;
    let num_classes = run_config.network.num_classes.unwrap_or(0);
    let net_config = run_config.network.resolve(input_dim, num_classes)?;
    let params = NetworkParams::from_parts(net_config, names, live, ema)
        .map_err(|e| CliError::other(format!("checkpoint tensors: {e}")))?;
    Ok(Checkpoint {
        config_text,
        run_config,
        params,
    })
}

fn read_table<R: Read>(r: &mut R) -> Result<(Vec<String>, Vec<Tensor>), CliError> {
    let count = read_u32(r)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(r, &mut name, "tensor name")?;
        let name = String::from_utf8(name)
            .map_err(|_| CliError::other("checkpoint tensor name is not UTF-8"))?;
        let mut rank = [0u8; 1];
        read_exact(r, &mut rank, "tensor rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(r, &mut buf, "tensor data")?;
            data.push(f64::from_le_bytes(buf));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CliError::other(format!(
                "checkpoint tensor {name} contains non-finite entries"
            )));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CliError::other(format!("checkpoint tensor {name}: {e}")))?;
        names.push(name);
        tensors.push(tensor);
    }
    Ok((names, tensors))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), CliError> {
    r.read_exact(buf)
        .map_err(|e| CliError::other(format!("checkpoint truncated reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CliError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, "u32")?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, CliError> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf, "u16")?;
    Ok(u16::from_le_bytes(buf))
}
