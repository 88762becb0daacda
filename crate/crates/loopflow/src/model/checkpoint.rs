//! Checkpoint serialization.
//!
//! Little-endian binary layout:
//!
//! ```text
//! bytes 0..8   magic "LOOPFLOW"
//! u32          format version (1)
//! u32          hidden width
//! u32          head hidden width
//! u32          tensor count
//! per tensor:  u32 rows, u32 cols, rows*cols f64 (column-major)
//! ```
//!
//! Tensors appear in [`ModelParams`] declaration order; shapes are validated
//! against the widths in the header on load.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LOOPFLOW";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let views = params.tensor_views();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dims.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(params.dims.head_hidden as u32).to_le_bytes());
    out.extend_from_slice(&(views.len() as u32).to_le_bytes());
    for (_, rows, cols, data) in views {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut file)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let hidden = read_u32(&mut file)? as usize;
    let head_hidden = read_u32(&mut file)? as usize;
    let n_tensors = read_u32(&mut file)? as usize;
    if hidden == 0 || head_hidden == 0 {
        return Err(Error::Checkpoint("zero width in header".into()));
    }
    let mut params = ModelParams::zeros(ModelDims { hidden, head_hidden });
    let expected: Vec<(String, usize, usize)> = params
        .tensor_views()
        .iter()
        .map(|(n, r, c, _)| (n.to_string(), *r, *c))
        .collect();
    if n_tensors != expected.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {n_tensors} (expected {})",
            expected.len()
        )));
    }
    let mut slices = params.tensor_slices_mut();
    for ti in 0..n_tensors {
        let rows = read_u32(&mut file)? as usize;
        let cols = read_u32(&mut file)? as usize;
        let (name, erows, ecols) = &expected[ti];
        if rows != *erows || cols != *ecols {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {rows}x{cols} (expected {erows}x{ecols})"
            )));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        file.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("{name}: truncated data")))?;
        for (k, chunk) in buf.chunks_exact(8).enumerate() {
            slices[ti][k] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            rest.len()
        )));
    }
    drop(slices);
    Ok(params)
}
