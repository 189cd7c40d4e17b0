//! Flat binary parameter checkpoints: magic `BEVO`, version u32, parameter
//! count u64, then the f64 values in traversal order; all little-endian.

use std::io::{Read, Write};

use super::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"BEVO";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &[f64], mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<f64>> {
    let io = |e: std::io::Error| NnError::Checkpoint(e.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dword = [0u8; 8];
    input.read_exact(&mut dword).map_err(io)?;
    let count = u64::from_le_bytes(dword) as usize;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != count * 8 {
        return Err(NnError::Checkpoint(format!(
            "expected {count} parameters, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
