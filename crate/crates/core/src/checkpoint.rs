//! Binary parameter checkpoints.
//!
//! Layout: magic `NSHC`, format version, then `d_h`, `heads`, `hidden_size`
//! (all little-endian u32), then the named tensors as
//! `name_len | name | rows | cols | row-major f64 little-endian data`.
//! Save, load, save again is byte-identical.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"NSHC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub d_h: u32,
    pub heads: u32,
    pub hidden_size: u32,
}

pub fn save(path: &Path, header: CheckpointHeader, tensors: &[(&str, &Array2<f64>)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&MAGIC)?;
    for word in [
        VERSION,
        header.d_h,
        header.heads,
        header.hidden_size,
        tensors.len() as u32,
    ] {
        file.write_all(&word.to_le_bytes())?;
    }
    for (name, tensor) in tensors {
        file.write_all(&(name.len() as u32).to_le_bytes())?;
        file.write_all(name.as_bytes())?;
        file.write_all(&(tensor.nrows() as u32).to_le_bytes())?;
        file.write_all(&(tensor.ncols() as u32).to_le_bytes())?;
        for v in tensor.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Array2<f64>)>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |f: &mut dyn Read| -> Result<u32> {
        f.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32(&mut file)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header = CheckpointHeader {
        d_h: next_u32(&mut file)?,
        heads: next_u32(&mut file)?,
        hidden_size: next_u32(&mut file)?,
    };
    let count = next_u32(&mut file)? as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = next_u32(&mut file)? as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let rows = next_u32(&mut file)? as usize;
        let cols = next_u32(&mut file)? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            file.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.push((name, tensor));
    }
    Ok((header, tensors))
}

/// Reassemble a named tensor list into a parameter struct via its
/// `named_mut` view, enforcing an exact name/shape match.
pub fn fill_from_tensors(
    slots: Vec<(&'static str, &mut Array2<f64>)>,
    tensors: &[(String, Array2<f64>)],
) -> Result<()> {
    if slots.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            slots.len(),
            tensors.len()
        )));
    }
    for (slot, stored) in slots.into_iter().zip(tensors) {
        if slot.0 != stored.0 {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected {}, found {}",
                slot.0, stored.0
            )));
        }
        if slot.1.dim() != stored.1.dim() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                stored.0,
                stored.1.dim(),
                slot.1.dim()
            )));
        }
        slot.1.assign(&stored.1);
    }
    Ok(())
}
