//! Parameter checkpoints: flat binary files of named (shape, values)
//! records, little-endian 64-bit, behind a magic/version header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"P2XCKPT\0";
const VERSION: u32 = 1;

/// One named parameter as stored on disk.
pub struct ParamRecord {
    pub name: String,
    pub tensor: Tensor,
}

pub fn save_params(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn write_params(w: &mut impl Write, entries: &[(String, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Vec<ParamRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    read_params(&mut r)
}

pub fn read_params(r: &mut impl Read) -> Result<Vec<ParamRecord>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let ndim = read_u32(r)? as usize;
        if ndim == 0 || ndim > 2 {
            return Err(Error::Checkpoint(format!("bad rank {ndim} for {name}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(ParamRecord {
            name,
            tensor: Tensor::from_raw(shape, data),
        });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Copies loaded records into live parameters, matching by name and shape.
pub fn restore_into(records: &[ParamRecord], targets: Vec<(String, &mut Tensor)>) -> Result<()> {
    use std::collections::HashMap;
    let by_name: HashMap<&str, &ParamRecord> =
        records.iter().map(|r| (r.name.as_str(), r)).collect();
    for (name, t) in targets {
        let rec = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if rec.tensor.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: file {:?}, model {:?}",
                rec.tensor.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(rec.tensor.data());
    }
    Ok(())
}
