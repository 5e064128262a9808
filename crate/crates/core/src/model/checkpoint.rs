//! Model checkpoint container.
//!
//! Layout (little-endian): `CTCM`, `u32` format version, the network
//! config (`u32` layers, `u32` hidden size, `u32` input dim, `u32` output
//! dim, `u64` seed), then every parameter tensor in declaration order as
//! `u32` rank, `rank x u32` dims, and the `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{NetworkConfig, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTCM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, p: &NetworkParams) -> Result<()> {
    let c = &p.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    for v in [c.num_layers, c.hidden_size, c.input_dim, c.output_dim] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u64::<LittleEndian>(c.seed)?;
    for t in p.tensors() {
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in t.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R, name: &Path) -> Result<NetworkParams> {
    let bad = |msg: String| Error::parse(name, 0, msg);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated checkpoint header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, expected CTCM".into()));
    }
    let mut u32s = |what: &str| {
        r.read_u32::<LittleEndian>()
            .map_err(|_| bad(format!("truncated checkpoint: missing {what}")))
    };
    let version = u32s("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let num_layers = u32s("layer count")? as usize;
    let hidden_size = u32s("hidden size")? as usize;
    let input_dim = u32s("input dim")? as usize;
    let output_dim = u32s("output dim")? as usize;
    let seed = r
        .read_u64::<LittleEndian>()
        .map_err(|_| bad("truncated checkpoint: missing seed".into()))?;
    let config = NetworkConfig {
        num_layers,
        hidden_size,
        input_dim,
        output_dim,
        seed,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let mut p = NetworkParams::zeros(&config);
    for (i, mut t) in p.tensors_mut().into_iter().enumerate() {
        let rank = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad(format!("truncated checkpoint at tensor {i}")))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| bad(format!("truncated checkpoint at tensor {i}")))? as usize,
            );
        }
        if dims != t.shape() {
            return Err(bad(format!(
                "tensor {i} has shape {dims:?}, config implies {:?}",
                t.shape()
            )));
        }
        for v in t.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| bad(format!("truncated checkpoint in tensor {i} data")))?;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(p)
}

pub fn save_checkpoint(path: &Path, p: &NetworkParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, p)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    read_checkpoint(BufReader::new(File::open(path)?), path)
}
