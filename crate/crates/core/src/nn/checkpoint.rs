//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     8  magic b"SSRCKPT\x02"
//!      8     4  u32 depth
//!     12     4  u32 base_channels
//!     16     4  u32 kernel_size
//!     20     4  u32 skip_connections (0 or 1)
//!     24     8  f64 leaky_slope
//!     32     8  u64 epoch
//!     40     8  u64 parameter count n
//!     48    8n  f64 parameters in network layout order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{NetConfig, ParamVector, UNet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSRCKPT\x02";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub epoch: u64,
    pub params: ParamVector,
}

pub fn write_checkpoint(mut w: impl Write, ckpt: &Checkpoint) -> std::io::Result<()> {
    let cfg = &ckpt.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(cfg.depth as u32).to_le_bytes())?;
    w.write_all(&(cfg.base_channels as u32).to_le_bytes())?;
    w.write_all(&(cfg.kernel_size as u32).to_le_bytes())?;
    w.write_all(&u32::from(cfg.skip_connections).to_le_bytes())?;
    w.write_all(&cfg.leaky_slope.to_le_bytes())?;
    w.write_all(&ckpt.epoch.to_le_bytes())?;
    w.write_all(&(ckpt.params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * ckpt.params.len());
    for &v in ckpt.params.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    if &take::<8>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let u32le = |b: [u8; 4]| u32::from_le_bytes(b) as usize;
    let depth = u32le(take(&mut r)?);
    let base_channels = u32le(take(&mut r)?);
    let kernel_size = u32le(take(&mut r)?);
    let skip = u32le(take(&mut r)?);
    let leaky_slope = f64::from_le_bytes(take(&mut r)?);
    let epoch = u64::from_le_bytes(take(&mut r)?);
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    if skip > 1 {
        return Err(Error::Checkpoint(format!("skip flag {skip} is not 0/1")));
    }
    let config = NetConfig {
        depth,
        base_channels,
        kernel_size,
        skip_connections: skip == 1,
        leaky_slope,
    };
    let expected = UNet::new(&config)?.param_len();
    if n != expected {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match the header architecture ({expected})"
        )));
    }
    let mut raw = vec![0u8; 8 * n];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Checkpoint {
        config,
        epoch,
        params: ParamVector::new(values)?,
    })
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        write_checkpoint(&mut w, self).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(std::io::BufReader::new(f))
    }
}
