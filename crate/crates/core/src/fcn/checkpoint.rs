//! Parameter checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "OCTSEGNN"
//! version    u32      1
//! config     u32 length + UTF-8 JSON of the NetworkConfig
//! groups     u32 count, then per group:
//!              u32 name length + UTF-8 name
//!              u32 rank, rank x u64 dims
//!              prod(dims) x f64 values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::{Network, NetworkConfig, ParamGroup, Parameters};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OCTSEGNN";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(mut out: impl Write, config: &NetworkConfig, params: &Parameters) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&(params.groups.len() as u32).to_le_bytes())?;
    for g in &params.groups {
        out.write_all(&(g.name.len() as u32).to_le_bytes())?;
        out.write_all(g.name.as_bytes())?;
        out.write_all(&(g.shape.len() as u32).to_le_bytes())?;
        for &d in &g.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &g.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

fn parse(buf: &[u8]) -> std::result::Result<(NetworkConfig, Parameters), String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let config: NetworkConfig = serde_json::from_str(&r.string()?).map_err(|e| e.to_string())?;
    let count = r.u32()? as usize;
    let mut groups = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
        let bytes = r.take(len.checked_mul(8).ok_or("shape overflow")?)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push(ParamGroup { name, shape, values });
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok((config, Parameters { groups }))
}

/// Parses a checkpoint and checks its groups against the stored config.
pub fn read_checkpoint(mut input: impl Read) -> Result<(NetworkConfig, Parameters)> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let (config, params) = parse(&buf).map_err(|m| Error::Config(format!("checkpoint: {m}")))?;
    Network::new(config.clone())?.check_params(&params)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &NetworkConfig, params: &Parameters) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkConfig, Parameters)> {
    let buf = fs::read(path)?;
    let (config, params) = parse(&buf).map_err(|m| Error::format(path, None, m))?;
    Network::new(config.clone())?.check_params(&params)?;
    Ok((config, params))
}
