//! Binary checkpoints: config echo plus named little-endian `f64` arrays.
//!
//! ```text
//! "LFCK" u32 version
//! u32 len, agent config (JSON)
//! u32 len, free-form echo (the training config)
//! u32 G, G x (mu, nu, sigma, beta, eps) f64
//! online set, target set: u32 count, count x (u16 name len, name, u32 rows, u32 cols, f64[rows*cols])
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Agent, AgentConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::objectives::PopArtStats;
use crate::rollout::{read_u16, read_u32, read_u64};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub agent: Agent,
    pub echo: String,
}

fn write_blob(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_blob(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn write_set(w: &mut impl Write, set: &ParamSet) -> Result<()> {
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    for (name, m) in set.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a set into `into`, which already has the expected names and shapes.
fn read_set(r: &mut impl Read, into: &mut ParamSet) -> Result<()> {
    let count = read_u32(r)? as usize;
    if count != into.len() {
        return Err(Error::Format(format!("checkpoint holds {count} arrays, model has {}", into.len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let mut name = vec![0u8; usize::from(read_u16(r)?)];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let id = into.find(&name).ok_or_else(|| Error::Format(format!("unknown array {name}")))?;
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::Format(format!("array {name} appears twice")));
        }
        let (rows, cols) = (read_u32(r)? as usize, read_u32(r)? as usize);
        let m = into.get_mut(id);
        if m.shape() != (rows, cols) {
            return Err(Error::Format(format!("array {name} is {rows}x{cols}, expected {:?}", m.shape())));
        }
        for v in m.data_mut() {
            *v = read_f64(r)?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, agent: &Agent, echo: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, agent, echo)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, agent: &Agent, echo: &str) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(agent.config()).map_err(|e| Error::Format(e.to_string()))?;
    write_blob(w, &config)?;
    write_blob(w, echo.as_bytes())?;
    w.write_all(&(agent.popart.len() as u32).to_le_bytes())?;
    for s in &agent.popart {
        for v in [s.mu, s.nu, s.sigma, s.beta, s.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    write_set(w, &agent.online)?;
    write_set(w, &agent.target)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: AgentConfig =
        serde_json::from_slice(&read_blob(r)?).map_err(|e| Error::Format(format!("bad config echo: {e}")))?;
    let echo = String::from_utf8(read_blob(r)?).map_err(|_| Error::Format("echo is not UTF-8".into()))?;
    let mut agent = Agent::new(config, 0)?;
    let g = read_u32(r)? as usize;
    if g != agent.popart.len() {
        return Err(Error::Format("normalization statistics do not match the config".into()));
    }
    for s in &mut agent.popart {
        *s = PopArtStats { mu: read_f64(r)?, nu: read_f64(r)?, sigma: read_f64(r)?, beta: read_f64(r)?, eps: read_f64(r)? };
    }
    read_set(r, &mut agent.online)?;
    read_set(r, &mut agent.target)?;
    Ok(Checkpoint { agent, echo })
}
