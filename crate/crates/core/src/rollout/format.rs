//! Binary trajectory format.
//!
//! ```text
//! trajectory := magic "LFTJ" | version u16 | record_count u32 | record*
//! record     := payload_len u32 | payload
//! payload    := obs_len u16 | obs f32[obs_len] | prev_action u16 | prev_reward f32
//!               | flags u8 | episode_index u8 | mask u8 | tag_len u16 | tag utf8
//! ```
//!
//! All integers and floats are little-endian. `prev_action == 0xFFFF` encodes
//! the null action. `flags` bit 0 is the previous-step done flag, bit 1 marks
//! the end of the meta-rollout.

use std::io::{Read, Write};
use std::sync::Arc;

use super::record::{TimestepRecord, Trajectory};
use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"LFTJ";
pub const TRAJECTORY_VERSION: u16 = 1;
pub const NULL_ACTION: u16 = u16::MAX;

const FLAG_DONE: u8 = 1;
const FLAG_TERMINAL: u8 = 2;

pub fn write_trajectory(w: &mut impl Write, traj: &Trajectory) -> Result<()> {
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    let count = u32::try_from(traj.records.len())
        .map_err(|_| Error::Format("too many records".into()))?;
    w.write_all(&count.to_le_bytes())?;
    let mut payload = Vec::new();
    for rec in &traj.records {
        payload.clear();
        encode_record(rec, &mut payload)?;
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    Ok(())
}

fn encode_record(rec: &TimestepRecord, out: &mut Vec<u8>) -> Result<()> {
    let obs_len = u16::try_from(rec.obs.len()).map_err(|_| Error::Format("observation too long".into()))?;
    out.extend_from_slice(&obs_len.to_le_bytes());
    for v in &rec.obs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let action = match rec.prev_action {
        Some(a) if a == NULL_ACTION => return Err(Error::Format("action index 65535 is reserved".into())),
        Some(a) => a,
        None => NULL_ACTION,
    };
    out.extend_from_slice(&action.to_le_bytes());
    out.extend_from_slice(&rec.prev_reward.to_le_bytes());
    let mut flags = 0u8;
    if rec.prev_done {
        flags |= FLAG_DONE;
    }
    if rec.terminal {
        flags |= FLAG_TERMINAL;
    }
    out.push(flags);
    out.push(rec.episode_index);
    out.push(u8::from(rec.objective_mask));
    let tag = rec.env_tag.as_bytes();
    let tag_len = u16::try_from(tag.len()).map_err(|_| Error::Format("env tag too long".into()))?;
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag);
    Ok(())
}

pub fn read_trajectory(r: &mut impl Read) -> Result<Trajectory> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(Error::Format("not a trajectory (bad magic)".into()));
    }
    let version = read_u16(r)?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut last_tag: Option<Arc<str>> = None;
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        let rec = decode_record(&payload, &mut last_tag)?;
        records.push(rec);
    }
    Ok(Trajectory::new(records))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode_record(payload: &[u8], last_tag: &mut Option<Arc<str>>) -> Result<TimestepRecord> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let obs_len = c.u16()? as usize;
    let mut obs = Vec::with_capacity(obs_len);
    for _ in 0..obs_len {
        obs.push(c.f32()?);
    }
    let action = c.u16()?;
    let prev_reward = c.f32()?;
    let flags = c.u8()?;
    let episode_index = c.u8()?;
    let mask = c.u8()?;
    if mask > 1 || flags & !(FLAG_DONE | FLAG_TERMINAL) != 0 {
        return Err(Error::Format("invalid flag byte".into()));
    }
    let tag_len = c.u16()? as usize;
    let tag = std::str::from_utf8(c.take(tag_len)?).map_err(|_| Error::Format("env tag is not UTF-8".into()))?;
    if c.pos != payload.len() {
        return Err(Error::Format("trailing bytes in record".into()));
    }
    // Consecutive records almost always share a tag; share the allocation.
    let env_tag = match last_tag {
        Some(t) if &**t == tag => Arc::clone(t),
        _ => {
            let t: Arc<str> = Arc::from(tag);
            *last_tag = Some(Arc::clone(&t));
            t
        }
    };
    Ok(TimestepRecord {
        obs,
        prev_action: (action != NULL_ACTION).then_some(action),
        prev_reward,
        prev_done: flags & FLAG_DONE != 0,
        terminal: flags & FLAG_TERMINAL != 0,
        episode_index,
        objective_mask: mask == 1,
        env_tag,
    })
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_strategy() -> impl Strategy<Value = TimestepRecord> {
        (
            prop::collection::vec(-1e6f32..1e6, 0..30),
            prop::option::of(0u16..1000),
            -1e4f32..1e4,
            any::<bool>(),
            any::<bool>(),
            any::<u8>(),
            any::<bool>(),
            "[a-z0-9_]{0,12}",
        )
            .prop_map(|(obs, prev_action, prev_reward, prev_done, terminal, episode_index, objective_mask, tag)| {
                TimestepRecord {
                    obs,
                    prev_action,
                    prev_reward,
                    prev_done,
                    terminal,
                    episode_index,
                    objective_mask,
                    env_tag: Arc::from(tag.as_str()),
                }
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(records in prop::collection::vec(record_strategy(), 0..20)) {
            let traj = Trajectory::new(records);
            let mut buf = Vec::new();
            write_trajectory(&mut buf, &traj).unwrap();
            let back = read_trajectory(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, traj);
        }
    }

    #[test]
    fn header_layout() {
        let traj = Trajectory::new(vec![TimestepRecord {
            obs: vec![1.5],
            prev_action: None,
            prev_reward: 0.0,
            prev_done: false,
            terminal: true,
            episode_index: 2,
            objective_mask: true,
            env_tag: Arc::from("ab"),
        }]);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        assert_eq!(&buf[..4], b"LFTJ");
        assert_eq!(&buf[4..6], &1u16.to_le_bytes());
        assert_eq!(&buf[6..10], &1u32.to_le_bytes());
        // payload: 2 + 4 + 2 + 4 + 1 + 1 + 1 + 2 + 2
        assert_eq!(&buf[10..14], &19u32.to_le_bytes());
        let p = &buf[14..];
        assert_eq!(&p[6..8], &NULL_ACTION.to_le_bytes());
        assert_eq!(p[12], FLAG_TERMINAL);
        assert_eq!(p[13], 2);
        assert_eq!(p[14], 1);
        assert_eq!(&p[17..19], b"ab");
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_trajectory(&mut &b"XXXX\x01\x00\x00\x00\x00\x00"[..]).is_err());
        let traj = Trajectory::new(vec![TimestepRecord {
            obs: vec![],
            prev_action: Some(3),
            prev_reward: 1.0,
            prev_done: true,
            terminal: false,
            episode_index: 0,
            objective_mask: false,
            env_tag: Arc::from("x"),
        }]);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_trajectory(&mut buf.as_slice()).is_err());
    }
}
