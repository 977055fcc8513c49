//! Binary dataset files.
//!
//! Layout (integers and floats little-endian):
//!
//! ```text
//! "BRLB" | u32 version | u32 len + env name | u64 seed | u64 transition count
//!        | u64 observation dim | u64 num actions | u32 len + policy descriptor
//! records × count:
//!        dim × f64 state | u32 action | f64 reward | dim × f64 next state | u8 done
//! footer:
//!        "CNTS" u64 states u64 actions (states·actions) × u64 counts   (counts known)
//!      | "NOCT"                                                        (otherwise)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{BatchDataset, CountTable, Transition};
use crate::error::{Error, Result};
use crate::nn::snapshot::Cursor;

const MAGIC: &[u8; 4] = b"BRLB";
const VERSION: u32 = 1;
const MAX_STRING: usize = 1 << 16;

pub fn write_dataset<W: Write>(ds: &BatchDataset, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, ds.env_name())?;
    w.write_all(&ds.seed().to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.obs_dim() as u64).to_le_bytes())?;
    w.write_all(&(ds.num_actions() as u64).to_le_bytes())?;
    write_str(&mut w, ds.policy_descriptor())?;
    for t in ds.transitions() {
        for &x in &t.state {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(t.action as u32).to_le_bytes())?;
        w.write_all(&t.reward.to_le_bytes())?;
        for &x in &t.next_state {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[t.done as u8])?;
    }
    match ds.state_action_counts() {
        Ok(counts) => {
            w.write_all(b"CNTS")?;
            w.write_all(&(counts.num_states() as u64).to_le_bytes())?;
            w.write_all(&(counts.num_actions() as u64).to_le_bytes())?;
            for &c in counts.raw() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Err(_) => w.write_all(b"NOCT")?,
    }
    w.flush()?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(c: &mut Cursor<R>, what: &str) -> Result<String> {
    let at = c.offset;
    let len = c.u32(what)? as usize;
    if len > MAX_STRING {
        return Err(Error::format(
            at,
            format!("{what} length {len} is implausible"),
        ));
    }
    let at = c.offset;
    String::from_utf8(c.vec(len, what)?)
        .map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
}

pub fn read_dataset<R: Read>(r: R) -> Result<BatchDataset> {
    let mut c = Cursor::new(BufReader::new(r));
    if &c.bytes::<4>("magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected BRLB"));
    }
    let at = c.offset;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let env_name = read_str(&mut c, "env name")?;
    let seed = c.u64("seed")?;
    let count_at = c.offset;
    let count = c.u64("transition count")? as usize;
    if count == 0 {
        return Err(Error::format(count_at, "dataset declares zero transitions"));
    }
    let at = c.offset;
    let obs_dim = c.u64("observation dim")? as usize;
    if obs_dim == 0 || obs_dim > 1 << 20 {
        return Err(Error::format(
            at,
            format!("implausible observation dim {obs_dim}"),
        ));
    }
    let num_actions = c.u64("action count")? as usize;
    let descriptor = read_str(&mut c, "policy descriptor")?;
    let mut transitions = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let state = (0..obs_dim)
            .map(|_| c.f64("state"))
            .collect::<Result<Vec<_>>>()?;
        let at = c.offset;
        let action = c.u32("action")? as usize;
        if action >= num_actions {
            return Err(Error::format(at, format!("action {action} out of range")));
        }
        let reward = c.f64("reward")?;
        let next_state = (0..obs_dim)
            .map(|_| c.f64("next state"))
            .collect::<Result<Vec<_>>>()?;
        let at = c.offset;
        let done = match c.u8("done flag")? {
            0 => false,
            1 => true,
            v => return Err(Error::format(at, format!("done flag {v} is not 0/1"))),
        };
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            done,
        });
    }
    let footer_at = c.offset;
    let footer = c.bytes::<4>("footer")?;
    let mut ds = BatchDataset::new(
        env_name,
        descriptor,
        seed,
        obs_dim,
        num_actions,
        transitions,
    )
    .map_err(|e| Error::format(footer_at, e.to_string()))?;
    match &footer {
        b"CNTS" => {
            let ns = c.u64("count rows")? as usize;
            let na = c.u64("count columns")? as usize;
            let at = c.offset;
            let stored = (0..ns * na)
                .map(|_| c.u64("count"))
                .collect::<Result<Vec<_>>>()?;
            let table = CountTable::from_raw(ns, na, stored);
            ds = ds
                .with_counts(table)
                .map_err(|_| Error::format(at, "stored counts disagree with the transitions"))?;
        }
        b"NOCT" => {
            if ds.is_tabular() {
                return Err(Error::format(
                    footer_at,
                    "tabular dataset is missing its count table",
                ));
            }
        }
        _ => {
            return Err(Error::format(
                footer_at,
                "expected count footer; declared transition count does not match the records",
            ))
        }
    }
    c.expect_end()?;
    Ok(ds)
}

pub fn save_dataset(ds: &BatchDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, std::fs::File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<BatchDataset> {
    read_dataset(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BatchDataset {
        let t = |s: usize, a: usize, done: bool| Transition {
            state: (0..3).map(|i| (i == s) as u8 as f64).collect(),
            action: a,
            reward: 0.25 * s as f64 - 0.1,
            next_state: (0..3).map(|i| (i == (s + 1) % 3) as u8 as f64).collect(),
            done,
        };
        BatchDataset::new(
            "chain",
            "greedy",
            42,
            3,
            2,
            vec![t(0, 1, false), t(1, 0, false), t(2, 1, true)],
        )
        .unwrap()
    }

    fn bytes(ds: &BatchDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let buf = bytes(&ds);
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn declared_count_too_large() {
        let ds = sample();
        let mut buf = bytes(&ds);
        // transition count sits after magic, version, name (4 + 5 bytes) and seed
        let off = 4 + 4 + 4 + 5 + 8;
        buf[off..off + 8].copy_from_slice(&4u64.to_le_bytes());
        assert!(matches!(
            read_dataset(buf.as_slice()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn declared_count_too_small() {
        let ds = sample();
        let mut buf = bytes(&ds);
        let off = 4 + 4 + 4 + 5 + 8;
        buf[off..off + 8].copy_from_slice(&2u64.to_le_bytes());
        match read_dataset(buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert!(offset > off as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_transitions_rejected() {
        let mut buf = bytes(&sample());
        let off = 4 + 4 + 4 + 5 + 8;
        buf[off..off + 8].copy_from_slice(&0u64.to_le_bytes());
        match read_dataset(buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, off as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let mut buf = bytes(&sample());
        buf[0] = b'X';
        assert!(matches!(
            read_dataset(buf.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
