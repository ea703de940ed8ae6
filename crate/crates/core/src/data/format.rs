//! On-disk dataset formats.
//!
//! Binary (`.pord`), integers little-endian:
//!
//! ```text
//! magic          4 bytes  "PORD"
//! version        u16      1
//! obs_dim        u32
//! act_dim        u32
//! n_transitions  u64
//! n_trajectories u64
//! boundaries     n_trajectories x u64   exclusive end index of each trajectory
//! seed           u64
//! name           u32 length + UTF-8 bytes
//! env_id         u32 length + UTF-8 bytes
//! flags          n_transitions x u8     bit 0 done, bit 1 action present
//! payload        n_transitions x (obs_dim + act_dim + 1 + obs_dim) x f64
//!                state, action (zeros when absent), reward, next_state
//! crc32          u32 over every preceding byte
//! ```
//!
//! CSV: header `traj,step,s0..,a0..,r,sp0..,done`; action cells are blank
//! for action-free transitions.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DatasetMeta, TrajectoryDataset, Transition};
use crate::error::{PorError, Result};

const MAGIC: &[u8; 4] = b"PORD";
const VERSION: u16 = 1;
const FLAG_DONE: u8 = 1;
const FLAG_ACTION: u8 = 2;

pub fn encode_dataset(d: &TrajectoryDataset) -> Vec<u8> {
    let stride = 2 * d.obs_dim() + d.act_dim() + 1;
    let mut buf = Vec::with_capacity(64 + d.len() * (1 + 8 * stride));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(d.obs_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(d.act_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(d.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(d.num_trajectories() as u64).to_le_bytes());
    for e in d.trajectory_ends() {
        buf.extend_from_slice(&(*e as u64).to_le_bytes());
    }
    buf.extend_from_slice(&d.meta.seed.to_le_bytes());
    for s in [&d.meta.name, &d.meta.env_id] {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    for t in d.transitions() {
        let mut f = 0;
        if t.done {
            f |= FLAG_DONE;
        }
        if t.action.is_some() {
            f |= FLAG_ACTION;
        }
        buf.push(f);
    }
    let zeros = vec![0.0; d.act_dim()];
    for t in d.transitions() {
        let action = t.action.as_deref().unwrap_or(&zeros);
        for v in t.state.iter().chain(action).chain(std::iter::once(&t.reward)).chain(&t.next_state) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.bytes.len().saturating_sub(self.pos) {
            return Err(PorError::Corrupt {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| PorError::Corrupt {
            offset: at as u64,
            reason: format!("{what} is not UTF-8"),
        })
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TrajectoryDataset> {
    let corrupt = |offset: usize, reason: String| PorError::Corrupt {
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 {
        return Err(corrupt(0, "file shorter than the checksum footer".into()));
    }
    let body_end = bytes.len() - 4;
    let mut r = Reader { bytes: &bytes[..body_end], pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    let obs_dim = r.u32("obs_dim")? as usize;
    let act_dim = r.u32("act_dim")? as usize;
    let n = r.u64("transition count")? as usize;
    let n_traj = r.u64("trajectory count")? as usize;
    let ends = (0..n_traj)
        .map(|_| r.u64("trajectory boundaries").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64("seed")?;
    let name = r.string("name")?;
    let env_id = r.string("env id")?;
    let flags = r.take(n, "flags")?.to_vec();
    let stride = 2 * obs_dim + act_dim + 1;
    let payload = r.f64s(n * stride, "payload")?;
    if r.pos != body_end {
        return Err(corrupt(r.pos, "unexpected bytes before checksum".into()));
    }
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if stored != crc32fast::hash(&bytes[..body_end]) {
        return Err(corrupt(body_end, "checksum mismatch".into()));
    }
    let transitions = payload
        .chunks_exact(stride.max(1))
        .take(n)
        .zip(&flags)
        .map(|(row, &f)| Transition {
            state: row[..obs_dim].to_vec(),
            action: (f & FLAG_ACTION != 0).then(|| row[obs_dim..obs_dim + act_dim].to_vec()),
            reward: row[obs_dim + act_dim],
            next_state: row[obs_dim + act_dim + 1..].to_vec(),
            done: f & FLAG_DONE != 0,
        })
        .collect();
    TrajectoryDataset::from_parts(transitions, ends, obs_dim, act_dim, DatasetMeta { name, env_id, seed })
}

pub fn save_dataset(d: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(d)).map_err(|e| PorError::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PorError::io(path, e))?;
    decode_dataset(&bytes)
}

/// Hex SHA-256 of the binary encoding.
pub fn dataset_hash(d: &TrajectoryDataset) -> String {
    hex::encode(Sha256::digest(encode_dataset(d)))
}

fn csv_err(e: csv::Error) -> PorError {
    PorError::Config(format!("csv: {e}"))
}

pub fn export_csv(d: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["traj".to_string(), "step".to_string()];
    header.extend((0..d.obs_dim()).map(|i| format!("s{i}")));
    header.extend((0..d.act_dim()).map(|i| format!("a{i}")));
    header.push("r".into());
    header.extend((0..d.obs_dim()).map(|i| format!("sp{i}")));
    header.push("done".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, traj) in d.trajectories().enumerate() {
        for (step, t) in traj.iter().enumerate() {
            let mut row = vec![k.to_string(), step.to_string()];
            row.extend(t.state.iter().map(|v| v.to_string()));
            match &t.action {
                Some(a) => row.extend(a.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat(String::new()).take(d.act_dim())),
            }
            row.push(t.reward.to_string());
            row.extend(t.next_state.iter().map(|v| v.to_string()));
            row.push((t.done as u8).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| PorError::io(path, e))
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
            .count()
    };
    let (obs_dim, act_dim) = (count("s"), count("a"));
    let expected = 2 + 2 * obs_dim + act_dim + 2;
    if header.len() != expected || &header[0] != "traj" || &header[1] != "step" {
        return Err(PorError::Config(format!("unexpected csv header: {header:?}")));
    }
    let mut d = TrajectoryDataset::empty(obs_dim, act_dim);
    let mut current: Option<usize> = None;
    let mut traj = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| PorError::Config(format!("csv line {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| rec[i].trim().parse::<f64>().map_err(|_| bad(what));
        let k: usize = rec[0].parse().map_err(|_| bad("traj"))?;
        if current != Some(k) {
            if current.is_some() {
                d.push_trajectory(std::mem::take(&mut traj));
            }
            current = Some(k);
        }
        let state = (0..obs_dim).map(|i| num(2 + i, "state")).collect::<Result<Vec<_>>>()?;
        let a0 = 2 + obs_dim;
        let action = if (0..act_dim).all(|i| rec[a0 + i].trim().is_empty()) && act_dim > 0 {
            None
        } else {
            Some((0..act_dim).map(|i| num(a0 + i, "action")).collect::<Result<Vec<_>>>()?)
        };
        let reward = num(a0 + act_dim, "reward")?;
        let sp0 = a0 + act_dim + 1;
        let next_state = (0..obs_dim).map(|i| num(sp0 + i, "next state")).collect::<Result<Vec<_>>>()?;
        let done = match rec[sp0 + obs_dim].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad("done flag")),
        };
        traj.push(Transition { state, action, reward, next_state, done });
    }
    if current.is_some() {
        d.push_trajectory(traj);
    }
    d.validate()?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryDataset {
        let t = |x: f64, done| Transition::new(vec![x, -x], vec![0.1, 1.0 / 3.0], x * 0.5, vec![x + 1.0, -x - 1.0], done);
        let mut d = TrajectoryDataset::from_trajectories(
            2,
            2,
            vec![vec![t(0.0, false), t(1.0, true)], vec![t(7.25, false)]],
        )
        .unwrap();
        d.meta = DatasetMeta { name: "sample".into(), env_id: "unit".into(), seed: 42 };
        d
    }

    #[test]
    fn binary_round_trip() {
        let d = sample().merged(&sample().without_actions()).unwrap();
        let back = decode_dataset(&encode_dataset(&d)).unwrap();
        assert_eq!(back, d);
        assert_eq!(dataset_hash(&back), dataset_hash(&d));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = encode_dataset(&sample());
        for cut in [3, 20, bytes.len() - 1] {
            let err = decode_dataset(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, PorError::Corrupt { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_dataset(&sample());
        let n = bytes.len();
        bytes[n - 20] ^= 1;
        let err = decode_dataset(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn csv_round_trip_with_action_free_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut d = sample().merged(&sample().without_actions()).unwrap();
        d.meta = DatasetMeta::default();
        export_csv(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("traj,step,s0,s1,a0,a1,r,sp0,sp1,done"));
        assert_eq!(import_csv(&path).unwrap(), d);
    }
}
