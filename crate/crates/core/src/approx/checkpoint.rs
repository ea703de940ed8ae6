//! Model checkpoint files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes   "PORM"
//! version      u16       1
//! head         u8        0 scalar, 1 vector, 2 gaussian
//! layer_norm   u8        0 / 1
//! n_sizes      u32
//! sizes        n_sizes x u32   [input, hidden.., output]
//! n_params     u64
//! params       n_params x f64
//! crc32        u32       over every preceding byte
//! ```
//!
//! Several models can share one file as a bundle: magic "PORB", a u32
//! model count, then each encoded model prefixed by its u64 byte length,
//! and a crc32 over everything before it.
//!
//! The text export carries the same information, one parameter per line,
//! printed with the shortest representation that round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::mlp::{Head, Mlp, MlpSpec};
use crate::error::{PorError, Result};

const MAGIC: &[u8; 4] = b"PORM";
const VERSION: u16 = 1;

pub fn encode_mlp(model: &Mlp) -> Vec<u8> {
    let spec = model.spec();
    let sizes = spec.layer_sizes();
    let mut buf = Vec::with_capacity(32 + 8 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(spec.head.code());
    buf.push(spec.layer_norm as u8);
    buf.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for n in &sizes {
        buf.extend_from_slice(&(*n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PorError::Corrupt {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
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

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let corrupt = |offset: usize, reason: String| PorError::Corrupt {
        offset: offset as u64,
        reason,
    };
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    let head_at = c.pos;
    let head = Head::from_code(c.u8("head")?)
        .ok_or_else(|| corrupt(head_at, "unknown head code".into()))?;
    let layer_norm = c.u8("layer_norm")? != 0;
    let n_sizes = c.u32("size count")? as usize;
    if n_sizes < 2 {
        return Err(corrupt(c.pos - 4, format!("need at least 2 layer sizes, got {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| c.u32("layer size").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec {
        input_dim: sizes[0],
        hidden: sizes[1..n_sizes - 1].to_vec(),
        output_dim: sizes[n_sizes - 1],
        head,
        layer_norm,
    };
    spec.validate()?;
    let count_at = c.pos;
    let n_params = c.u64("parameter count")? as usize;
    if n_params != spec.param_count() {
        return Err(corrupt(
            count_at,
            format!("parameter count {n_params} does not match architecture ({})", spec.param_count()),
        ));
    }
    let params = (0..n_params)
        .map(|_| c.f64("parameters"))
        .collect::<Result<Vec<_>>>()?;
    let body_end = c.pos;
    let crc = c.u32("checksum")?;
    if crc != crc32fast::hash(&bytes[..body_end]) {
        return Err(corrupt(body_end, "checksum mismatch".into()));
    }
    if c.pos != bytes.len() {
        return Err(corrupt(c.pos, "trailing bytes after checksum".into()));
    }
    Mlp::from_params(spec, params)
}

pub fn save_mlp(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mlp(model)).map_err(|e| PorError::io(path, e))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PorError::io(path, e))?;
    decode_mlp(&bytes)
}

const BUNDLE_MAGIC: &[u8; 4] = b"PORB";

pub fn encode_bundle(models: &[&Mlp]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BUNDLE_MAGIC);
    buf.extend_from_slice(&(models.len() as u32).to_le_bytes());
    for m in models {
        let enc = encode_mlp(m);
        buf.extend_from_slice(&(enc.len() as u64).to_le_bytes());
        buf.extend_from_slice(&enc);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<Mlp>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "bundle magic")? != BUNDLE_MAGIC {
        return Err(PorError::Corrupt {
            offset: 0,
            reason: "bad bundle magic".into(),
        });
    }
    let n = c.u32("model count")? as usize;
    let mut models = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        let len = c.u64("model length")? as usize;
        let start = c.pos;
        let body = c.take(len, "model")?;
        models.push(decode_mlp(body).map_err(|e| match e {
            PorError::Corrupt { offset, reason } => PorError::Corrupt {
                offset: offset + start as u64,
                reason,
            },
            other => other,
        })?);
    }
    let body_end = c.pos;
    let crc = c.u32("bundle checksum")?;
    if crc != crc32fast::hash(&bytes[..body_end]) || c.pos != bytes.len() {
        return Err(PorError::Corrupt {
            offset: body_end as u64,
            reason: "bundle checksum mismatch or trailing bytes".into(),
        });
    }
    Ok(models)
}

pub fn save_bundle(models: &[&Mlp], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_bundle(models)).map_err(|e| PorError::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Vec<Mlp>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PorError::io(path, e))?;
    decode_bundle(&bytes)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PorError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn head_name(head: Head) -> &'static str {
    match head {
        Head::Scalar => "scalar",
        Head::Vector => "vector",
        Head::Gaussian => "gaussian",
    }
}

pub fn mlp_to_text(model: &Mlp) -> String {
    let spec = model.spec();
    let mut out = String::new();
    writeln!(out, "# por mlp checkpoint v{VERSION}").unwrap();
    writeln!(out, "head {}", head_name(spec.head)).unwrap();
    writeln!(out, "layer_norm {}", spec.layer_norm).unwrap();
    let sizes: Vec<String> = spec.layer_sizes().iter().map(|n| n.to_string()).collect();
    writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
    writeln!(out, "params {}", model.param_count()).unwrap();
    for p in model.params() {
        writeln!(out, "{p}").unwrap();
    }
    out
}

pub fn mlp_from_text(text: &str) -> Result<Mlp> {
    let bad = |line: usize, msg: &str| PorError::Config(format!("checkpoint text line {}: {msg}", line + 1));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (i, line) = lines.next().ok_or_else(|| bad(0, &format!("missing `{key}`")))?;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| bad(i, &format!("expected `{key}`")))?;
        Ok((i, rest.trim().to_string()))
    };
    let (i, head) = field("head")?;
    let head = match head.as_str() {
        "scalar" => Head::Scalar,
        "vector" => Head::Vector,
        "gaussian" => Head::Gaussian,
        _ => return Err(bad(i, "unknown head")),
    };
    let (i, ln) = field("layer_norm")?;
    let layer_norm = ln.parse::<bool>().map_err(|_| bad(i, "layer_norm must be true/false"))?;
    let (i, sizes) = field("sizes")?;
    let sizes = sizes
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad(i, "bad layer size"))?;
    if sizes.len() < 2 {
        return Err(bad(i, "need at least two sizes"));
    }
    let (i, count) = field("params")?;
    let count = count.parse::<usize>().map_err(|_| bad(i, "bad parameter count"))?;
    let params = lines
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| bad(i, "bad parameter value")))
        .collect::<Result<Vec<_>>>()?;
    if params.len() != count {
        return Err(PorError::Config(format!(
            "checkpoint text declares {count} params but has {}",
            params.len()
        )));
    }
    let n = sizes.len();
    let spec = MlpSpec {
        input_dim: sizes[0],
        hidden: sizes[1..n - 1].to_vec(),
        output_dim: sizes[n - 1],
        head,
        layer_norm,
    };
    Mlp::from_params(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Mlp {
        let spec = MlpSpec::gaussian(4, &[8, 8], 2).with_layer_norm(true);
        Mlp::new(spec, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let m = model();
        let back = decode_mlp(&encode_mlp(&m)).unwrap();
        assert_eq!(back.param_hash(), m.param_hash());
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let m = model();
        let back = mlp_from_text(&mlp_to_text(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bundle_round_trip() {
        let a = model();
        let b = Mlp::new(MlpSpec::scalar(3, &[5]), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode_bundle(&[&a, &b]);
        let back = decode_bundle(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
        let mut broken = bytes.clone();
        broken[20] ^= 1;
        assert!(decode_bundle(&broken).is_err());
        assert!(decode_bundle(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode_mlp(&model());
        let err = decode_mlp(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(matches!(err, PorError::Corrupt { .. }), "{err}");
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode_mlp(&model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_mlp(&bytes), Err(PorError::Corrupt { .. })));
    }
}
