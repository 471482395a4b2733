//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MTGN"  u32 version  [32] config digest  u32 block count
//! per block: u32 name length, name (UTF-8), u64 rows, u64 cols, rows*cols f64
//! [32] SHA-256 of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use condgan_core::numerics::{AdamState, ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"MTGN";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub blocks: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(self.path, "truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn corrupt(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Corrupt { path: path.to_string(), msg: msg.into() }
}

impl Checkpoint {
    pub fn new(digest: [u8; 32]) -> Self {
        Checkpoint { digest, blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.blocks.push((name.into(), t));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, Tensor::filled(1, 1, v));
    }

    pub fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, Tensor::row_vector(v.to_vec()));
    }

    /// Stores every parameter value as `prefix + name`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamStore) {
        for (name, p) in params.iter() {
            self.push(format!("{prefix}{name}"), p.value.clone());
        }
    }

    /// Stores optimizer moments and step count under `prefix`.
    pub fn push_adam(&mut self, prefix: &str, params: &ParamStore, opt: &AdamState) {
        self.push_scalar(format!("{prefix}step"), opt.step as f64);
        for ((name, _), (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
            self.push(format!("{prefix}m.{name}"), m.clone());
            self.push(format!("{prefix}v.{name}"), v.clone());
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> CliResult<&Tensor> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CliError::Config(format!("checkpoint has no block `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> CliResult<f64> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(CliError::Config(format!("block `{name}` is not a scalar")));
        }
        Ok(t.as_slice()[0])
    }

    pub fn count(&self, name: &str) -> CliResult<usize> {
        let v = self.scalar(name)?;
        if !(v >= 0.0 && v.fract() == 0.0) {
            return Err(CliError::Config(format!("block `{name}` is not a count")));
        }
        Ok(v as usize)
    }

    pub fn vec(&self, name: &str) -> CliResult<Vec<f64>> {
        Ok(self.get(name)?.as_slice().to_vec())
    }

    fn tensor_like(&self, name: &str, like: &Tensor) -> CliResult<Tensor> {
        let t = self.get(name)?;
        if t.shape() != like.shape() {
            return Err(CliError::Config(format!("block `{name}` is {:?}, expected {:?}", t.shape(), like.shape())));
        }
        Ok(t.clone())
    }

    /// Overwrites every parameter of `params` from `prefix + name` blocks.
    pub fn load_params(&self, prefix: &str, params: &mut ParamStore) -> CliResult<()> {
        for (name, p) in params.iter_mut() {
            p.value = self.tensor_like(&format!("{prefix}{name}"), &p.value)?;
        }
        Ok(())
    }

    pub fn load_adam(&self, prefix: &str, params: &ParamStore, opt: &mut AdamState) -> CliResult<()> {
        opt.step = self.count(&format!("{prefix}step"))? as u64;
        for (i, (name, p)) in params.iter().enumerate() {
            opt.m[i] = self.tensor_like(&format!("{prefix}m.{name}"), &p.value)?;
            opt.v[i] = self.tensor_like(&format!("{prefix}v.{name}"), &p.value)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    /// Parses and verifies a checkpoint. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &str) -> CliResult<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 + 4 + CHECKSUM_LEN {
            return Err(corrupt(path, "file too short"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt(path, "checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(corrupt(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(path, format!("unsupported format version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt(path, "block name is not UTF-8"))?.to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let count = rows.checked_mul(cols).filter(|c| c.checked_mul(8).is_some()).ok_or_else(|| corrupt(path, "block too large"))?;
            let raw = r.take(count * 8)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::from_vec(rows, cols, values).map_err(|e| corrupt(path, e.to_string()))?;
            blocks.push((name, t));
        }
        if r.pos != body.len() {
            return Err(corrupt(path, "trailing bytes after the last block"));
        }
        Ok(Checkpoint { digest, blocks })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Loads and verifies `path`; with `expected` set, a different config
    /// digest is refused.
    pub fn load(path: &Path, expected: Option<&[u8; 32]>) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(format!("reading checkpoint {}", path.display())))?;
        let ck = Self::from_bytes(&bytes, &path.display().to_string())?;
        if let Some(d) = expected {
            if &ck.digest != d {
                return Err(CliError::Config(format!(
                    "checkpoint {} was written under a different configuration (digest {} vs {})",
                    path.display(),
                    hex(&ck.digest),
                    hex(d)
                )));
            }
        }
        Ok(ck)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Temp file in the same directory, flushed and synced, then renamed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let io = CliError::io(format!("writing {}", path.display()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new([7; 32]);
        c.push("a", Tensor::from_vec(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap());
        c.push_scalar("meta.epoch", 4.0);
        c.push_vec("log", &[]);
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("a").unwrap().as_slice()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.count("meta.epoch").unwrap(), 4);
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"MTGN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(&bytes[8..40], &[7; 32]);
        // first block: name "a", 2x3 values
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[44..48].try_into().unwrap()), 1);
        assert_eq!(bytes[48], b'a');
        assert_eq!(u64::from_le_bytes(bytes[49..57].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[65..73].try_into().unwrap()), 1.0);
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = sample().to_bytes();
        for i in [0, 5, 20, 50, bytes.len() - 1] {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(Checkpoint::from_bytes(&b, "mem"), Err(CliError::Corrupt { .. })), "byte {i}");
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "mem"), Err(CliError::Corrupt { .. })));
    }

    #[test]
    fn unknown_version_is_refused() {
        let mut body = sample().to_bytes();
        body.truncate(body.len() - CHECKSUM_LEN);
        body[4] = 9;
        let sum = Sha256::digest(&body);
        body.extend_from_slice(&sum);
        let err = Checkpoint::from_bytes(&body, "mem").unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn digest_mismatch_is_refused_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        sample().save(&p).unwrap();
        assert!(Checkpoint::load(&p, Some(&[7; 32])).is_ok());
        assert!(matches!(Checkpoint::load(&p, Some(&[8; 32])), Err(CliError::Config(_))));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        sample().save(&p).unwrap();
        Checkpoint::load(&p, None).unwrap().save(&q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().filter_map(Result::ok).filter(|e| e.file_name().to_string_lossy().contains(".tmp-")).collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn params_and_optimizer_round_trip() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::from_vec(1, 2, vec![0.5, -1.5]).unwrap()).unwrap();
        let mut opt = AdamState::new(&params, condgan_core::numerics::AdamConfig::with_lr(0.1));
        opt.step = 3;
        opt.m[0].as_mut_slice()[1] = 0.25;
        let mut c = Checkpoint::new([0; 32]);
        c.push_params("g.", &params);
        c.push_adam("opt.", &params, &opt);
        let mut p2 = params.clone();
        p2.iter_mut().for_each(|(_, p)| p.value.fill(0.0));
        let mut o2 = AdamState::new(&p2, opt.config);
        c.load_params("g.", &mut p2).unwrap();
        c.load_adam("opt.", &p2, &mut o2).unwrap();
        assert_eq!(p2.max_abs_diff(&params).unwrap(), 0.0);
        assert_eq!((o2.step, o2.m[0].as_slice()[1]), (3, 0.25));
    }
}
