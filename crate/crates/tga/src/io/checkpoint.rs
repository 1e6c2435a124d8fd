//! Versioned binary checkpoint: magic "TGAC", u32 version, named f32 tensor
//! table, trailing CRC32 of all preceding bytes. All integers little-endian.

use std::fs;
use std::path::Path;

use crate::encoders::{DualEncoder, EncoderConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TGAC";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, data: &[f32], shape: &[usize]) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, shape.len() as u32);
    for &d in shape {
        put_u32(buf, d as u32);
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encoder configuration and freeze flags flattened into meta tensors.
fn meta_tensors(model: &DualEncoder) -> Vec<(String, Vec<f32>, Vec<usize>)> {
    let cfg = model.config();
    let config_vec = vec![
        cfg.height as f32,
        cfg.width as f32,
        cfg.channels as f32,
        cfg.patch as f32,
        cfg.embed_dim as f32,
        cfg.blocks as f32,
        cfg.vocab as f32,
        cfg.tau,
    ];
    // u64 seed split into four exact u16 limbs.
    let seed_vec: Vec<f32> = (0..4)
        .map(|i| ((cfg.seed >> (16 * i)) & 0xffff) as f32)
        .collect();
    let frozen_vec = vec![
        model.image_frozen() as u8 as f32,
        model.text_frozen() as u8 as f32,
    ];
    vec![
        ("meta/config".into(), config_vec, vec![8]),
        ("meta/seed".into(), seed_vec, vec![4]),
        ("meta/frozen".into(), frozen_vec, vec![2]),
    ]
}

/// Serialize the model (parameters + config) to `path`.
pub fn checkpoint_save(model: &DualEncoder, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let meta = meta_tensors(model);
    let params = model.named_params();
    put_u32(&mut buf, (meta.len() + params.len()) as u32);
    for (name, data, shape) in &meta {
        put_tensor(&mut buf, name, data, shape);
    }
    for (name, data, shape) in &params {
        put_tensor(&mut buf, name, data, shape);
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(&format!("truncated: {what} exceeds file size")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(count * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Load a model from a checkpoint, rejecting bad magic, unsupported versions,
/// CRC mismatches, and length-arithmetic violations.
pub fn checkpoint_load(path: &Path) -> Result<DualEncoder> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let fail = |reason: &str| Error::Format {
        path: display.clone(),
        reason: reason.into(),
    };
    if bytes.len() < 12 {
        return Err(fail("truncated: shorter than the fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)"));
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual_crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored_crc != actual_crc {
        return Err(fail("corrupted (CRC mismatch)"));
    }
    let mut r = Reader {
        buf: &bytes[..bytes.len() - 4],
        pos: 4,
        path: display.clone(),
    };
    let version = r.u32("version")?;
    if version > VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors: Vec<(String, Vec<f32>, Vec<usize>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| r.fail("tensor name is not UTF-8"))?;
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32("dimension")? as usize;
            numel = numel.saturating_mul(d);
            shape.push(d);
        }
        let data = r.f32s(numel, &format!("payload of {name}"))?;
        tensors.push((name, data, shape));
    }
    if r.pos != r.buf.len() {
        return Err(fail("trailing bytes after the tensor table"));
    }

    let find = |name: &str| -> Result<&(String, Vec<f32>, Vec<usize>)> {
        tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| fail(&format!("missing tensor {name}")))
    };
    let config_vec = &find("meta/config")?.1;
    if config_vec.len() != 8 {
        return Err(fail("meta/config must have 8 entries"));
    }
    let seed_vec = &find("meta/seed")?.1;
    if seed_vec.len() != 4 {
        return Err(fail("meta/seed must have 4 entries"));
    }
    let seed = seed_vec
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &limb)| acc | ((limb as u64) << (16 * i)));
    let cfg = EncoderConfig {
        height: config_vec[0] as usize,
        width: config_vec[1] as usize,
        channels: config_vec[2] as usize,
        patch: config_vec[3] as usize,
        embed_dim: config_vec[4] as usize,
        blocks: config_vec[5] as usize,
        vocab: config_vec[6] as usize,
        tau: config_vec[7],
        seed,
    };
    let frozen_vec = &find("meta/frozen")?.1;
    if frozen_vec.len() != 2 {
        return Err(fail("meta/frozen must have 2 entries"));
    }
    let mut model = DualEncoder::init(cfg)?;
    for (name, data, shape) in &tensors {
        if name.starts_with("meta/") {
            continue;
        }
        model.set_param(name, data.clone(), shape).map_err(|e| Error::Format {
            path: display.clone(),
            reason: format!("parameter {name}: {e}"),
        })?;
    }
    model.set_image_frozen(frozen_vec[0] != 0.0);
    model.set_text_frozen(frozen_vec[1] != 0.0);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> DualEncoder {
        let mut m = DualEncoder::init(EncoderConfig {
            height: 16,
            width: 16,
            channels: 3,
            patch: 4,
            embed_dim: 8,
            blocks: 2,
            vocab: 32,
            tau: 0.07,
            seed: 0xdead_beef_cafe_f00d,
        })
        .unwrap();
        m.set_text_frozen(true);
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tgac");
        let m = model();
        checkpoint_save(&m, &path).unwrap();
        let loaded = checkpoint_load(&path).unwrap();
        assert_eq!(m, loaded);
        // Saving the loaded model reproduces the same bytes.
        let path2 = dir.path().join("model2.tgac");
        checkpoint_save(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgac");
        checkpoint_save(&model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgac");
        checkpoint_save(&model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgac");
        checkpoint_save(&model(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(checkpoint_load(&path).is_err());
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgac");
        checkpoint_save(&model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        // Re-seal the CRC so the version check is what fires.
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }

    #[test]
    fn freeze_flags_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgac");
        let mut m = model();
        m.set_image_frozen(true);
        checkpoint_save(&m, &path).unwrap();
        let loaded = checkpoint_load(&path).unwrap();
        assert!(loaded.image_frozen());
        assert!(loaded.text_frozen());
        assert_eq!(loaded.config().seed, 0xdead_beef_cafe_f00d);
    }
}
