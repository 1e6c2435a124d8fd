//! Dataset file: magic "TGAD", u32 version, then count/C/H/W as u32,
//! f32 LE images, u32 LE labels, u8 masks. Payload length must match the
//! header arithmetic exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::Example;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TGAD";
const VERSION: u32 = 1;

pub fn dataset_save(data: &[Example], path: &Path) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let shape = data[0].image.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [data.len(), c, h, w] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for ex in data {
        if ex.image.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "dataset_save",
                expected: format!("{shape:?}"),
                got: format!("{:?}", ex.image.shape()),
            });
        }
        for &v in ex.image.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for ex in data {
        buf.extend_from_slice(&(ex.label as u32).to_le_bytes());
    }
    for ex in data {
        buf.extend_from_slice(&ex.mask);
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn dataset_load(path: &Path) -> Result<Vec<Example>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let fail = |reason: String| Error::Format {
        path: display.clone(),
        reason,
    };
    if bytes.len() < 24 {
        return Err(fail("truncated: shorter than the fixed header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("not a dataset file (bad magic)".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version > VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let count = u32_at(8) as usize;
    let c = u32_at(12) as usize;
    let h = u32_at(16) as usize;
    let w = u32_at(20) as usize;
    let pixels = c * h * w;
    let expected = 24 + count * pixels * 4 + count * 4 + count * h * w;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload length {} does not match header arithmetic {expected}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let images_off = 24;
    let labels_off = images_off + count * pixels * 4;
    let masks_off = labels_off + count * 4;
    for i in 0..count {
        let img_start = images_off + i * pixels * 4;
        let data: Vec<f32> = bytes[img_start..img_start + pixels * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let label = u32_at(labels_off + i * 4) as usize;
        let mask = bytes[masks_off + i * h * w..masks_off + (i + 1) * h * w].to_vec();
        if mask.iter().any(|&m| m > 1) {
            return Err(fail(format!("example {i}: mask values must be 0 or 1")));
        }
        if !mask.iter().any(|&m| m == 1) {
            return Err(fail(format!("example {i}: mask has no foreground pixel")));
        }
        out.push(Example {
            image: Tensor::new(data, &[c, h, w])?,
            label,
            mask,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{gen_synthetic, DatasetSpec, ShapeKind};

    fn sample() -> Vec<Example> {
        gen_synthetic(&DatasetSpec {
            seed: 13,
            n: 9,
            classes: vec![ShapeKind::Disk, ShapeKind::Cross],
            noise: 0.1,
            channels: 3,
            height: 16,
            width: 16,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tgad");
        let data = sample();
        dataset_save(&data, &path).unwrap();
        let loaded = dataset_load(&path).unwrap();
        assert_eq!(data, loaded);
        // Second save is byte-identical.
        let path2 = dir.path().join("d2.tgad");
        dataset_save(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tgad");
        dataset_save(&sample(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[1] = b'?';
        fs::write(&path, &bad).unwrap();
        assert!(dataset_load(&path).unwrap_err().to_string().contains("magic"));

        fs::write(&path, &good[..good.len() - 5]).unwrap();
        let err = dataset_load(&path).unwrap_err();
        assert!(err.to_string().contains("header arithmetic"), "{err}");
    }
}
