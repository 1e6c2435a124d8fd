//! Attention-map export: 8-bit binary portable graymap plus a sidecar text
//! file carrying the map's provenance tags.

use std::fs;
use std::path::Path;

use crate::attention::{AttentionKind, AttentionMap, InputKind, ModelSource};
use crate::error::{Error, Result};

fn kind_name(kind: AttentionKind) -> &'static str {
    match kind {
        AttentionKind::Class => "class",
        AttentionKind::NonClass => "non_class",
        AttentionKind::Complementary => "complementary",
    }
}

fn source_name(source: ModelSource) -> &'static str {
    match source {
        ModelSource::OriginalModel => "original_model",
        ModelSource::TargetModel => "target_model",
    }
}

fn input_name(input: InputKind) -> &'static str {
    match input {
        InputKind::Clean => "clean",
        InputKind::Adversarial => "adversarial",
    }
}

/// Write `map` as a binary PGM (pixel = round-half-up of v*255) and a
/// `.txt` sidecar recording class, kind, source, and input kind.
pub fn export_attention(map: &AttentionMap, path: &Path) -> Result<()> {
    let (h, w) = (map.height(), map.width());
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(map.grid().data().iter().map(|&v| (v * 255.0 + 0.5).floor() as u8));
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let meta = map.meta();
    let sidecar = format!(
        "class_id={}\nkind={}\nsource={}\ninput_kind={}\n",
        meta.class_id,
        kind_name(meta.kind),
        source_name(meta.source),
        input_name(meta.input_kind),
    );
    let sidecar_path = path.with_extension("txt");
    fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(&sidecar_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::MapMeta;
    use crate::tensor::Tensor;

    fn map(data: Vec<f32>) -> AttentionMap {
        AttentionMap::new(
            Tensor::new(data, &[2, 2]).unwrap(),
            MapMeta {
                class_id: 3,
                kind: AttentionKind::Complementary,
                source: ModelSource::TargetModel,
                input_kind: InputKind::Adversarial,
            },
        )
        .unwrap()
    }

    #[test]
    fn pixel_values_round_half_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        export_attention(&map(vec![0.0, 1.0, 0.5, 0.25]), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        // 0.5 * 255 = 127.5 rounds half-up to 128.
        assert_eq!(&bytes[header.len()..], &[0u8, 255, 128, 64]);
    }

    #[test]
    fn extreme_maps_hit_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        export_attention(&map(vec![0.0; 4]), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes[bytes.len() - 4..].iter().all(|&b| b == 0));

        export_attention(&map(vec![1.0; 4]), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes[bytes.len() - 4..].iter().all(|&b| b == 255));
    }

    #[test]
    fn sidecar_records_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        export_attention(&map(vec![0.5; 4]), &path).unwrap();
        let sidecar = fs::read_to_string(dir.path().join("map.txt")).unwrap();
        assert!(sidecar.contains("class_id=3"));
        assert!(sidecar.contains("kind=complementary"));
        assert!(sidecar.contains("source=target_model"));
        assert!(sidecar.contains("input_kind=adversarial"));
    }
}
