//! On-disk volume format.
//!
//! A volume is a pair of files sharing a stem: `<stem>.json` holds the
//! header with exactly the keys `dims`, `spacing`, `dtype`, `order` and
//! `endian`; `<stem>.raw` holds the payload in z-major order,
//! little-endian, with no padding. Scalar volumes use dtype `float32`,
//! label maps `uint8`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, Volume3D};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [u64; 3],
    spacing: [f32; 3],
    dtype: String,
    order: String,
    endian: String,
}

fn header_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn raw_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".raw");
    PathBuf::from(p)
}

/// Byte offset of a (line, column) position in `text`; both 1-based as
/// reported by the JSON parser.
fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut current_line = 1usize;
    let mut offset = 0usize;
    for (i, &b) in text.iter().enumerate() {
        if current_line == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            current_line += 1;
        }
    }
    (offset + column.saturating_sub(1)).min(text.len())
}

fn read_header(stem: &Path) -> Result<Header> {
    let hp = header_path(stem);
    let bytes = fs::read(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: hp.clone(),
        offset: byte_offset(&bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if header.endian != "little" {
        return Err(Error::UnsupportedEncoding {
            path: hp,
            what: format!("endian `{}` (only `little` is supported)", header.endian),
        });
    }
    if header.order != "zyx" {
        return Err(Error::UnsupportedEncoding {
            path: hp,
            what: format!("order `{}` (only `zyx` is supported)", header.order),
        });
    }
    if header.dtype != "float32" && header.dtype != "uint8" {
        return Err(Error::UnsupportedEncoding {
            path: hp,
            what: format!("dtype `{}`", header.dtype),
        });
    }
    Ok(header)
}

fn read_payload(stem: &Path, header: &Header, bytes_per_voxel: u64) -> Result<Vec<u8>> {
    let rp = raw_path(stem);
    let payload = fs::read(&rp).map_err(|e| Error::io(&rp, e))?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2] * bytes_per_voxel;
    if payload.len() as u64 != expected {
        return Err(Error::Truncated {
            path: rp,
            expected,
            found: payload.len() as u64,
        });
    }
    Ok(payload)
}

/// Reads a float32 volume from `<stem>.json` + `<stem>.raw`.
pub fn read_volume(stem: &Path) -> Result<Volume3D<f32>> {
    let header = read_header(stem)?;
    if header.dtype != "float32" {
        return Err(Error::UnsupportedEncoding {
            path: header_path(stem),
            what: format!("dtype `{}` where float32 volume expected", header.dtype),
        });
    }
    let payload = read_payload(stem, &header, 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new(
        (header.dims[0] as usize, header.dims[1] as usize, header.dims[2] as usize),
        (header.spacing[0], header.spacing[1], header.spacing[2]),
        data,
    )
}

/// Writes a float32 volume as `<stem>.json` + `<stem>.raw`.
pub fn write_volume(volume: &Volume3D<f32>, stem: &Path) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let dims = volume.dims();
    let spacing = volume.spacing();
    let header = Header {
        dims: [dims.0 as u64, dims.1 as u64, dims.2 as u64],
        spacing: [spacing.0, spacing.1, spacing.2],
        dtype: "float32".into(),
        order: "zyx".into(),
        endian: "little".into(),
    };
    let hp = header_path(stem);
    let text = serde_json::to_string(&header).map_err(|e| Error::Json {
        path: hp.clone(),
        message: e.to_string(),
    })?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))?;
    let mut payload = Vec::with_capacity(volume.len() * 4);
    for v in volume.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let rp = raw_path(stem);
    fs::write(&rp, payload).map_err(|e| Error::io(&rp, e))?;
    Ok(())
}

/// Reads a uint8 label map. When `num_classes` is `None` it is inferred as
/// `max(label) + 1`, floored at 2.
pub fn read_label_map(stem: &Path, num_classes: Option<usize>) -> Result<LabelMap> {
    let header = read_header(stem)?;
    if header.dtype != "uint8" {
        return Err(Error::UnsupportedEncoding {
            path: header_path(stem),
            what: format!("dtype `{}` where uint8 label map expected", header.dtype),
        });
    }
    let payload = read_payload(stem, &header, 1)?;
    let c = num_classes.unwrap_or_else(|| {
        let max = payload.iter().copied().max().unwrap_or(0) as usize;
        (max + 1).max(2)
    });
    LabelMap::new(
        (header.dims[0] as usize, header.dims[1] as usize, header.dims[2] as usize),
        c,
        payload,
    )
}

/// Writes a uint8 label map as `<stem>.json` + `<stem>.raw`.
pub fn write_label_map(labels: &LabelMap, spacing: (f32, f32, f32), stem: &Path) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let dims = labels.dims();
    let header = Header {
        dims: [dims.0 as u64, dims.1 as u64, dims.2 as u64],
        spacing: [spacing.0, spacing.1, spacing.2],
        dtype: "uint8".into(),
        order: "zyx".into(),
        endian: "little".into(),
    };
    let hp = header_path(stem);
    let text = serde_json::to_string(&header).map_err(|e| Error::Json {
        path: hp.clone(),
        message: e.to_string(),
    })?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))?;
    let rp = raw_path(stem);
    fs::write(&rp, labels.labels()).map_err(|e| Error::io(&rp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp_stem(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("adaseg-format-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..512).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v = Volume3D::new((8, 8, 8), (1.5, 1.0, 1.0), data).unwrap();
        let stem = tmp_stem("rt");
        write_volume(&v, &stem).unwrap();
        let back = read_volume(&stem).unwrap();
        let orig: Vec<[u8; 4]> = v.data().iter().map(|f| f.to_le_bytes()).collect();
        let read: Vec<[u8; 4]> = back.data().iter().map(|f| f.to_le_bytes()).collect();
        assert_eq!(orig, read);
        assert_eq!(v.dims(), back.dims());
        assert_eq!(v.spacing(), back.spacing());
    }

    #[test]
    fn truncated_payload_is_detected() {
        let stem = tmp_stem("trunc");
        fs::write(
            header_path(&stem),
            r#"{"dims":[2,2,2],"spacing":[1.0,1.0,1.0],"dtype":"float32","order":"zyx","endian":"little"}"#,
        )
        .unwrap();
        fs::write(raw_path(&stem), vec![0u8; 31]).unwrap();
        let err = read_volume(&stem).unwrap_err();
        match err {
            Error::Truncated { expected, found, .. } => {
                assert_eq!(expected, 32);
                assert_eq!(found, 31);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn big_endian_is_rejected() {
        let stem = tmp_stem("be");
        fs::write(
            header_path(&stem),
            r#"{"dims":[1,1,1],"spacing":[1.0,1.0,1.0],"dtype":"float32","order":"zyx","endian":"big"}"#,
        )
        .unwrap();
        fs::write(raw_path(&stem), vec![0u8; 4]).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::UnsupportedEncoding { .. })));
    }

    #[test]
    fn malformed_header_reports_byte_offset() {
        let stem = tmp_stem("bad");
        fs::write(header_path(&stem), r#"{"dims":[1,1,1],"#).unwrap();
        fs::write(raw_path(&stem), vec![0u8; 4]).unwrap();
        match read_volume(&stem).unwrap_err() {
            Error::Parse { offset, .. } => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_round_trip_and_inference() {
        let labels = LabelMap::new((2, 2, 2), 3, vec![0, 1, 2, 0, 1, 2, 0, 0]).unwrap();
        let stem = tmp_stem("lbl");
        write_label_map(&labels, (1.0, 1.0, 1.0), &stem).unwrap();
        let back = read_label_map(&stem, None).unwrap();
        assert_eq!(back.labels(), labels.labels());
        assert_eq!(back.num_classes(), 3);
    }
}
