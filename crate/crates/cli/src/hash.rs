//! Content hashing for artifact and config fingerprints (FNV-1a 64,
//! stable across platforms and runs).

use std::path::Path;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn hash_file(path: &Path) -> anyhow::Result<u64> {
    let bytes = std::fs::read(path)
        .map_err(|e| anyhow::anyhow!("hashing {}: {e}", path.display()))?;
    Ok(fnv1a(&bytes))
}

/// Hash of a volume-format stem: header and payload together.
pub fn hash_stem(stem: &Path) -> anyhow::Result<u64> {
    let mut combined = Vec::new();
    for ext in ["json", "raw"] {
        let mut p = stem.as_os_str().to_owned();
        p.push(format!(".{ext}"));
        combined.extend_from_slice(&hash_file(Path::new(&p))?.to_le_bytes());
    }
    Ok(fnv1a(&combined))
}
