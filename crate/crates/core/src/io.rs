//! Versioned binary containers and atomic file writes.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 0..4         | magic (4 ASCII bytes)            |
//! | 4..8         | format version, `u32`            |
//! | 8..16        | header length `h`, `u64`         |
//! | 16..16+h     | UTF-8 JSON header                |
//! | 16+h..       | raw payload (layout in header)   |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    f.sync_all().map_err(|e| Error::io(tmp, e))?;
    drop(f);
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_container<H: Serialize>(magic: &[u8; 4], version: u32, header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + head.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parse a container, checking magic and version. Returns the header and
/// the payload slice.
pub fn decode_container<'a, H: DeserializeOwned>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    version: u32,
    kind: &'static str,
    path: &Path,
) -> Result<(H, &'a [u8])> {
    let bad = |message: String| Error::Format {
        kind,
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 {
        return Err(bad(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != magic {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found,
            expected: version,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header length {hlen} exceeds file")))?;
    let header = serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(format!("header: {e}")))?;
    Ok((header, &bytes[end..]))
}
