use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelGrid};
use crate::error::{Error, Result};

/// Sidecar header of a cube: `<prefix>.hdr.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
}

/// Sidecar header of a label grid: `<prefix>.labels.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelHeader {
    pub height: usize,
    pub width: usize,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_header<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<H> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes `<prefix>.hdr.json` and `<prefix>.raw` (little-endian f32, band-sequential).
pub fn write_cube(prefix: impl AsRef<Path>, cube: &HsiCube<f32>) -> Result<()> {
    let prefix = prefix.as_ref();
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32".into(),
        layout: "bsq".into(),
        endianness: "little".into(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&with_suffix(prefix, ".hdr.json"), json.as_bytes())?;
    let mut payload = Vec::with_capacity(cube.values().len() * 4);
    for v in cube.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&with_suffix(prefix, ".raw"), &payload)
}

pub fn read_cube(prefix: impl AsRef<Path>) -> Result<HsiCube<f32>> {
    let prefix = prefix.as_ref();
    let hdr_path = with_suffix(prefix, ".hdr.json");
    let header: CubeHeader = read_header(&hdr_path)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.layout != "bsq" {
        return Err(Error::Format(format!("unsupported layout {:?}", header.layout)));
    }
    if header.endianness != "little" {
        return Err(Error::Format(format!(
            "unsupported endianness {:?}",
            header.endianness
        )));
    }
    let raw_path = with_suffix(prefix, ".raw");
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.height * header.width * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            raw_path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let cube = HsiCube::new(header.height, header.width, header.bands, values)?;
    if !cube.is_finite() {
        return Err(Error::Data(format!("{}: non-finite values", raw_path.display())));
    }
    Ok(cube)
}

/// Writes `<prefix>.labels.json` and `<prefix>.labels.raw` (little-endian u16, row-major).
pub fn write_labels(prefix: impl AsRef<Path>, grid: &LabelGrid) -> Result<()> {
    let prefix = prefix.as_ref();
    let header = LabelHeader {
        height: grid.height(),
        width: grid.width(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&with_suffix(prefix, ".labels.json"), json.as_bytes())?;
    let payload: Vec<u8> = grid.labels().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&with_suffix(prefix, ".labels.raw"), &payload)
}

pub fn read_labels(prefix: impl AsRef<Path>) -> Result<LabelGrid> {
    let prefix = prefix.as_ref();
    let header: LabelHeader = read_header(&with_suffix(prefix, ".labels.json"))?;
    let raw_path = with_suffix(prefix, ".labels.raw");
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.height * header.width * 2;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            raw_path.display(),
            bytes.len()
        )));
    }
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelGrid::new(header.height, header.width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_payload_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("one");
        write_cube(&prefix, &HsiCube::new(1, 1, 1, vec![2.5f32]).unwrap()).unwrap();
        assert_eq!(fs::read(dir.path().join("one.raw")).unwrap(), [0x00, 0x00, 0x20, 0x40]);
        let hdr: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("one.hdr.json")).unwrap())
                .unwrap();
        assert_eq!(hdr["dtype"], "f32");
        assert_eq!(hdr["layout"], "bsq");
        assert_eq!(hdr["endianness"], "little");
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("c");
        write_cube(&prefix, &HsiCube::new(2, 2, 2, vec![1.0f32; 8]).unwrap()).unwrap();
        let raw = dir.path().join("c.raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..30]).unwrap();
        let msg = read_cube(&prefix).unwrap_err().to_string();
        assert!(msg.contains("expected 32 bytes, found 30"), "{msg}");
    }

    #[test]
    fn unknown_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("c");
        write_cube(&prefix, &HsiCube::new(1, 1, 1, vec![1.0f32]).unwrap()).unwrap();
        let hdr = dir.path().join("c.hdr.json");
        let text = fs::read_to_string(&hdr).unwrap().replace("\"f32\"", "\"f64\"");
        fs::write(&hdr, text).unwrap();
        assert!(matches!(read_cube(&prefix), Err(Error::Format(_))));
    }

    #[test]
    fn label_payload_bytes_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("gt");
        let grid = LabelGrid::new(2, 1, vec![0, 3]).unwrap();
        write_labels(&prefix, &grid).unwrap();
        assert_eq!(
            fs::read(dir.path().join("gt.labels.raw")).unwrap(),
            [0x00, 0x00, 0x03, 0x00]
        );
        assert_eq!(read_labels(&prefix).unwrap(), grid);
        fs::write(dir.path().join("gt.labels.raw"), [0u8; 6]).unwrap();
        assert!(matches!(read_labels(&prefix), Err(Error::Format(_))));
    }
}
