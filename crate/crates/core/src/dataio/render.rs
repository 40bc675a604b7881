use std::collections::BTreeMap;
use std::path::Path;

use super::LabelGrid;
use crate::error::{Error, Result};

/// Class id → RGB. Class 0 (unlabeled) always renders black.
pub type Palette = BTreeMap<u16, [u8; 3]>;

/// Reads a JSON palette of the form `{"1": [255, 0, 0], ...}`.
pub fn read_palette(path: impl AsRef<Path>) -> Result<Palette> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, [u8; 3]> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u16>()
                .map(|id| (id, v))
                .map_err(|_| Error::Format(format!("palette key {k:?} is not a class id")))
        })
        .collect()
}

/// A fixed, well-separated palette for classes `1..=classes`.
pub fn default_palette(classes: u16) -> Palette {
    const BASE: [[u8; 3]; 16] = [
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
        [176, 48, 96],
        [46, 139, 87],
        [160, 32, 240],
        [255, 127, 80],
        [127, 255, 212],
        [218, 112, 214],
        [160, 82, 45],
        [127, 255, 0],
        [216, 191, 216],
        [238, 154, 0],
    ];
    (1..=classes)
        .map(|c| {
            let base = BASE[(c as usize - 1) % BASE.len()];
            // Darken on wrap-around so repeated hues stay distinguishable.
            let shade = 1 + (c as usize - 1) / BASE.len();
            (c, base.map(|v| (v as usize / shade) as u8))
        })
        .collect()
}

/// Binary PPM (P6): `"P6\n<w> <h>\n255\n"` followed by row-major RGB triples.
pub fn render_map(pred: &LabelGrid, palette: &Palette) -> Result<Vec<u8>> {
    let header = format!("P6\n{} {}\n255\n", pred.width(), pred.height());
    let mut out = Vec::with_capacity(header.len() + 3 * pred.labels().len());
    out.extend_from_slice(header.as_bytes());
    for &class in pred.labels() {
        let rgb = if class == 0 {
            [0, 0, 0]
        } else {
            *palette
                .get(&class)
                .ok_or_else(|| Error::Config(format!("palette has no entry for class {class}")))?
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_golden_bytes() {
        let grid = LabelGrid::new(1, 1, vec![1]).unwrap();
        let palette = Palette::from([(1, [255, 0, 0])]);
        let bytes = render_map(&grid, &palette).unwrap();
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend_from_slice(&[0xFF, 0x00, 0x00]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn unlabeled_is_black_and_size_exact() {
        let grid = LabelGrid::new(3, 4, vec![0; 12]).unwrap();
        let bytes = render_map(&grid, &Palette::new()).unwrap();
        let header = b"P6\n4 3\n255\n".len();
        assert_eq!(bytes.len(), header + 3 * 12);
        assert!(bytes[header..].iter().all(|&b| b == 0));
    }

    #[test]
    fn missing_entry_is_config_error() {
        let grid = LabelGrid::new(1, 2, vec![1, 2]).unwrap();
        let palette = Palette::from([(1, [1, 2, 3])]);
        assert!(matches!(render_map(&grid, &palette), Err(Error::Config(_))));
    }

    #[test]
    fn palette_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"1": [255, 0, 0], "7": [1, 2, 3]}"#).unwrap();
        let p = read_palette(&path).unwrap();
        assert_eq!(p[&7], [1, 2, 3]);
        assert_eq!(default_palette(3).len(), 3);
    }
}
