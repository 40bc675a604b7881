//! Hyperspectral cubes, label grids, their on-disk containers, a synthetic
//! scene generator and classification-map rendering.

mod format;
mod render;
mod synth;

pub use format::{read_cube, read_labels, write_cube, write_labels, CubeHeader, LabelHeader};
pub use render::{default_palette, read_palette, render_map, Palette};
pub use synth::{nearest_mean_accuracy, synth_scene, Bump, ClassSpectrum, SceneSpec};

use crate::error::{Error, Result};

/// A height × width × bands grid stored band-sequentially: the value of band
/// `b` at `(row, col)` lives at `b·H·W + row·W + col`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube<T = f32> {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<T>,
}

impl<T: Copy> HsiCube<T> {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> T {
        self.values[band * self.pixels() + row * self.width + col]
    }

    /// Contiguous plane of one band, row-major.
    pub fn band(&self, band: usize) -> &[T] {
        let p = self.pixels();
        &self.values[band * p..(band + 1) * p]
    }

    /// Spectrum of the pixel at flat index `pixel` (row-major).
    pub fn spectrum(&self, pixel: usize) -> Vec<T> {
        let p = self.pixels();
        (0..self.bands).map(|b| self.values[b * p + pixel]).collect()
    }
}

impl HsiCube<f32> {
    pub fn to_f64(&self) -> HsiCube<f64> {
        HsiCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel class ids, row-major; 0 means unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label grid {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelGrid {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Largest class id present.
    pub fn max_class(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}
