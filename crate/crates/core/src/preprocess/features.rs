use super::Segmentation;
use crate::dataio::HsiCube;
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Superpixel features: row `j` is the mean spectrum of superpixel `j`, so
/// column `i` collects band `i` across all superpixels.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    pub x: Matrix,
}

impl NodeFeatures {
    pub fn nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn bands(&self) -> usize {
        self.x.cols()
    }

    /// Band `i` over all superpixels, as an n × 1 column.
    pub fn band_column(&self, band: usize) -> Matrix {
        Matrix::from_fn(self.x.rows(), 1, |r, _| self.x.get(r, band))
    }

    /// Spectrum of superpixel `j`, as an s × 1 column.
    pub fn spectrum_column(&self, node: usize) -> Matrix {
        Matrix::column(self.x.row(node))
    }
}

pub fn superpixel_features(reduced: &HsiCube<f64>, seg: &Segmentation) -> Result<NodeFeatures> {
    if (reduced.height(), reduced.width()) != (seg.height(), seg.width()) {
        return Err(Error::Shape(format!(
            "segmentation {}x{} does not cover cube {}x{}",
            seg.height(),
            seg.width(),
            reduced.height(),
            reduced.width()
        )));
    }
    let bands = reduced.bands();
    let mut x = Matrix::zeros(seg.count(), bands);
    for j in 0..seg.count() {
        let members = seg.pixels(j);
        if members.is_empty() {
            return Err(Error::Contract(format!("superpixel {j} is empty")));
        }
        for b in 0..bands {
            let plane = reduced.band(b);
            let sum: f64 = members.iter().map(|&p| plane[p]).sum();
            x.set(j, b, sum / members.len() as f64);
        }
    }
    Ok(NodeFeatures { x })
}
