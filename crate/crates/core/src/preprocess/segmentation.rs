use crate::error::{Error, Result};

/// A partition of the image grid into superpixels `0..count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    /// Sorted ids of superpixels sharing a grid edge with each superpixel.
    neighbors: Vec<Vec<usize>>,
    /// Flat (row-major) pixel indices of each superpixel, ascending.
    pixels: Vec<Vec<usize>>,
}

impl Segmentation {
    /// Builds a segmentation from a per-pixel id grid whose ids must cover
    /// `0..n` without gaps.
    pub fn from_labels(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label grid {height}x{width} has {} entries",
                labels.len()
            )));
        }
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut pixels = vec![Vec::new(); count];
        for (p, &l) in labels.iter().enumerate() {
            pixels[l].push(p);
        }
        if let Some(empty) = pixels.iter().position(|v| v.is_empty()) {
            return Err(Error::Contract(format!("superpixel {empty} has no pixels")));
        }
        let mut neighbors = vec![Vec::new(); count];
        for r in 0..height {
            for c in 0..width {
                let a = labels[r * width + c];
                let mut link = |b: usize| {
                    if a != b {
                        neighbors[a].push(b);
                        neighbors[b].push(a);
                    }
                };
                if c + 1 < width {
                    link(labels[r * width + c + 1]);
                }
                if r + 1 < height {
                    link(labels[(r + 1) * width + c]);
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(Segmentation {
            height,
            width,
            labels,
            neighbors,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.pixels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[id]
    }

    pub fn neighbor_sets(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn pixels(&self, id: usize) -> &[usize] {
        &self.pixels[id]
    }

    /// True when every superpixel is a single 4-connected region.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.labels.len()];
        for id in 0..self.count() {
            let start = self.pixels[id][0];
            let mut stack = vec![start];
            seen[start] = true;
            let mut reached = 0;
            while let Some(p) = stack.pop() {
                reached += 1;
                let (r, c) = (p / self.width, p % self.width);
                let mut visit = |q: usize| {
                    if !seen[q] && self.labels[q] == id {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if r > 0 {
                    visit(p - self.width);
                }
                if r + 1 < self.height {
                    visit(p + self.width);
                }
                if c > 0 {
                    visit(p - 1);
                }
                if c + 1 < self.width {
                    visit(p + 1);
                }
            }
            if reached != self.pixels[id].len() {
                return false;
            }
        }
        true
    }
}
