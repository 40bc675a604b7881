use super::Segmentation;
use crate::dataio::LabelGrid;
use crate::error::{Error, Result};
use crate::ndmath::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitParams {
    /// Training pixels drawn per class.
    pub per_class: usize,
    /// Training pixels drawn for classes with fewer than `per_class` pixels.
    pub small_class: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            per_class: 30,
            small_class: 15,
        }
    }
}

/// Train/test assignment at pixel level and the resulting node labels.
///
/// Classes are 0-based here (`class id - 1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeLabels {
    pub classes: usize,
    /// Majority training class of each superpixel, if it holds training pixels.
    pub node_label: Vec<Option<usize>>,
    pub train_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    /// Flat pixel indices per class.
    pub train_pixels: Vec<Vec<usize>>,
    pub test_pixels: Vec<Vec<usize>>,
}

impl NodeLabels {
    /// `(node, class)` pairs for every training node.
    pub fn training_targets(&self) -> Vec<(usize, usize)> {
        self.node_label
            .iter()
            .enumerate()
            .filter(|(j, _)| self.train_mask[*j])
            .filter_map(|(j, l)| l.map(|c| (j, c)))
            .collect()
    }

    pub fn test_pixel_count(&self) -> usize {
        self.test_pixels.iter().map(Vec::len).sum()
    }
}

/// Samples training pixels per class without replacement, then labels each
/// superpixel holding training pixels by majority vote (smallest class wins
/// ties). Every other labeled pixel is a test pixel.
pub fn split_and_label(
    seg: &Segmentation,
    truth: &LabelGrid,
    params: &SplitParams,
    seed: u64,
) -> Result<NodeLabels> {
    if (truth.height(), truth.width()) != (seg.height(), seg.width()) {
        return Err(Error::Shape("ground truth and segmentation dimensions differ".into()));
    }
    let classes = truth.max_class() as usize;
    if classes == 0 {
        return Err(Error::Config("ground truth has no labeled pixels".into()));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (p, &l) in truth.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(p);
        }
    }
    let short: Vec<String> = by_class
        .iter()
        .enumerate()
        .filter(|(_, px)| px.len() < params.small_class)
        .map(|(c, px)| format!("class {} ({} pixels)", c + 1, px.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::Config(format!(
            "fewer than {} labeled pixels: {}",
            params.small_class,
            short.join(", ")
        )));
    }

    let mut rng = Rng::new(seed).derive(0x5_911_7);
    let mut is_train = vec![false; truth.labels().len()];
    let mut train_pixels = Vec::with_capacity(classes);
    let mut test_pixels = Vec::with_capacity(classes);
    for pixels in &by_class {
        let take = if pixels.len() >= params.per_class {
            params.per_class
        } else {
            params.small_class
        };
        let mut shuffled = pixels.clone();
        rng.shuffle(&mut shuffled);
        let mut train: Vec<usize> = shuffled[..take].to_vec();
        train.sort_unstable();
        for &p in &train {
            is_train[p] = true;
        }
        test_pixels.push(pixels.iter().copied().filter(|&p| !is_train[p]).collect());
        train_pixels.push(train);
    }

    let n = seg.count();
    let mut votes = vec![vec![0usize; classes]; n];
    for (c, pixels) in train_pixels.iter().enumerate() {
        for &p in pixels {
            votes[seg.labels()[p]][c] += 1;
        }
    }
    let mut test_mask = vec![false; n];
    for pixels in &test_pixels {
        for &p in pixels {
            test_mask[seg.labels()[p]] = true;
        }
    }
    let node_label: Vec<Option<usize>> = votes
        .iter()
        .map(|v| {
            let mut best: Option<usize> = None;
            for (c, &count) in v.iter().enumerate() {
                if count > 0 && best.is_none_or(|b| count > v[b]) {
                    best = Some(c);
                }
            }
            best
        })
        .collect();
    let train_mask = node_label.iter().map(Option::is_some).collect();
    Ok(NodeLabels {
        classes,
        node_label,
        train_mask,
        test_mask,
        train_pixels,
        test_pixels,
    })
}
