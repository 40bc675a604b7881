//! Preprocessing chain from a raw cube to the graph inputs of the network.

use serde::{Deserialize, Serialize};

use crate::dataio::{HsiCube, LabelGrid};
use crate::error::{Error, Result};
use crate::graphs::{build_graphs, GraphParams, GraphSet};
use crate::preprocess::{
    pca_reduce, slic_segment, split_and_label, superpixel_features, NodeFeatures, NodeLabels,
    Segmentation, SlicParams, SplitParams,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub pca_bands: usize,
    pub superpixels: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    /// Spectral neighbors per band; `None` picks `min(10, bands - 1)`.
    pub knn_k: Option<usize>,
    pub train_per_class: usize,
    pub small_class_train: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        let slic = SlicParams::default();
        let split = SplitParams::default();
        PrepConfig {
            pca_bands: 20,
            superpixels: slic.superpixels,
            compactness: slic.compactness,
            slic_iterations: slic.iterations,
            knn_k: None,
            train_per_class: split.per_class,
            small_class_train: split.small_class,
        }
    }
}

impl PrepConfig {
    pub fn slic(&self) -> SlicParams {
        SlicParams {
            superpixels: self.superpixels,
            compactness: self.compactness,
            iterations: self.slic_iterations,
        }
    }

    pub fn split(&self) -> SplitParams {
        SplitParams {
            per_class: self.train_per_class,
            small_class: self.small_class_train,
        }
    }
}

/// Everything the network consumes that does not depend on the train/test
/// split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seg: Segmentation,
    pub features: NodeFeatures,
    pub graphs: GraphSet,
    pub truth: LabelGrid,
    pub classes: usize,
    /// Fraction of the cube's variance kept by the retained components.
    pub explained_variance: f64,
    pub split: SplitParams,
}

impl Prepared {
    /// PCA, SLIC, superpixel means and graph construction.
    pub fn build(cube: &HsiCube<f32>, truth: &LabelGrid, prep: &PrepConfig, gamma: f64) -> Result<Self> {
        if (cube.height(), cube.width()) != (truth.height(), truth.width()) {
            return Err(Error::Shape(format!(
                "cube is {}x{}, ground truth {}x{}",
                cube.height(),
                cube.width(),
                truth.height(),
                truth.width()
            )));
        }
        if !cube.is_finite() {
            return Err(Error::Data("cube contains non-finite values".into()));
        }
        let pca = pca_reduce(cube, prep.pca_bands)?;
        let explained_variance = pca.explained_variance_ratio().iter().sum();
        let seg = slic_segment(&pca.reduced, &prep.slic())?;
        let features = superpixel_features(&pca.reduced, &seg)?;
        let graphs = build_graphs(
            &features,
            &seg,
            &GraphParams {
                gamma,
                knn_k: prep.knn_k,
            },
        )?;
        Ok(Prepared {
            seg,
            features,
            graphs,
            truth: truth.clone(),
            classes: truth.max_class() as usize,
            explained_variance,
            split: prep.split(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.features.nodes()
    }

    pub fn bands(&self) -> usize {
        self.features.bands()
    }

    pub fn labels(&self, seed: u64) -> Result<NodeLabels> {
        split_and_label(&self.seg, &self.truth, &self.split, seed)
    }
}
