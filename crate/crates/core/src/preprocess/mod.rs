//! Band reduction, superpixel segmentation and per-superpixel aggregation.

mod features;
mod pca;
mod segmentation;
mod slic;
mod split;

pub use features::{superpixel_features, NodeFeatures};
pub use pca::{jacobi_eigen, pca_reduce, PcaResult};
pub use segmentation::Segmentation;
pub use slic::{slic_segment, SlicParams};
pub use split::{split_and_label, NodeLabels, SplitParams};
