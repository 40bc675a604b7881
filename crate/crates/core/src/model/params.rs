use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Rng};

/// How the two enhanced branches are combined before the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `(H_1 + H_Sa) + (H_2 + H_Se)`, width F2.
    Add,
    /// `[H_1 + H_Sa | H_2 + H_Se]`, width 2·F2.
    Concat,
}

/// Network wiring. `Full` is the complete model; the others are ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full(FusionMode),
    /// Both branches summed, attention blocks removed.
    NoAttention,
    SpatialOnly,
    SpectralOnly,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full(FusionMode::Add) => "ACSS-GCN-A",
            Variant::Full(FusionMode::Concat) => "ACSS-GCN-C",
            Variant::NoAttention => "ASS-GCN-A",
            Variant::SpatialOnly => "Sa-GCN",
            Variant::SpectralOnly => "Se-GCN",
        }
    }

    pub fn uses_spatial(&self) -> bool {
        !matches!(self, Variant::SpectralOnly)
    }

    pub fn uses_spectral(&self) -> bool {
        !matches!(self, Variant::SpatialOnly)
    }

    pub fn uses_attention(&self) -> bool {
        matches!(self, Variant::Full(_))
    }
}

/// Layer widths. `f1`, `f2` and `attn_conv` are totals over all bands; each
/// band owns a contiguous block of `width / bands` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub bands: usize,
    pub f1: usize,
    pub f2: usize,
    pub attn_conv: usize,
    pub attn_fc1: usize,
    pub attn_fc2: usize,
    pub classes: usize,
}

impl LayerDims {
    pub fn validate(&self) -> Result<()> {
        let s = self.bands;
        if s == 0 || self.classes == 0 {
            return Err(Error::Config("bands and classes must be positive".into()));
        }
        for (name, w) in [("f1", self.f1), ("f2", self.f2), ("attn_conv", self.attn_conv)] {
            if w == 0 || w % s != 0 {
                return Err(Error::Config(format!(
                    "{name} = {w} must be a positive multiple of the band count {s}"
                )));
            }
        }
        if self.attn_fc1 == 0 {
            return Err(Error::Config("attn_fc1 must be positive".into()));
        }
        if self.attn_fc2 != self.f2 {
            return Err(Error::Config(format!(
                "attn_fc2 = {} must equal f2 = {}",
                self.attn_fc2, self.f2
            )));
        }
        Ok(())
    }

    pub fn f1_block(&self) -> usize {
        self.f1 / self.bands
    }

    pub fn f2_block(&self) -> usize {
        self.f2 / self.bands
    }

    pub fn conv_block(&self) -> usize {
        self.attn_conv / self.bands
    }

    pub fn head_input(&self, variant: Variant) -> usize {
        match variant {
            Variant::Full(FusionMode::Concat) => 2 * self.f2,
            _ => self.f2,
        }
    }
}

/// Weights of one attention block: a shared graph-conv weight followed by
/// two affine layers.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnBlock<T> {
    pub conv: T,
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
}

/// Every trainable matrix of the network, generic over the leaf type so the
/// same layout carries values, tape handles, gradients and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<T> {
    /// Per band, `1 × f1/s`.
    pub sa_w0: Vec<T>,
    /// Per band, `f1/s × f2/s`.
    pub sa_w1: Vec<T>,
    pub se_w0: T,
    pub se_w1: T,
    pub sagb: AttnBlock<T>,
    pub segb: AttnBlock<T>,
    pub head_w: T,
    pub head_b: T,
    /// One refinement matrix per spatial graph, `n × n`.
    pub wp_spatial: Vec<T>,
    /// Shared by all spectral graphs, `s × s`.
    pub wp_spectral: T,
}

pub type ModelParams = ParamTree<Matrix>;

impl<T> ParamTree<T> {
    /// Leaves in checkpoint order, with their group names.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (i, w) in self.sa_w0.iter().enumerate() {
            out.push((format!("sa_w0[{i}]"), w));
        }
        for (i, w) in self.sa_w1.iter().enumerate() {
            out.push((format!("sa_w1[{i}]"), w));
        }
        out.push(("se_w0".into(), &self.se_w0));
        out.push(("se_w1".into(), &self.se_w1));
        for (name, b) in [("sagb", &self.sagb), ("segb", &self.segb)] {
            out.push((format!("{name}.conv"), &b.conv));
            out.push((format!("{name}.fc1_w"), &b.fc1_w));
            out.push((format!("{name}.fc1_b"), &b.fc1_b));
            out.push((format!("{name}.fc2_w"), &b.fc2_w));
            out.push((format!("{name}.fc2_b"), &b.fc2_b));
        }
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        for (i, w) in self.wp_spatial.iter().enumerate() {
            out.push((format!("wp_spatial[{i}]"), w));
        }
        out.push(("wp_spectral".into(), &self.wp_spectral));
        out
    }

    /// Mutable leaves, same order as [`ParamTree::entries`].
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        out.extend(self.sa_w0.iter_mut());
        out.extend(self.sa_w1.iter_mut());
        out.push(&mut self.se_w0);
        out.push(&mut self.se_w1);
        for b in [&mut self.sagb, &mut self.segb] {
            out.push(&mut b.conv);
            out.push(&mut b.fc1_w);
            out.push(&mut b.fc1_b);
            out.push(&mut b.fc2_w);
            out.push(&mut b.fc2_b);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out.extend(self.wp_spatial.iter_mut());
        out.push(&mut self.wp_spectral);
        out
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<ParamTree<U>> {
        let mut block = |b: &AttnBlock<T>| -> Result<AttnBlock<U>> {
            Ok(AttnBlock {
                conv: f(&b.conv)?,
                fc1_w: f(&b.fc1_w)?,
                fc1_b: f(&b.fc1_b)?,
                fc2_w: f(&b.fc2_w)?,
                fc2_b: f(&b.fc2_b)?,
            })
        };
        let sagb = block(&self.sagb)?;
        let segb = block(&self.segb)?;
        Ok(ParamTree {
            sa_w0: self.sa_w0.iter().map(&mut f).collect::<Result<_>>()?,
            sa_w1: self.sa_w1.iter().map(&mut f).collect::<Result<_>>()?,
            se_w0: f(&self.se_w0)?,
            se_w1: f(&self.se_w1)?,
            sagb,
            segb,
            head_w: f(&self.head_w)?,
            head_b: f(&self.head_b)?,
            wp_spatial: self.wp_spatial.iter().map(&mut f).collect::<Result<_>>()?,
            wp_spectral: f(&self.wp_spectral)?,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamTree<U> {
        self.try_map(|t| Ok(f(t))).expect("infallible")
    }
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases from one seeded stream; the
    /// refinement matrices come from a second stream, uniform in
    /// `[-wp_scale, wp_scale]`, so whether they are used never shifts the
    /// other weights.
    pub fn init(dims: &LayerDims, variant: Variant, nodes: usize, seed: u64, wp_scale: f64) -> Result<Self> {
        dims.validate()?;
        let root = Rng::new(seed);
        let mut rng = root.derive(10);
        let (s, f1, f2, fc) = (dims.bands, dims.f1_block(), dims.f2_block(), dims.conv_block());
        let sa_w0 = (0..s).map(|_| rng.glorot(1, f1)).collect();
        let sa_w1 = (0..s).map(|_| rng.glorot(f1, f2)).collect();
        let se_w0 = rng.glorot(1, f1);
        let se_w1 = rng.glorot(f1, f2);
        let block = |rng: &mut Rng| AttnBlock {
            conv: rng.glorot(f1, fc),
            fc1_w: rng.glorot(dims.attn_conv, dims.attn_fc1),
            fc1_b: Matrix::zeros(1, dims.attn_fc1),
            fc2_w: rng.glorot(dims.attn_fc1, dims.attn_fc2),
            fc2_b: Matrix::zeros(1, dims.attn_fc2),
        };
        let sagb = block(&mut rng);
        let segb = block(&mut rng);
        let head_in = dims.head_input(variant);
        let head_w = rng.glorot(head_in, dims.classes);
        let head_b = Matrix::zeros(1, dims.classes);

        let mut wp_rng = root.derive(11);
        let wp_spatial = (0..s)
            .map(|_| wp_rng.uniform_matrix(nodes, nodes, -wp_scale, wp_scale))
            .collect();
        let wp_spectral = wp_rng.uniform_matrix(s, s, -wp_scale, wp_scale);
        Ok(ParamTree {
            sa_w0,
            sa_w1,
            se_w0,
            se_w1,
            sagb,
            segb,
            head_w,
            head_b,
            wp_spatial,
            wp_spectral,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, m)| m.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.entries().iter().map(|(_, m)| m.len()).sum()
    }
}
