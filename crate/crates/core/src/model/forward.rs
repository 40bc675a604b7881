//! Taped forward pass.
//!
//! Column layout: band `i` owns columns `[i·w/s, (i+1)·w/s)` of every
//! band-concatenated feature matrix. The spectral branch flattens its
//! `s × w/s` per-superpixel outputs row-major, which lands band `i`'s
//! features in the same block.

use super::params::{AttnBlock, FusionMode, LayerDims, ParamTree, Variant};
use crate::error::{Error, Result};
use crate::graphs::{laplacian_on_tape, refine_on_tape, GraphSet};
use crate::ndmath::{Axis, Matrix, Rng, Tape, Var};
use crate::preprocess::NodeFeatures;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub variant: Variant,
    pub beta: f64,
    /// When false the initial graphs are used as is and no refinement ops
    /// are recorded.
    pub refine: bool,
    pub dropout: f64,
}

impl ForwardOptions {
    pub fn eval(variant: Variant, beta: f64, refine: bool) -> Self {
        ForwardOptions {
            variant,
            beta,
            refine,
            dropout: 0.0,
        }
    }
}

/// Handles to the intermediate results of one forward pass. Branch outputs
/// are `None` when the variant does not compute them.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub h_sa1: Option<Var>,
    pub h_sa: Option<Var>,
    pub h_se1: Option<Var>,
    pub h_se: Option<Var>,
    pub h1: Option<Var>,
    pub h2: Option<Var>,
    pub fused: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct Laplacians {
    pub spatial: Vec<Var>,
    pub spectral: Vec<Var>,
}

/// Registers every parameter as a trainable leaf.
pub fn bind_params(tape: &mut Tape, params: &ParamTree<Matrix>) -> Result<ParamTree<Var>> {
    params.try_map(|m| tape.param(m.clone()))
}

/// Laplacians of the (optionally refined) graphs the variant needs. Each
/// spatial graph uses its own refinement matrix; all spectral graphs share
/// one.
pub fn build_laplacians(
    tape: &mut Tape,
    graphs: &GraphSet,
    params: &ParamTree<Var>,
    opts: &ForwardOptions,
) -> Result<Laplacians> {
    let one = |tape: &mut Tape, a: &Matrix, w_p: Var| -> Result<Var> {
        let mut adj = tape.constant(a.clone())?;
        if opts.refine {
            adj = refine_on_tape(tape, adj, w_p, opts.beta)?;
        }
        laplacian_on_tape(tape, adj)
    };
    let mut spatial = Vec::new();
    if opts.variant.uses_spatial() || opts.variant.uses_attention() {
        if params.wp_spatial.len() != graphs.spatial.len() {
            return Err(Error::Contract(format!(
                "{} spatial refinement matrices for {} spatial graphs",
                params.wp_spatial.len(),
                graphs.spatial.len()
            )));
        }
        for (g, &w) in graphs.spatial.iter().zip(&params.wp_spatial) {
            spatial.push(one(tape, &g.adjacency, w)?);
        }
    }
    let mut spectral = Vec::new();
    if opts.variant.uses_spectral() {
        for g in &graphs.spectral {
            spectral.push(one(tape, &g.adjacency, params.wp_spectral)?);
        }
    }
    Ok(Laplacians { spatial, spectral })
}

fn gcn_layer(
    tape: &mut Tape,
    l: Var,
    h: Var,
    w: Var,
    dropout: f64,
    rng: &mut Rng,
) -> Result<Var> {
    let lh = tape.matmul(l, h)?;
    let z = tape.matmul(lh, w)?;
    let a = tape.relu(z)?;
    tape.dropout(a, dropout, rng)
}

/// Spatial branch: per band, two graph-conv layers over the superpixel graph
/// of that band; outputs concatenated in band order. Returns `(H_Sa1, H_Sa)`.
pub fn sa_gcn_forward(
    tape: &mut Tape,
    features: &NodeFeatures,
    spatial: &[Var],
    w0: &[Var],
    w1: &[Var],
    dropout: f64,
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    let s = features.bands();
    if spatial.len() != s || w0.len() != s || w1.len() != s {
        return Err(Error::Contract(format!(
            "spatial branch needs {s} Laplacians and weights, got {}/{}/{}",
            spatial.len(),
            w0.len(),
            w1.len()
        )));
    }
    let mut first = Vec::with_capacity(s);
    let mut second = Vec::with_capacity(s);
    for i in 0..s {
        let z = tape.constant(features.band_column(i))?;
        let h1 = gcn_layer(tape, spatial[i], z, w0[i], dropout, rng)?;
        let h2 = gcn_layer(tape, spatial[i], h1, w1[i], dropout, rng)?;
        first.push(h1);
        second.push(h2);
    }
    Ok((tape.concat_cols(&first)?, tape.concat_cols(&second)?))
}

/// Spectral branch: per superpixel, two graph-conv layers over its band
/// graph with weights shared across superpixels; each `s × w/s` output is
/// flattened band-major into one row. Returns `(H_Se1, H_Se)`.
pub fn se_gcn_forward(
    tape: &mut Tape,
    features: &NodeFeatures,
    spectral: &[Var],
    w0: Var,
    w1: Var,
    dropout: f64,
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    let n = features.nodes();
    if spectral.len() != n {
        return Err(Error::Contract(format!(
            "spectral branch needs {n} Laplacians, got {}",
            spectral.len()
        )));
    }
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for j in 0..n {
        let z = tape.constant(features.spectrum_column(j))?;
        let g1 = gcn_layer(tape, spectral[j], z, w0, dropout, rng)?;
        let g2 = gcn_layer(tape, spectral[j], g1, w1, dropout, rng)?;
        let (r1, c1) = tape.value(g1).shape();
        let (r2, c2) = tape.value(g2).shape();
        first.push(tape.reshape(g1, 1, r1 * c1)?);
        second.push(tape.reshape(g2, 1, r2 * c2)?);
    }
    Ok((tape.concat_rows(&first)?, tape.concat_rows(&second)?))
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_broadcast(xw, b)
}

fn expect_shape(tape: &Tape, v: Var, shape: (usize, usize), what: &str) -> Result<()> {
    let got = tape.value(v).shape();
    if got != shape {
        return Err(Error::Contract(format!(
            "{what}: expected {}x{}, got {}x{}",
            shape.0, shape.1, got.0, got.1
        )));
    }
    Ok(())
}

/// Spatial attention: band `i`'s block of `H_Se1` is propagated over band
/// `i`'s spatial graph with a shared weight, the concatenation passes two
/// affine layers, and a softmax over nodes gates `H_Sa`. Returns `H_1`.
pub fn sagb(
    tape: &mut Tape,
    h_se1: Var,
    spatial: &[Var],
    h_sa: Var,
    block: &AttnBlock<Var>,
) -> Result<Var> {
    let s = spatial.len();
    let (n, f1) = tape.value(h_se1).shape();
    if s == 0 || f1 % s != 0 {
        return Err(Error::Contract(format!("H_Se1 width {f1} not divisible into {s} bands")));
    }
    let w = f1 / s;
    let mut convs = Vec::with_capacity(s);
    for (i, &l) in spatial.iter().enumerate() {
        let blk = tape.slice_cols(h_se1, i * w, w)?;
        let lb = tape.matmul(l, blk)?;
        let z = tape.matmul(lb, block.conv)?;
        convs.push(tape.relu(z)?);
    }
    let conv = tape.concat_cols(&convs)?;
    let fc1 = affine(tape, conv, block.fc1_w, block.fc1_b)?;
    let i_sa = affine(tape, fc1, block.fc2_w, block.fc2_b)?;
    let target = tape.value(h_sa).shape();
    expect_shape(tape, i_sa, target, "spatial attention map")?;
    debug_assert_eq!(target.0, n);
    let att = tape.softmax(i_sa, Axis::Cols)?;
    tape.hadamard(h_sa, att)
}

/// Spectral attention: row `j` of `H_Sa1` is reshaped to `s × F1/s`,
/// propagated over superpixel `j`'s band graph with a shared weight and
/// flattened; two affine layers and a softmax over features gate `H_Se`.
/// Returns `H_2`.
pub fn segb(
    tape: &mut Tape,
    h_sa1: Var,
    spectral: &[Var],
    h_se: Var,
    block: &AttnBlock<Var>,
) -> Result<Var> {
    let (n, f1) = tape.value(h_sa1).shape();
    if spectral.len() != n {
        return Err(Error::Contract(format!(
            "{} spectral Laplacians for {n} superpixels",
            spectral.len()
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for (j, &l) in spectral.iter().enumerate() {
        let s = tape.value(l).rows();
        if f1 % s != 0 {
            return Err(Error::Contract(format!("H_Sa1 width {f1} not divisible into {s} bands")));
        }
        let row = tape.slice_rows(h_sa1, j, 1)?;
        let bands = tape.reshape(row, s, f1 / s)?;
        let lb = tape.matmul(l, bands)?;
        let z = tape.matmul(lb, block.conv)?;
        let conv = tape.relu(z)?;
        let (r, c) = tape.value(conv).shape();
        rows.push(tape.reshape(conv, 1, r * c)?);
    }
    let conv = tape.concat_rows(&rows)?;
    let fc1 = affine(tape, conv, block.fc1_w, block.fc1_b)?;
    let i_se = affine(tape, fc1, block.fc2_w, block.fc2_b)?;
    let target = tape.value(h_se).shape();
    expect_shape(tape, i_se, target, "spectral attention map")?;
    let att = tape.softmax(i_se, Axis::Rows)?;
    tape.hadamard(h_se, att)
}

/// Residual fusion of the attention-enhanced branches.
pub fn fuse(tape: &mut Tape, h1: Var, h_sa: Var, h2: Var, h_se: Var, mode: FusionMode) -> Result<Var> {
    let spatial = tape.add(h1, h_sa)?;
    let spectral = tape.add(h2, h_se)?;
    match mode {
        FusionMode::Add => tape.add(spatial, spectral),
        FusionMode::Concat => tape.concat_cols(&[spatial, spectral]),
    }
}

/// Affine head and row softmax. Returns `(logits, probs)`.
pub fn classify(tape: &mut Tape, fused: Var, head_w: Var, head_b: Var) -> Result<(Var, Var)> {
    let width = tape.value(fused).cols();
    let expected = tape.value(head_w).rows();
    if width != expected {
        return Err(Error::Config(format!(
            "fused width {width} does not match classifier input {expected}"
        )));
    }
    let logits = affine(tape, fused, head_w, head_b)?;
    let probs = tape.softmax(logits, Axis::Rows)?;
    Ok((logits, probs))
}

/// Full forward pass for `opts.variant`.
pub fn forward(
    tape: &mut Tape,
    features: &NodeFeatures,
    graphs: &GraphSet,
    params: &ParamTree<Var>,
    dims: &LayerDims,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<ForwardVars> {
    dims.validate()?;
    if features.bands() != dims.bands {
        return Err(Error::Contract(format!(
            "features have {} bands, model expects {}",
            features.bands(),
            dims.bands
        )));
    }
    let laps = build_laplacians(tape, graphs, params, opts)?;
    let variant = opts.variant;

    let (h_sa1, h_sa) = if variant.uses_spatial() {
        let (a, b) = sa_gcn_forward(
            tape,
            features,
            &laps.spatial,
            &params.sa_w0,
            &params.sa_w1,
            opts.dropout,
            rng,
        )?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let (h_se1, h_se) = if variant.uses_spectral() {
        let (a, b) = se_gcn_forward(
            tape,
            features,
            &laps.spectral,
            params.se_w0,
            params.se_w1,
            opts.dropout,
            rng,
        )?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };

    let (mut h1, mut h2) = (None, None);
    let fused = match variant {
        Variant::Full(mode) => {
            let (sa1, sa, se1, se) = (h_sa1.unwrap(), h_sa.unwrap(), h_se1.unwrap(), h_se.unwrap());
            let a = sagb(tape, se1, &laps.spatial, sa, &params.sagb)?;
            let b = segb(tape, sa1, &laps.spectral, se, &params.segb)?;
            h1 = Some(a);
            h2 = Some(b);
            fuse(tape, a, sa, b, se, mode)?
        }
        Variant::NoAttention => tape.add(h_sa.unwrap(), h_se.unwrap())?,
        Variant::SpatialOnly => h_sa.unwrap(),
        Variant::SpectralOnly => h_se.unwrap(),
    };
    let (logits, probs) = classify(tape, fused, params.head_w, params.head_b)?;
    Ok(ForwardVars {
        h_sa1,
        h_sa,
        h_se1,
        h_se,
        h1,
        h2,
        fused,
        logits,
        probs,
    })
}

/// Untaped inference: class probabilities with dropout disabled.
pub fn predict_proba(
    features: &NodeFeatures,
    graphs: &GraphSet,
    params: &ParamTree<Matrix>,
    dims: &LayerDims,
    variant: Variant,
    beta: f64,
    refine: bool,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.try_map(|m| tape.constant(m.clone()))?;
    let opts = ForwardOptions::eval(variant, beta, refine);
    let out = forward(&mut tape, features, graphs, &vars, dims, &opts, &mut Rng::new(0))?;
    Ok(tape.value(out.probs).clone())
}
