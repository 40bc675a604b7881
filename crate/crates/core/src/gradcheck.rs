//! Analytic versus central-difference gradients on a tiny fixed instance.

use crate::error::Result;
use crate::graphs::{build_graphs_from_neighbors, GraphParams, GraphSet};
use crate::model::{bind_params, forward, ForwardOptions, FusionMode, LayerDims, ModelParams, Variant};
use crate::ndmath::{finite_diff_grad, Matrix, OpKind, Rng, Tape};
use crate::preprocess::{NodeFeatures, NodeLabels};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Twelve superpixels on a ring with four bands and three classes.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub features: NodeFeatures,
    pub graphs: GraphSet,
    pub labels: NodeLabels,
    pub dims: LayerDims,
}

pub fn tiny_instance() -> Result<TinyInstance> {
    let n = 12;
    let x = Matrix::from_fn(n, 4, |j, b| {
        if b == j / 4 {
            1.0
        } else {
            0.3 * ((j + b) % 3) as f64 - 0.3
        }
    });
    let features = NodeFeatures { x };
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            let mut v = vec![(j + 1) % n, (j + n - 1) % n];
            v.sort_unstable();
            v
        })
        .collect();
    let graphs = build_graphs_from_neighbors(&features, &neighbors, &GraphParams::default())?;
    let labels = NodeLabels {
        classes: 3,
        node_label: (0..n).map(|j| Some(j / 4)).collect(),
        train_mask: vec![true; n],
        test_mask: vec![false; n],
        train_pixels: vec![vec![]; 3],
        test_pixels: vec![vec![]; 3],
    };
    let dims = LayerDims {
        bands: 4,
        f1: 8,
        f2: 4,
        attn_conv: 8,
        attn_fc1: 5,
        attn_fc2: 4,
        classes: 3,
    };
    Ok(TinyInstance {
        features,
        graphs,
        labels,
        dims,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub variant: Variant,
    pub beta: f64,
    pub wp_init: f64,
    pub seed: u64,
    /// Scales the backward rule of one operation kind, for testing the
    /// check itself.
    pub fault: Option<(OpKind, f64)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            variant: Variant::Full(FusionMode::Add),
            beta: 0.5,
            wp_init: 0.3,
            seed: 5,
            fault: None,
        }
    }
}

fn loss_value(inst: &TinyInstance, params: &ModelParams, opts: &GradcheckOptions) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.try_map(|m| tape.constant(m.clone()))?;
    let fwd = ForwardOptions::eval(opts.variant, opts.beta, true);
    let out = forward(&mut tape, &inst.features, &inst.graphs, &vars, &inst.dims, &fwd, &mut Rng::new(0))?;
    let loss = tape.cross_entropy(out.probs, &inst.labels.training_targets())?;
    Ok(tape.value(loss).get(0, 0))
}

/// `|a - n| / max(|a|, |n|, 1e-6)`, maximized over the group.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// One report per parameter matrix, in checkpoint order.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<Vec<GroupReport>> {
    let inst = tiny_instance()?;
    let params = ModelParams::init(&inst.dims, opts.variant, inst.features.nodes(), opts.seed, opts.wp_init)?;

    let mut tape = Tape::new();
    if let Some((kind, factor)) = opts.fault {
        tape.inject_fault(kind, factor);
    }
    let vars = bind_params(&mut tape, &params)?;
    let fwd = ForwardOptions::eval(opts.variant, opts.beta, true);
    let out = forward(&mut tape, &inst.features, &inst.graphs, &vars, &inst.dims, &fwd, &mut Rng::new(0))?;
    let loss = tape.cross_entropy(out.probs, &inst.labels.training_targets())?;
    let grads = tape.backward(loss)?;

    let mut reports = Vec::new();
    for (g, ((name, value), (_, var))) in params.entries().into_iter().zip(vars.entries()).enumerate() {
        let analytic = grads.wrt(*var);
        let numeric = finite_diff_grad(
            |m: &[Matrix]| {
                let mut p = params.clone();
                *p.leaves_mut()[g] = m[0].clone();
                loss_value(&inst, &p, opts).unwrap_or(f64::NAN)
            },
            std::slice::from_ref(value),
            GRADCHECK_EPS,
        )?;
        reports.push(GroupReport {
            name,
            coords: value.len(),
            max_rel_err: max_relative_error(&analytic, &numeric[0]),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        let a = Matrix::row_vector(&[1e-9, 2.0]);
        let n = Matrix::row_vector(&[0.0, 2.0]);
        assert!((max_relative_error(&a, &n) - 1e-3).abs() < 1e-12);
    }
}
