//! Full-batch training, evaluation and repeated runs.

mod adam;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::dataio::LabelGrid;
use crate::error::{Error, Result};
use crate::graphs::GraphSet;
use crate::metrics::{confusion, MetricsReport};
use crate::model::{
    bind_params, forward, predict_proba, FusionMode, ForwardOptions, LayerDims, ModelParams, Variant,
};
use crate::ndmath::{Rng, Tape, Var};
use crate::pipeline::Prepared;
use crate::preprocess::{NodeFeatures, NodeLabels, Segmentation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub beta: f64,
    /// Gaussian edge-weight scale of both graph families.
    pub gamma: f64,
    pub f1: usize,
    pub f2: usize,
    pub attn_conv: usize,
    pub attn_fc1: usize,
    pub attn_fc2: usize,
    pub fusion: FusionMode,
    /// When false, the initial graphs are used unchanged.
    pub refine: bool,
    /// Refinement matrices start uniform in `[-wp_init, wp_init]`.
    pub wp_init: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            epochs: 3000,
            dropout: 0.5,
            beta: 0.005,
            gamma: 0.5,
            f1: 40,
            f2: 20,
            attn_conv: 40,
            attn_fc1: 25,
            attn_fc2: 20,
            fusion: FusionMode::Add,
            refine: true,
            wp_init: 0.01,
            repetitions: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout = {} outside [0, 1)", self.dropout)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !self.beta.is_finite() || !(self.gamma > 0.0) || !(self.wp_init >= 0.0) {
            return Err(Error::Config("beta, gamma and wp_init must be finite, gamma positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self, bands: usize, classes: usize) -> Result<LayerDims> {
        let dims = LayerDims {
            bands,
            f1: self.f1,
            f2: self.f2,
            attn_conv: self.attn_conv,
            attn_fc1: self.attn_fc1,
            attn_fc2: self.attn_fc2,
            classes,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn variant(&self) -> Variant {
        Variant::Full(self.fusion)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    /// Mean loss over the last `window` epochs.
    pub fn tail_loss(&self, window: usize) -> f64 {
        let start = self.loss.len().saturating_sub(window);
        let tail = &self.loss[start..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// `epoch,loss,train_acc` rows, epochs counted from 1. Wall time is left
    /// out so equal runs give equal files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for (e, (l, a)) in self.loss.iter().zip(&self.train_acc).enumerate() {
            out.push_str(&format!("{},{:e},{:e}\n", e + 1, l, a));
        }
        out
    }
}

/// Inputs shared by every epoch.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub features: &'a NodeFeatures,
    pub graphs: &'a GraphSet,
    pub labels: &'a NodeLabels,
}

fn train_accuracy(probs: &crate::ndmath::Matrix, targets: &[(usize, usize)]) -> f64 {
    let pred = probs.argmax_rows();
    let hits = targets.iter().filter(|&&(j, c)| pred[j] == c).count();
    hits as f64 / targets.len() as f64
}

/// Trains from a fresh initialization drawn from `seed`.
pub fn train(
    cfg: &TrainConfig,
    variant: Variant,
    data: TrainData<'_>,
    seed: u64,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let dims = cfg.dims(data.features.bands(), data.labels.classes)?;
    let params = ModelParams::init(&dims, variant, data.features.nodes(), seed, cfg.wp_init)?;
    train_from(cfg, variant, data, params, seed)
}

/// Trains starting from `params`. Dropout masks come from a stream of `seed`.
pub fn train_from(
    cfg: &TrainConfig,
    variant: Variant,
    data: TrainData<'_>,
    mut params: ModelParams,
    seed: u64,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let dims = cfg.dims(data.features.bands(), data.labels.classes)?;
    let targets = data.labels.training_targets();
    if targets.is_empty() {
        return Err(Error::Config("no training nodes".into()));
    }
    let opts = ForwardOptions {
        variant,
        beta: cfg.beta,
        refine: cfg.refine,
        dropout: cfg.dropout,
    };
    let mut dropout_rng = Rng::new(seed).derive(20);
    let mut adam = AdamState::new(&params);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let at_epoch = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {}: {m}", epoch + 1)),
            other => other,
        };
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params)?;
        let out = forward(&mut tape, data.features, data.graphs, &vars, &dims, &opts, &mut dropout_rng)
            .map_err(at_epoch)?;
        let loss = tape.cross_entropy(out.probs, &targets).map_err(at_epoch)?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("epoch {}: loss is {loss_value}", epoch + 1)));
        }
        let grads = tape.backward(loss)?;
        let grad_tree = vars.map(|v: &Var| grads.wrt(*v));
        adam.step(&mut params, &grad_tree, cfg.lr).map_err(at_epoch)?;
        history.loss.push(loss_value);
        history.train_acc.push(train_accuracy(tape.value(out.probs), &targets));
    }
    history.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((params, history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Predicted class (1-based) of every labeled pixel, 0 elsewhere.
    pub prediction: LabelGrid,
    /// Predicted class (0-based) of every superpixel.
    pub node_prediction: Vec<usize>,
}

/// Inputs for scoring a trained model.
#[derive(Clone, Copy, Debug)]
pub struct EvalData<'a> {
    pub features: &'a NodeFeatures,
    pub graphs: &'a GraphSet,
    pub seg: &'a Segmentation,
    pub labels: &'a NodeLabels,
    pub truth: &'a LabelGrid,
}

/// One dropout-free forward pass; every test pixel takes its superpixel's
/// most probable class.
pub fn evaluate(
    params: &ModelParams,
    cfg: &TrainConfig,
    variant: Variant,
    data: EvalData<'_>,
) -> Result<Evaluation> {
    if data.labels.test_pixel_count() == 0 {
        return Err(Error::Config("no test pixels".into()));
    }
    let dims = cfg.dims(data.features.bands(), data.labels.classes)?;
    let probs = predict_proba(data.features, data.graphs, params, &dims, variant, cfg.beta, cfg.refine)?;
    let node_prediction = probs.argmax_rows();
    let seg_labels = data.seg.labels();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (c, pixels) in data.labels.test_pixels.iter().enumerate() {
        for &p in pixels {
            pred.push(node_prediction[seg_labels[p]] + 1);
            truth.push(c + 1);
        }
    }
    let cm = confusion(&pred, &truth, data.labels.classes)?;
    let report = MetricsReport::from_confusion(&cm)?;
    let map: Vec<u16> = data
        .truth
        .labels()
        .iter()
        .zip(seg_labels)
        .map(|(&t, &node)| if t == 0 { 0 } else { node_prediction[node] as u16 + 1 })
        .collect();
    let prediction = LabelGrid::new(data.truth.height(), data.truth.width(), map)?;
    Ok(Evaluation {
        report,
        prediction,
        node_prediction,
    })
}

/// Split, initialization and training for one seed, then evaluation.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub evaluation: Evaluation,
}

pub fn run_once(cfg: &TrainConfig, variant: Variant, data: &Prepared, seed: u64) -> Result<RunResult> {
    let labels = data.labels(seed)?;
    let train_data = TrainData {
        features: &data.features,
        graphs: &data.graphs,
        labels: &labels,
    };
    let (params, history) = train(cfg, variant, train_data, seed)?;
    let evaluation = evaluate(
        &params,
        cfg,
        variant,
        EvalData {
            features: &data.features,
            graphs: &data.graphs,
            seg: &data.seg,
            labels: &labels,
            truth: &data.truth,
        },
    )?;
    Ok(RunResult {
        seed,
        params,
        history,
        evaluation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug)]
pub struct RepetitionSummary {
    pub runs: Vec<RunResult>,
    pub mean: MetricTriple,
    /// Population standard deviation.
    pub std: MetricTriple,
}

impl RepetitionSummary {
    pub fn from_runs(runs: Vec<RunResult>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Config("no runs to summarize".into()));
        }
        let n = runs.len() as f64;
        let pick = |f: fn(&MetricsReport) -> f64| -> (f64, f64) {
            let xs: Vec<f64> = runs.iter().map(|r| f(&r.evaluation.report)).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (oa, oa_s) = pick(|r| r.oa);
        let (aa, aa_s) = pick(|r| r.aa);
        let (kappa, kappa_s) = pick(|r| r.kappa);
        Ok(RepetitionSummary {
            runs,
            mean: MetricTriple { oa, aa, kappa },
            std: MetricTriple {
                oa: oa_s,
                aa: aa_s,
                kappa: kappa_s,
            },
        })
    }

    /// One row per run and a final mean row: `run,seed,oa,aa,kappa`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seed,oa,aa,kappa\n");
        for (i, r) in self.runs.iter().enumerate() {
            let m = &r.evaluation.report;
            out.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", i + 1, r.seed, m.oa, m.aa, m.kappa));
        }
        out.push_str(&format!(
            "mean,,{:.6},{:.6},{:.6}\n",
            self.mean.oa, self.mean.aa, self.mean.kappa
        ));
        out
    }
}

/// Runs with seeds `cfg.seed + r` for `r` in `0..cfg.repetitions`. Runs are
/// independent and may execute in parallel; results keep seed order.
pub fn run_repetitions(cfg: &TrainConfig, variant: Variant, data: &Prepared) -> Result<RepetitionSummary> {
    cfg.validate()?;
    let runs = (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|r| run_once(cfg, variant, data, cfg.seed.wrapping_add(r)))
        .collect::<Result<Vec<_>>>()?;
    RepetitionSummary::from_runs(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Matrix;

    fn tiny() -> (NodeFeatures, GraphSet, NodeLabels) {
        let inst = crate::gradcheck::tiny_instance().unwrap();
        (inst.features, inst.graphs, inst.labels)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            f1: 8,
            f2: 4,
            attn_conv: 8,
            attn_fc1: 5,
            attn_fc2: 4,
            dropout: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (f, _, l) = tiny();
        let dims = tiny_cfg().dims(f.bands(), l.classes).unwrap();
        let params = ModelParams::init(&dims, Variant::Full(FusionMode::Add), 12, 1, 0.1).unwrap();
        let mut p = params.clone();
        let mut adam = AdamState::new(&p);
        let zero = p.map(|m| Matrix::zeros(m.rows(), m.cols()));
        adam.step(&mut p, &zero, 0.005).unwrap();
        assert_eq!(p, params);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (f, _, l) = tiny();
        let dims = tiny_cfg().dims(f.bands(), l.classes).unwrap();
        let params = ModelParams::init(&dims, Variant::SpatialOnly, 12, 1, 0.1).unwrap();
        let mut p = params.clone();
        let mut adam = AdamState::new(&p);
        let g = p.map(|m| Matrix::filled(m.rows(), m.cols(), -3.0));
        adam.step(&mut p, &g, 0.005).unwrap();
        let moved = p.head_b.get(0, 0) - params.head_b.get(0, 0);
        assert!((moved - 0.005).abs() < 1e-10, "{moved}");
    }

    #[test]
    fn adam_rejects_non_finite_naming_group() {
        let (f, _, l) = tiny();
        let dims = tiny_cfg().dims(f.bands(), l.classes).unwrap();
        let mut p = ModelParams::init(&dims, Variant::SpatialOnly, 12, 1, 0.1).unwrap();
        let mut adam = AdamState::new(&p);
        let mut g = p.map(|m| Matrix::zeros(m.rows(), m.cols()));
        g.head_w.set(0, 0, f64::NAN);
        let err = adam.step(&mut p, &g, 0.005).unwrap_err();
        assert!(err.to_string().contains("head_w"), "{err}");
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn one_epoch_moves_exactly_the_weights_with_gradient() {
        let (features, graphs, labels) = tiny();
        let cfg = TrainConfig { wp_init: 0.3, beta: 0.5, ..tiny_cfg() };
        let variant = Variant::Full(FusionMode::Add);
        let data = TrainData { features: &features, graphs: &graphs, labels: &labels };
        let dims = cfg.dims(4, 3).unwrap();
        let init = ModelParams::init(&dims, variant, 12, 3, cfg.wp_init).unwrap();

        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &init).unwrap();
        let opts = ForwardOptions::eval(variant, cfg.beta, true);
        let out = forward(&mut tape, &features, &graphs, &vars, &dims, &opts, &mut Rng::new(0)).unwrap();
        let loss = tape.cross_entropy(out.probs, &labels.training_targets()).unwrap();
        let grads = tape.backward(loss).unwrap();

        let (trained, history) = train(&cfg, variant, data, 3).unwrap();
        assert_eq!(history.epochs(), 1);
        let mut moved = 0;
        for (((name, a), (_, b)), (_, v)) in init.entries().into_iter().zip(trained.entries()).zip(vars.entries()) {
            let g = grads.wrt(*v);
            for i in 0..a.len() {
                let changed = a.data()[i] != b.data()[i];
                assert_eq!(changed, g.data()[i] != 0.0, "{name}[{i}]");
                moved += changed as usize;
            }
        }
        assert!(moved > init.parameter_count() / 2);
        for v in &vars.wp_spatial {
            assert!(grads.wrt(*v).frobenius_norm() > 0.0);
        }
        assert!(grads.wrt(vars.wp_spectral).frobenius_norm() > 0.0);
    }

    #[test]
    fn beta_zero_leaves_refinement_untouched() {
        let (features, graphs, labels) = tiny();
        let cfg = TrainConfig { beta: 0.0, epochs: 5, dropout: 0.5, ..tiny_cfg() };
        let variant = Variant::Full(FusionMode::Add);
        let data = TrainData { features: &features, graphs: &graphs, labels: &labels };
        let dims = cfg.dims(4, 3).unwrap();
        let init = ModelParams::init(&dims, variant, 12, 4, cfg.wp_init).unwrap();
        let (refined, h1) = train(&cfg, variant, data, 4).unwrap();
        assert_eq!(refined.wp_spatial, init.wp_spatial);
        assert_eq!(refined.wp_spectral, init.wp_spectral);
        let off = TrainConfig { refine: false, ..cfg.clone() };
        let (plain, h2) = train(&off, variant, data, 4).unwrap();
        assert_eq!(h1.loss, h2.loss);
        assert_eq!(h1.train_acc, h2.train_acc);
        assert_eq!(refined, plain);
    }

    #[test]
    fn tiny_instance_fits() {
        let (features, graphs, labels) = tiny();
        let cfg = TrainConfig { epochs: 500, ..tiny_cfg() };
        let data = TrainData { features: &features, graphs: &graphs, labels: &labels };
        let (_, history) = train(&cfg, Variant::Full(FusionMode::Add), data, 7).unwrap();
        assert_eq!(*history.train_acc.last().unwrap(), 1.0);
        assert!(history.loss.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().lr, 0.005);
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let h = TrainHistory {
            loss: vec![1.0, 0.5],
            train_acc: vec![0.0, 1.0],
            wall_time_secs: 3.0,
        };
        assert_eq!(h.to_csv().lines().count(), 3);
        assert_eq!(h.tail_loss(1), 0.5);
    }
}
