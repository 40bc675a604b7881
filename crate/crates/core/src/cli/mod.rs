//! Command-line front end. Experiments are described by a JSON config file;
//! flags select the subcommand and paths only.

mod config;
mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{load_config, parse_json, RunConfig};
pub use experiments::{
    ablate, ablation_csv, beta_sweep, sweep_csv, AblationRow, MetricsDocument, Provenance, RunRow,
    SweepRow, ABLATION_VARIANTS, BETA_GRID, VERSION,
};

use crate::dataio::{
    default_palette, nearest_mean_accuracy, read_cube, read_labels, read_palette, render_map,
    synth_scene, write_cube, write_labels, LabelGrid, Palette, SceneSpec,
};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, GradcheckOptions, GRADCHECK_TOL};
use crate::model::{write_checkpoint, CheckpointHeader, FusionMode, Variant};
use crate::ndmath::OpKind;
use crate::pipeline::Prepared;
use crate::train::run_repetitions;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ACSS_GCN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "acss-gcn", version, about = "Spatial-spectral graph network for hyperspectral classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and write its cube and labels.
    Synth {
        /// SceneSpec JSON; the built-in 64x64x20, 5-class scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output prefix for the cube and label files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess, train, evaluate and write checkpoint, history, metrics and map.
    Train { config: PathBuf },
    /// Train the four ablation variants and write a comparison table.
    Ablate { config: PathBuf },
    /// Train once per refinement weight and write OA per weight.
    BetaSweep {
        config: PathBuf,
        /// Comma-separated weights; the standard grid when omitted.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Compare analytic and finite-difference gradients on a tiny instance.
    Gradcheck {
        #[arg(long, value_enum, default_value = "add")]
        fusion: FusionArg,
        /// Corrupts one backward rule to exercise the check.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Render a label grid as a binary PPM image.
    Render {
        /// Label prefix.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        palette: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Add,
    Concat,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Add => FusionMode::Add,
            FusionArg::Concat => FusionMode::Concat,
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_inputs(cfg: &RunConfig) -> Result<Prepared> {
    let cube = read_cube(&cfg.cube)?;
    let truth = read_labels(&cfg.labels)?;
    Prepared::build(&cube, &truth, &cfg.prep, cfg.train.gamma)
}

fn palette_for(cfg_palette: Option<&Path>, grid: &LabelGrid) -> Result<Palette> {
    match cfg_palette {
        Some(p) => read_palette(p),
        None => Ok(default_palette(grid.max_class())),
    }
}

fn make_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn parse_op_kind(name: &str) -> Result<OpKind> {
    const KINDS: [OpKind; 19] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Hadamard,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::Scale,
        OpKind::RowSum,
        OpKind::RsqrtDiagScale,
        OpKind::ClampMin,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::ConcatRows,
        OpKind::SliceRows,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::AddRowBroadcast,
        OpKind::Dropout,
        OpKind::CrossEntropy,
    ];
    KINDS
        .into_iter()
        .find(|k| format!("{k:?}").eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown operation kind {name:?}")))
}

pub fn cmd_synth(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_json::<SceneSpec>(&text, &p.display().to_string())?
        }
        None => SceneSpec::default(),
    };
    let (cube, labels) = synth_scene(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_cube(out, &cube)?;
    write_labels(out, &labels)?;
    let acc = nearest_mean_accuracy(&cube, &labels)?;
    println!(
        "wrote {}x{}x{} cube with {} classes to {}",
        cube.height(),
        cube.width(),
        cube.bands(),
        spec.classes,
        out.display()
    );
    println!("nearest-mean separability: {:.2}%", 100.0 * acc);
    Ok(())
}

/// Runs the configured repetitions and writes every artifact into the run
/// directory. Returns the directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let data = load_inputs(cfg)?;
    let variant = cfg.train.variant();
    let summary = run_repetitions(&cfg.train, variant, &data)?;
    let dir = make_run_dir(cfg)?;
    let first = &summary.runs[0];

    let header = CheckpointHeader {
        dims: cfg.train.dims(data.bands(), data.classes)?,
        variant,
        mode: variant.name().to_string(),
        nodes: data.nodes(),
        seed: first.seed,
    };
    write_checkpoint(&dir.join("checkpoint.bin"), &header, &first.params)?;
    write(&dir.join("history.csv"), first.history.to_csv())?;
    write(&dir.join("repetitions.csv"), summary.to_csv())?;
    let doc = MetricsDocument::new(cfg, variant, &data, &summary);
    write(&dir.join("metrics.json"), doc.to_json())?;
    let palette = palette_for(cfg.palette.as_deref(), &first.evaluation.prediction)?;
    write(&dir.join("prediction.ppm"), render_map(&first.evaluation.prediction, &palette)?)?;

    println!("{} on {} superpixels, beta {}", variant.name(), data.nodes(), cfg.train.beta);
    for (i, r) in summary.runs.iter().enumerate() {
        println!(
            "run {} (seed {}): {}  final loss {:.4}  {:.1}s",
            i + 1,
            r.seed,
            r.evaluation.report.summary(),
            r.history.tail_loss(100),
            r.history.wall_time_secs
        );
    }
    println!(
        "mean: OA {:.2} ± {:.2}  AA {:.2} ± {:.2}  kappa {:.2} ± {:.2}",
        100.0 * summary.mean.oa,
        100.0 * summary.std.oa,
        100.0 * summary.mean.aa,
        100.0 * summary.std.aa,
        100.0 * summary.mean.kappa,
        100.0 * summary.std.kappa
    );
    println!("outputs in {}", dir.display());
    Ok(dir)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf> {
    let data = load_inputs(cfg)?;
    let rows = ablate(&cfg.train, &data)?;
    let dir = make_run_dir(cfg)?;
    let csv = ablation_csv(&rows);
    write(&dir.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(dir)
}

pub fn cmd_beta_sweep(cfg: &RunConfig, betas: &[f64]) -> Result<PathBuf> {
    if betas.is_empty() || betas.iter().any(|b| !b.is_finite()) {
        return Err(Error::Config("beta list must be non-empty and finite".into()));
    }
    let data = load_inputs(cfg)?;
    let rows = beta_sweep(&cfg.train, &data, betas)?;
    let dir = make_run_dir(cfg)?;
    let csv = sweep_csv(&rows);
    write(&dir.join("beta_sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(dir)
}

/// Prints one line per parameter group; fails naming every group above the
/// tolerance.
pub fn cmd_gradcheck(fusion: FusionMode, fault: Option<&str>) -> Result<()> {
    let fault = fault.map(|k| parse_op_kind(k).map(|kind| (kind, 1.5))).transpose()?;
    let opts = GradcheckOptions {
        variant: Variant::Full(fusion),
        fault,
        ..GradcheckOptions::default()
    };
    let reports = gradcheck(&opts)?;
    for r in &reports {
        println!(
            "{:<16} {:>4} coords  max rel err {:.3e}  {}",
            r.name,
            r.coords,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("gradcheck passed: {} groups below {GRADCHECK_TOL:e}", reports.len());
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradcheck failed for {}", failed.join(", "))))
    }
}

pub fn cmd_render(labels: &Path, out: &Path, palette: Option<&Path>) -> Result<()> {
    let grid = read_labels(labels)?;
    let palette = palette_for(palette, &grid)?;
    write(out, render_map(&grid, &palette)?)
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out),
        Command::Train { config } => cmd_train(&load_config(&config)?).map(drop),
        Command::Ablate { config } => cmd_ablate(&load_config(&config)?).map(drop),
        Command::BetaSweep { config, betas } => {
            let betas = betas.unwrap_or_else(|| BETA_GRID.to_vec());
            cmd_beta_sweep(&load_config(&config)?, &betas).map(drop)
        }
        Command::Gradcheck { fusion, inject_fault } => cmd_gradcheck(fusion.into(), inject_fault.as_deref()),
        Command::Render { labels, out, palette } => cmd_render(&labels, &out, palette.as_deref()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("acss-gcn: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_kind_names() {
        assert_eq!(parse_op_kind("matmul").unwrap(), OpKind::MatMul);
        assert_eq!(parse_op_kind("RsqrtDiagScale").unwrap(), OpKind::RsqrtDiagScale);
        assert!(parse_op_kind("conv").is_err());
    }

    #[test]
    fn clap_wiring() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["acss-gcn", "beta-sweep", "c.json", "--betas", "0,0.1"]).unwrap();
        assert!(matches!(cli.command, Command::BetaSweep { betas: Some(ref b), .. } if b == &[0.0, 0.1]));
    }
}
