//! Python bindings: matrices, cubes and label grids, the graph operators,
//! metrics, gradient check and end-to-end training from a JSON config.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use acss_gcn::cli::{cmd_train, parse_json, RunConfig};
use acss_gcn::dataio::{self, SceneSpec};
use acss_gcn::gradcheck::{gradcheck as run_gradcheck, GradcheckOptions};
use acss_gcn::graphs::{self, RefineParams};
use acss_gcn::metrics::{self, ConfusionMatrix};
use acss_gcn::ndmath::{self, Axis};
use acss_gcn::preprocess;
use acss_gcn::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense row-major matrix of 64-bit floats.
#[pyclass(name = "Matrix", module = "acssgcn", frozen)]
struct PyMatrix(ndmath::Matrix);

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(PyValueError::new_err("rows have different lengths"));
        }
        let data = rows.into_iter().flatten().collect();
        ndmath::Matrix::new(r, c, data).map(PyMatrix).map_err(to_py)
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        PyMatrix(ndmath::Matrix::identity(n))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.0.rows() || col >= self.0.cols() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.0.get(row, col))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.0.rows()).map(|r| self.0.row(r).to_vec()).collect()
    }

    fn matmul(&self, other: &PyMatrix) -> PyResult<PyMatrix> {
        self.0.matmul(&other.0).map(PyMatrix).map_err(to_py)
    }

    fn transpose(&self) -> PyMatrix {
        PyMatrix(self.0.transpose())
    }

    /// Softmax along rows (`"rows"`, each row sums to 1) or columns.
    #[pyo3(signature = (axis = "rows"))]
    fn softmax(&self, axis: &str) -> PyResult<PyMatrix> {
        let axis = match axis {
            "rows" => Axis::Rows,
            "cols" => Axis::Cols,
            other => return Err(PyValueError::new_err(format!("axis must be rows or cols, got {other}"))),
        };
        Ok(PyMatrix(self.0.softmax(axis)))
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{})", self.0.rows(), self.0.cols())
    }
}

/// Band-sequential 32-bit hyperspectral cube.
#[pyclass(name = "HsiCube", module = "acssgcn", frozen)]
struct PyHsiCube(dataio::HsiCube<f32>);

#[pymethods]
impl PyHsiCube {
    #[new]
    fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> PyResult<Self> {
        dataio::HsiCube::new(height, width, bands, values).map(PyHsiCube).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.bands())
    }

    fn values(&self) -> Vec<f32> {
        self.0.values().to_vec()
    }

    fn spectrum(&self, row: usize, col: usize) -> PyResult<Vec<f32>> {
        if row >= self.0.height() || col >= self.0.width() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.0.spectrum(row * self.0.width() + col))
    }

    fn __repr__(&self) -> String {
        format!("HsiCube({}x{}x{})", self.0.height(), self.0.width(), self.0.bands())
    }
}

/// Row-major class ids, 0 meaning unlabeled.
#[pyclass(name = "LabelGrid", module = "acssgcn", frozen)]
struct PyLabelGrid(dataio::LabelGrid);

#[pymethods]
impl PyLabelGrid {
    #[new]
    fn new(height: usize, width: usize, labels: Vec<u16>) -> PyResult<Self> {
        dataio::LabelGrid::new(height, width, labels).map(PyLabelGrid).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    fn labels(&self) -> Vec<u16> {
        self.0.labels().to_vec()
    }

    fn max_class(&self) -> u16 {
        self.0.max_class()
    }
}

/// Generates a synthetic scene from SceneSpec fields.
#[pyfunction]
#[pyo3(signature = (height = 64, width = 64, bands = 20, classes = 5, noise_sigma = 0.05, jitter = 0.05, seed = 1))]
fn synth_scene(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    noise_sigma: f64,
    jitter: f64,
    seed: u64,
) -> PyResult<(PyHsiCube, PyLabelGrid)> {
    let spec = SceneSpec {
        height,
        width,
        bands,
        classes,
        noise_sigma,
        jitter,
        seed,
        ..SceneSpec::default()
    };
    let (cube, labels) = dataio::synth_scene(&spec).map_err(to_py)?;
    Ok((PyHsiCube(cube), PyLabelGrid(labels)))
}

#[pyfunction]
fn nearest_mean_accuracy(cube: &PyHsiCube, truth: &PyLabelGrid) -> PyResult<f64> {
    dataio::nearest_mean_accuracy(&cube.0, &truth.0).map_err(to_py)
}

#[pyfunction]
fn write_cube(prefix: PathBuf, cube: &PyHsiCube) -> PyResult<()> {
    dataio::write_cube(prefix, &cube.0).map_err(to_py)
}

#[pyfunction]
fn read_cube(prefix: PathBuf) -> PyResult<PyHsiCube> {
    dataio::read_cube(prefix).map(PyHsiCube).map_err(to_py)
}

#[pyfunction]
fn write_labels(prefix: PathBuf, grid: &PyLabelGrid) -> PyResult<()> {
    dataio::write_labels(prefix, &grid.0).map_err(to_py)
}

#[pyfunction]
fn read_labels(prefix: PathBuf) -> PyResult<PyLabelGrid> {
    dataio::read_labels(prefix).map(PyLabelGrid).map_err(to_py)
}

/// Binary PPM bytes; the default palette is used when none is given.
#[pyfunction]
#[pyo3(signature = (grid, palette = None))]
fn render_map(grid: &PyLabelGrid, palette: Option<Vec<(u16, [u8; 3])>>) -> PyResult<Vec<u8>> {
    let palette = match palette {
        Some(entries) => entries.into_iter().collect(),
        None => dataio::default_palette(grid.0.max_class()),
    };
    dataio::render_map(&grid.0, &palette).map_err(to_py)
}

/// Explained-variance ratios and the standardized reduced cube.
#[pyfunction]
fn pca_reduce(cube: &PyHsiCube, components: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let pca = preprocess::pca_reduce(&cube.0, components).map_err(to_py)?;
    Ok((pca.explained_variance_ratio(), pca.reduced.values().to_vec()))
}

#[pyfunction]
fn normalized_laplacian(adjacency: &PyMatrix) -> PyResult<PyMatrix> {
    graphs::normalized_laplacian(&adjacency.0).map(PyMatrix).map_err(to_py)
}

#[pyfunction]
fn refine_adjacency(adjacency: &PyMatrix, w_p: &PyMatrix, beta: f64) -> PyResult<PyMatrix> {
    let params = RefineParams {
        w_p: w_p.0.clone(),
        beta,
    };
    graphs::refine_adjacency(&adjacency.0, &params).map(PyMatrix).map_err(to_py)
}

/// `(oa, aa, kappa)` of a confusion matrix (rows truth, columns prediction).
#[pyfunction]
fn metrics_from_confusion(counts: Vec<Vec<u64>>) -> PyResult<(f64, f64, f64)> {
    let cm = ConfusionMatrix::from_counts(counts).map_err(to_py)?;
    Ok((
        metrics::oa(&cm).map_err(to_py)?,
        metrics::aa(&cm).map_err(to_py)?,
        metrics::kappa(&cm).map_err(to_py)?,
    ))
}

/// `[(group, max relative error)]` on the built-in tiny instance.
#[pyfunction]
fn gradcheck() -> PyResult<Vec<(String, f64)>> {
    let reports = run_gradcheck(&GradcheckOptions::default()).map_err(to_py)?;
    Ok(reports.into_iter().map(|r| (r.name, r.max_rel_err)).collect())
}

/// Runs the `train` command for a JSON config and returns the run directory.
/// Relative paths in the config are taken as given.
#[pyfunction]
fn train_from_config(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: RunConfig = parse_json(config_json, "config").map_err(to_py)?;
    cfg.train.validate().map_err(to_py)?;
    let dir = py.detach(|| cmd_train(&cfg)).map_err(to_py)?;
    Ok(dir.display().to_string())
}

#[pymodule]
fn acssgcn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyHsiCube>()?;
    m.add_class::<PyLabelGrid>()?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_mean_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(write_cube, m)?)?;
    m.add_function(wrap_pyfunction!(read_cube, m)?)?;
    m.add_function(wrap_pyfunction!(write_labels, m)?)?;
    m.add_function(wrap_pyfunction!(read_labels, m)?)?;
    m.add_function(wrap_pyfunction!(render_map, m)?)?;
    m.add_function(wrap_pyfunction!(pca_reduce, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(refine_adjacency, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_confusion, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train_from_config, m)?)?;
    Ok(())
}
