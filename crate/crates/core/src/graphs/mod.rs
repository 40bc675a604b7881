//! Spatial and spectral graph construction, adaptive refinement and the
//! symmetric normalized Laplacian.
//!
//! Refinement and normalization exist twice: as plain matrix functions and
//! as taped operations. Both perform the same floating-point operations in
//! the same order, so their results agree bit for bit.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Tape, Var};
use crate::preprocess::{NodeFeatures, Segmentation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    /// Graph over superpixels for one band.
    Spatial { band: usize },
    /// Graph over the bands of one superpixel.
    Spectral { node: usize },
}

/// Weighted undirected graph: symmetric, non-negative, zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub kind: GraphKind,
    pub adjacency: Matrix,
}

impl Graph {
    pub fn nodes(&self) -> usize {
        self.adjacency.rows()
    }
}

fn gaussian(a: f64, b: f64, gamma: f64) -> f64 {
    (-gamma * (a - b).powi(2)).exp()
}

/// Gaussian-weighted adjacency over superpixels for one band: an edge
/// between boundary-sharing superpixels `m` and `h` weighs
/// `exp(-gamma (x_m - x_h)^2)`.
pub fn spatial_graph(
    band: usize,
    values: &[f64],
    neighbors: &[Vec<usize>],
    gamma: f64,
) -> Result<Graph> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let n = values.len();
    if neighbors.len() != n {
        return Err(Error::Shape(format!(
            "{} neighbor sets for {n} superpixels",
            neighbors.len()
        )));
    }
    let mut a = Matrix::zeros(n, n);
    for (m, ns) in neighbors.iter().enumerate() {
        for &h in ns {
            if h != m {
                a.set(m, h, gaussian(values[m], values[h], gamma));
            }
        }
    }
    Ok(Graph {
        kind: GraphKind::Spatial { band },
        adjacency: a,
    })
}

/// k-nearest-band graph for one superpixel spectrum. Each band keeps its `k`
/// highest-weight partners (lower index wins ties); the result is
/// symmetrized with an elementwise max.
pub fn spectral_graph(node: usize, spectrum: &[f64], k: usize, gamma: f64) -> Result<Graph> {
    let s = spectrum.len();
    if k == 0 || k + 1 > s {
        return Err(Error::Config(format!("spectral knn k = {k} outside 1..={}", s.saturating_sub(1))));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let mut a = Matrix::zeros(s, s);
    for p in 0..s {
        let mut partners: Vec<(usize, f64)> = (0..s)
            .filter(|&q| q != p)
            .map(|q| (q, gaussian(spectrum[p], spectrum[q], gamma)))
            .collect();
        partners.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for &(q, w) in &partners[..k] {
            a.set(p, q, w);
        }
    }
    let sym = Matrix::from_fn(s, s, |i, j| a.get(i, j).max(a.get(j, i)));
    Ok(Graph {
        kind: GraphKind::Spectral { node },
        adjacency: sym,
    })
}

/// Trainable refinement of one adjacency (or a family sharing `w_p`).
#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    pub w_p: Matrix,
    pub beta: f64,
}

/// `A_o = A_in + beta · W_p · A_in`, symmetrized as `(A_o + A_oᵀ)/2` and
/// clamped at zero.
pub fn refine_adjacency(a_in: &Matrix, p: &RefineParams) -> Result<Matrix> {
    let prod = p.w_p.matmul(a_in)?;
    let a_o = a_in.add(&prod.scale(p.beta))?;
    let sym = a_o.add(&a_o.transpose())?.scale(0.5);
    Ok(sym.map(|v| if v > 0.0 { v } else { 0.0 }))
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalized_laplacian(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("laplacian of {}x{}", n, a.cols())));
    }
    let tilde = a.add(&Matrix::identity(n))?;
    let degrees = tilde.row_sums();
    Ok(tilde.sym_degree_scale(&degrees))
}

/// Taped form of [`refine_adjacency`]; `w_p` receives gradients.
pub fn refine_on_tape(tape: &mut Tape, a_in: Var, w_p: Var, beta: f64) -> Result<Var> {
    let prod = tape.matmul(w_p, a_in)?;
    let scaled = tape.scale(prod, beta)?;
    let a_o = tape.add(a_in, scaled)?;
    let a_t = tape.transpose(a_o)?;
    let both = tape.add(a_o, a_t)?;
    let sym = tape.scale(both, 0.5)?;
    tape.clamp_min(sym, 0.0)
}

/// Taped form of [`normalized_laplacian`], differentiable in `a`.
pub fn laplacian_on_tape(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = tape.value(a).rows();
    let eye = tape.constant(Matrix::identity(n))?;
    let tilde = tape.add(a, eye)?;
    let degrees = tape.row_sum(tilde)?;
    tape.rsqrt_diag_scale(tilde, degrees)
}

/// Memoized Laplacian keyed by a digest of the adjacency and refinement
/// parameters it was built from.
#[derive(Clone, Debug, Default)]
pub struct LaplacianCache {
    laplacian: Option<Matrix>,
    source_hash: u64,
}

fn digest(a: &Matrix, refine: Option<&RefineParams>) -> u64 {
    let mut h = DefaultHasher::new();
    a.shape().hash(&mut h);
    for v in a.data() {
        v.to_bits().hash(&mut h);
    }
    if let Some(p) = refine {
        p.beta.to_bits().hash(&mut h);
        for v in p.w_p.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

impl LaplacianCache {
    /// Returns the Laplacian of `a` (refined by `refine` when given),
    /// rebuilding it only when the inputs changed.
    pub fn get(&mut self, a: &Matrix, refine: Option<&RefineParams>) -> Result<&Matrix> {
        let key = digest(a, refine);
        if self.laplacian.is_none() || self.source_hash != key {
            let adj = match refine {
                Some(p) => refine_adjacency(a, p)?,
                None => a.clone(),
            };
            self.laplacian = Some(normalized_laplacian(&adj)?);
            self.source_hash = key;
        }
        Ok(self.laplacian.as_ref().expect("just built"))
    }
}

/// All initial graphs of a scene: one spatial graph per band and one
/// spectral graph per superpixel.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    pub spatial: Vec<Graph>,
    pub spectral: Vec<Graph>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphParams {
    pub gamma: f64,
    /// Spectral neighbors per band; `None` means `min(10, s - 1)`.
    pub knn_k: Option<usize>,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            gamma: 0.5,
            knn_k: None,
        }
    }
}

impl GraphParams {
    pub fn resolved_k(&self, bands: usize) -> usize {
        self.knn_k.unwrap_or_else(|| 10.min(bands.saturating_sub(1)))
    }
}

pub fn build_graphs(
    features: &NodeFeatures,
    seg: &Segmentation,
    params: &GraphParams,
) -> Result<GraphSet> {
    build_graphs_from_neighbors(features, seg.neighbor_sets(), params)
}

pub fn build_graphs_from_neighbors(
    features: &NodeFeatures,
    neighbors: &[Vec<usize>],
    params: &GraphParams,
) -> Result<GraphSet> {
    let s = features.bands();
    let k = params.resolved_k(s);
    let spatial = (0..s)
        .map(|i| {
            let col: Vec<f64> = (0..features.nodes()).map(|j| features.x.get(j, i)).collect();
            spatial_graph(i, &col, neighbors, params.gamma)
        })
        .collect::<Result<_>>()?;
    let spectral = (0..features.nodes())
        .map(|j| spectral_graph(j, features.x.row(j), k, params.gamma))
        .collect::<Result<_>>()?;
    Ok(GraphSet { spatial, spectral })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_weights() {
        let neighbors = vec![vec![1], vec![0], vec![]];
        let g = spatial_graph(0, &[0.0, 2.0, 0.0], &neighbors, 0.5).unwrap();
        assert!((g.adjacency.get(0, 1) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((g.adjacency.get(0, 1) - 0.135335).abs() < 1e-6);
        assert_eq!(g.adjacency.get(0, 2), 0.0);
        let g = spatial_graph(0, &[1.5, 1.5], &[vec![1], vec![0]], 0.5).unwrap();
        assert_eq!(g.adjacency.get(0, 1), 1.0);
    }

    #[test]
    fn spectral_knn() {
        let g = spectral_graph(0, &[0.0, 1.0, 2.0, 10.0], 1, 0.5).unwrap();
        assert_eq!(g.adjacency.get(3, 2), (-32.0f64).exp());
        assert_eq!(g.adjacency.get(2, 3), (-32.0f64).exp());
        let full = spectral_graph(0, &[0.0, 1.0, 2.0, 10.0], 3, 0.5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(full.adjacency.get(i, j) > 0.0, i != j);
            }
        }
        let flat = spectral_graph(0, &[3.0; 5], 2, 0.5).unwrap();
        assert!(flat.adjacency.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(spectral_graph(0, &[1.0, 2.0], 2, 0.5).is_err());
        assert!(spectral_graph(0, &[1.0, 2.0], 0, 0.5).is_err());
    }

    #[test]
    fn refine_cases() {
        let a = Matrix::from_rows(&[[0.0, 0.4, 0.1], [0.4, 0.0, 0.7], [0.1, 0.7, 0.0]]);
        let zero = RefineParams { w_p: Matrix::filled(3, 3, 0.3), beta: 0.0 };
        assert_eq!(refine_adjacency(&a, &zero).unwrap(), a);
        let ident = RefineParams { w_p: Matrix::identity(3), beta: 0.1 };
        let out = refine_adjacency(&a, &ident).unwrap();
        assert!(out.max_abs_diff(&a.scale(1.1)) < 1e-15);

        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let p = RefineParams { w_p: Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]), beta: 1.0 };
        assert_eq!(refine_adjacency(&a, &p).unwrap(), Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn laplacian_cases() {
        assert_eq!(normalized_laplacian(&Matrix::zeros(1, 1)).unwrap(), Matrix::ones(1, 1));
        let l = normalized_laplacian(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert!(l.max_abs_diff(&Matrix::filled(2, 2, 0.5)) < 1e-15);
        let path = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let l = normalized_laplacian(&path).unwrap();
        assert!((l.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((l.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((l.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn taped_forms_match_bitwise() {
        let a = Matrix::from_rows(&[[0.0, 0.4, 0.1], [0.4, 0.0, 0.7], [0.1, 0.7, 0.0]]);
        let w = Matrix::from_rows(&[[0.01, -0.2, 0.05], [0.3, 0.0, -0.1], [-0.02, 0.04, 0.2]]);
        let p = RefineParams { w_p: w.clone(), beta: 0.3 };
        let expected = normalized_laplacian(&refine_adjacency(&a, &p).unwrap()).unwrap();
        let mut tape = Tape::new();
        let av = tape.constant(a).unwrap();
        let wv = tape.param(w).unwrap();
        let r = refine_on_tape(&mut tape, av, wv, 0.3).unwrap();
        let l = laplacian_on_tape(&mut tape, r).unwrap();
        assert_eq!(tape.value(l), &expected);
    }

    #[test]
    fn cache_rebuilds_on_change() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let mut cache = LaplacianCache::default();
        let first = cache.get(&a, None).unwrap().clone();
        let p = RefineParams { w_p: Matrix::identity(2), beta: 1.0 };
        let refined = cache.get(&a, Some(&p)).unwrap().clone();
        assert_ne!(first, refined);
        assert_eq!(refined, normalized_laplacian(&refine_adjacency(&a, &p).unwrap()).unwrap());
    }
}
