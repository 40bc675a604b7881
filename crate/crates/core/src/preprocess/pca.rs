use crate::dataio::HsiCube;
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Principal components of a cube's band covariance and the projected cube.
///
/// `reduced` holds the component scores standardized to zero mean and unit
/// variance; `scale` keeps the per-component standard deviations needed to
/// undo that.
#[derive(Clone, Debug)]
pub struct PcaResult {
    /// bands × k basis, orthonormal columns.
    pub components: Matrix,
    pub mean: Vec<f64>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub scale: Vec<f64>,
    pub reduced: HsiCube<f64>,
}

impl PcaResult {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    /// Maps the reduced cube back to the original band space.
    pub fn reconstruct(&self) -> HsiCube<f64> {
        let r = &self.reduced;
        let (bands, k) = self.components.shape();
        let plane = r.pixels();
        let mut values = vec![0.0; plane * bands];
        for p in 0..plane {
            for b in 0..bands {
                let mut v = self.mean[b];
                for c in 0..k {
                    v += self.components.get(b, c) * r.get(p / r.width(), p % r.width(), c) * self.scale[c];
                }
                values[b * plane + p] = v;
            }
        }
        HsiCube::new(r.height(), r.width(), bands, values).expect("consistent dims")
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in non-increasing order and the matching eigenvectors
/// as columns. Sweeps stop once the off-diagonal Frobenius norm falls below
/// `tol` times the matrix norm.
pub fn jacobi_eigen(sym: &Matrix, tol: f64) -> Result<(Vec<f64>, Matrix)> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(Error::Shape(format!("jacobi_eigen on {}x{}", n, sym.cols())));
    }
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((values, vectors))
}

/// Projects mean-centered spectra onto the top `k` eigenvectors of the band
/// covariance. Each eigenvector's largest-magnitude entry is made positive.
pub fn pca_reduce(cube: &HsiCube<f32>, k: usize) -> Result<PcaResult> {
    let bands = cube.bands();
    let n = cube.pixels();
    if k == 0 || k > bands {
        return Err(Error::Config(format!("pca bands {k} outside 1..={bands}")));
    }
    if n < k {
        return Err(Error::Config(format!("pca needs at least {k} pixels, cube has {n}")));
    }
    let mean: Vec<f64> = (0..bands)
        .map(|b| cube.band(b).iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = (0..bands)
        .map(|b| cube.band(b).iter().map(|&v| v as f64 - mean[b]).collect())
        .collect();
    let mut cov = Matrix::zeros(bands, bands);
    for i in 0..bands {
        for j in i..bands {
            let s: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = s / n as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    if !cov.is_finite() {
        return Err(Error::Data("band covariance is not finite".into()));
    }
    let (values, vectors) = jacobi_eigen(&cov, 1e-12)?;
    let total_variance: f64 = (0..bands).map(|i| cov.get(i, i)).sum();

    let mut components = Matrix::zeros(bands, k);
    for c in 0..k {
        let col: Vec<f64> = (0..bands).map(|r| vectors.get(r, c)).collect();
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            components.set(r, c, sign * v);
        }
    }
    let explained_variance: Vec<f64> = values[..k].iter().map(|v| v.max(0.0)).collect();
    let floor = 1e-12 * explained_variance[0].max(f64::MIN_POSITIVE);
    let scale: Vec<f64> = explained_variance
        .iter()
        .map(|&v| if v > floor { v.sqrt() } else { 1.0 })
        .collect();

    let mut reduced = vec![0.0; k * n];
    for c in 0..k {
        for p in 0..n {
            let s: f64 = (0..bands).map(|b| centered[b][p] * components.get(b, c)).sum();
            reduced[c * n + p] = s / scale[c];
        }
    }
    Ok(PcaResult {
        components,
        mean,
        explained_variance,
        total_variance,
        scale,
        reduced: HsiCube::new(cube.height(), cube.width(), k, reduced)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Rng;

    fn cube_from_pixels(pixels: &[Vec<f32>]) -> HsiCube<f32> {
        let n = pixels.len();
        let bands = pixels[0].len();
        let mut values = vec![0f32; n * bands];
        for (p, px) in pixels.iter().enumerate() {
            for (b, &v) in px.iter().enumerate() {
                values[b * n + p] = v;
            }
        }
        HsiCube::new(1, n, bands, values).unwrap()
    }

    #[test]
    fn rank_one_line() {
        let pixels: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 2.0 * i as f32]).collect();
        let pca = pca_reduce(&cube_from_pixels(&pixels), 1).unwrap();
        assert!((pca.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
        let dir = [pca.components.get(0, 0), pca.components.get(1, 0)];
        assert!((dir[0] - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((dir[1] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_band_gives_zero_trailing_variance() {
        let mut rng = Rng::new(5);
        let pixels: Vec<Vec<f32>> = (0..40)
            .map(|_| vec![rng.normal() as f32, 7.0, rng.normal() as f32])
            .collect();
        let pca = pca_reduce(&cube_from_pixels(&pixels), 3).unwrap();
        assert!(pca.explained_variance[2].abs() < 1e-12);
        assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
        // Zero-variance component is orthogonal to the varying bands.
        assert!((pca.components.get(1, 2).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_out_of_range() {
        let cube = cube_from_pixels(&[vec![1.0, 2.0], vec![3.0, 1.0]]);
        assert!(matches!(pca_reduce(&cube, 0), Err(Error::Config(_))));
        assert!(matches!(pca_reduce(&cube, 3), Err(Error::Config(_))));
    }

    #[test]
    fn sign_convention() {
        let mut rng = Rng::new(9);
        let pixels: Vec<Vec<f32>> = (0..30)
            .map(|_| (0..4).map(|_| rng.normal() as f32).collect())
            .collect();
        let pca = pca_reduce(&cube_from_pixels(&pixels), 4).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..4).map(|r| pca.components.get(r, c)).collect();
            let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn standardized_scores() {
        let mut rng = Rng::new(2);
        let pixels: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..5).map(|b| (rng.normal() * (b + 1) as f64) as f32).collect())
            .collect();
        let pca = pca_reduce(&cube_from_pixels(&pixels), 3).unwrap();
        for c in 0..3 {
            let band = pca.reduced.band(c);
            let mean = band.iter().sum::<f64>() / 200.0;
            let var = band.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
