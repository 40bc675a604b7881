use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelGrid};
use crate::error::{Error, Result};
use crate::ndmath::Rng;

/// One Gaussian bump of a class reflectance curve, over band index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpectrum {
    pub bumps: Vec<Bump>,
}

impl ClassSpectrum {
    pub fn eval(&self, band: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.amplitude * (-0.5 * ((band - b.center) / b.width).powi(2)).exp())
            .sum()
    }
}

fn default_seeds_per_class() -> usize {
    3
}

/// Description of a synthetic scene. Classes occupy Voronoi cells around
/// seeded sites; each class has a smooth spectral curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Explicit class curves; generated from the seed when absent.
    #[serde(default)]
    pub spectra: Option<Vec<ClassSpectrum>>,
    #[serde(default = "default_seeds_per_class")]
    pub seeds_per_class: usize,
    pub noise_sigma: f64,
    #[serde(default)]
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            bands: 20,
            classes: 5,
            spectra: None,
            seeds_per_class: default_seeds_per_class(),
            noise_sigma: 0.05,
            jitter: 0.05,
            seed: 1,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("classes: need at least 2, got {}", self.classes)));
        }
        if self.classes > u16::MAX as usize {
            return Err(Error::Config(format!("classes: {} exceeds u16 ids", self.classes)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("height/width: must be positive".into()));
        }
        if self.bands == 0 {
            return Err(Error::Config("bands: must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma: must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter: must be >= 0, got {}", self.jitter)));
        }
        if self.seeds_per_class == 0 {
            return Err(Error::Config("seeds_per_class: must be positive".into()));
        }
        if self.seeds_per_class * self.classes > self.height * self.width {
            return Err(Error::Config("seeds_per_class: more sites than pixels".into()));
        }
        if let Some(spectra) = &self.spectra {
            if spectra.len() != self.classes {
                return Err(Error::Config(format!(
                    "spectra: {} curves for {} classes",
                    spectra.len(),
                    self.classes
                )));
            }
            for (i, s) in spectra.iter().enumerate() {
                if s.bumps.is_empty() || s.bumps.len() > 3 {
                    return Err(Error::Config(format!("spectra[{i}].bumps: need 1 to 3 bumps")));
                }
                if s.bumps.iter().any(|b| !(b.width > 0.0)) {
                    return Err(Error::Config(format!("spectra[{i}].bumps: width must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Class curves, either the explicit ones or the seeded defaults.
    pub fn class_spectra(&self) -> Vec<ClassSpectrum> {
        if let Some(s) = &self.spectra {
            return s.clone();
        }
        let mut rng = Rng::new(self.seed).derive(1);
        let nb = self.bands as f64;
        (0..self.classes)
            .map(|_| {
                let count = 2 + rng.below(2);
                ClassSpectrum {
                    bumps: (0..count)
                        .map(|_| Bump {
                            center: rng.uniform_range(0.0, nb),
                            width: rng.uniform_range(nb / 10.0, nb / 4.0),
                            amplitude: rng.uniform_range(0.3, 1.5),
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

/// Renders the scene described by `spec`. Pixel class is the class of the
/// nearest site (lowest site index on ties); the spectrum is the class curve
/// times `1 + jitter·u` (u uniform in [-1, 1]) plus Gaussian noise.
pub fn synth_scene(spec: &SceneSpec) -> Result<(HsiCube<f32>, LabelGrid)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let root = Rng::new(spec.seed);
    let curves = spec.class_spectra();

    // Sites at distinct pixels so every class owns at least its own sites.
    let mut site_rng = root.derive(2);
    let mut pixels: Vec<usize> = (0..h * w).collect();
    site_rng.shuffle(&mut pixels);
    let sites: Vec<(f64, f64, usize)> = pixels[..spec.classes * spec.seeds_per_class]
        .iter()
        .enumerate()
        .map(|(k, &p)| ((p / w) as f64, (p % w) as f64, k % spec.classes))
        .collect();

    let mut labels = vec![0u16; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut best = (f64::INFINITY, 0);
            for &(sr, sc, class) in &sites {
                let d = (sr - r as f64).powi(2) + (sc - c as f64).powi(2);
                if d < best.0 {
                    best = (d, class);
                }
            }
            labels[r * w + c] = best.1 as u16 + 1;
        }
    }

    let table: Vec<Vec<f64>> = curves
        .iter()
        .map(|cv| (0..spec.bands).map(|b| cv.eval(b as f64)).collect())
        .collect();
    let mut pix_rng = root.derive(3);
    let plane = h * w;
    let mut values = vec![0f32; plane * spec.bands];
    for p in 0..plane {
        let class = labels[p] as usize - 1;
        let gain = 1.0 + spec.jitter * pix_rng.uniform_range(-1.0, 1.0);
        for b in 0..spec.bands {
            let v = table[class][b] * gain + spec.noise_sigma * pix_rng.normal();
            values[b * plane + p] = v as f32;
        }
    }
    Ok((HsiCube::new(h, w, spec.bands, values)?, LabelGrid::new(h, w, labels)?))
}

/// Accuracy of a nearest-class-mean classifier on raw labeled pixels, with
/// the class means estimated from all labeled pixels. A separability check
/// for synthetic scenes.
pub fn nearest_mean_accuracy(cube: &HsiCube<f32>, truth: &LabelGrid) -> Result<f64> {
    if (cube.height(), cube.width()) != (truth.height(), truth.width()) {
        return Err(Error::Shape("cube and label grid dimensions differ".into()));
    }
    let classes = truth.max_class() as usize;
    let bands = cube.bands();
    let mut sums = vec![vec![0f64; bands]; classes + 1];
    let mut counts = vec![0usize; classes + 1];
    for (p, &l) in truth.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        counts[l as usize] += 1;
        for (s, v) in sums[l as usize].iter_mut().zip(cube.spectrum(p)) {
            *s += v as f64;
        }
    }
    let means: Vec<Option<Vec<f64>>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.iter().map(|v| v / n as f64).collect()))
        .collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, &l) in truth.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let x = cube.spectrum(p);
        let mut best = (f64::INFINITY, 0usize);
        for (c, m) in means.iter().enumerate() {
            if let Some(m) = m {
                let d: f64 = m.iter().zip(&x).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        total += 1;
        correct += (best.1 == l as usize) as usize;
    }
    if total == 0 {
        return Err(Error::Data("no labeled pixels".into()));
    }
    Ok(correct as f64 / total as f64)
}
