use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::PrepConfig;
use crate::train::TrainConfig;

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment: input files, preprocessing knobs and training settings.
/// Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Cube prefix (`<prefix>.hdr.json` + `<prefix>.raw`).
    pub cube: PathBuf,
    /// Label prefix (`<prefix>.labels.json` + `<prefix>.labels.raw`).
    pub labels: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub palette: Option<PathBuf>,
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(cube: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        RunConfig {
            cube: cube.into(),
            labels: labels.into(),
            out_dir: default_out_dir(),
            palette: None,
            prep: PrepConfig::default(),
            train: TrainConfig::default(),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.hash())
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.cube, &mut self.labels, &mut self.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.palette {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses JSON, reporting the offending field path on schema violations.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{origin}: field `{path}`: {}", e.into_inner()))
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: RunConfig = parse_json(&text, &path.display().to_string())?;
    cfg.train.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(base);
    Ok(cfg)
}
