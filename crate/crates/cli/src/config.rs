//! Optional TOML configuration file. Every key is optional; command-line
//! flags win over the file, the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,

    pub data_dir: Option<PathBuf>,
    pub gso: Option<String>,

    pub model: Option<String>,
    pub k: Option<usize>,
    pub width: Option<usize>,
    pub activation: Option<String>,
    pub layer: Option<String>,

    pub eta: Option<f64>,
    pub epochs: Option<usize>,
    pub kappa: Option<f64>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<String>,
    pub reps: Option<usize>,

    pub n: Option<usize>,
    pub len: Option<usize>,
    pub dt: Option<usize>,
    pub anisotropy: Option<f64>,
    pub m_train: Option<usize>,
    pub m_test: Option<usize>,

    pub alpha: Option<f64>,
    pub nu: Option<f64>,
    pub xi: Option<f64>,
    pub count: Option<usize>,
    pub method: Option<String>,
    pub mu_mode: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config file {}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// Flag, then config value, then default.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c: FileConfig = toml::from_str("k = 3\neta = 0.5\ngso = \"cxy\"\n").unwrap();
        assert_eq!(c.k, Some(3));
        assert_eq!(c.eta, Some(0.5));
        assert!(toml::from_str::<FileConfig>("kk = 3").is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(pick(&Some(1), &Some(2), 3), 1);
        assert_eq!(pick(&None, &Some(2), 3), 2);
        assert_eq!(pick::<i32>(&None, &None, 3), 3);
    }
}
