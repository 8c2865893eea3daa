//! Report and artifact writing plus the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use xcov_core::dataio;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub xcov: String,
    pub schema_version: u32,
}

/// Everything needed to rerun a command and find what it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    /// Resolved configuration after flags, config file and defaults.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    /// Unix seconds.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<PathBuf>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Output directory that records every file written to it.
pub struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    pub fn new(dir: &Path, subcommand: &str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                schema_version: xcov_core::SCHEMA_VERSION,
                subcommand: subcommand.to_string(),
                config: serde_json::Value::Null,
                seeds: Vec::new(),
                versions: Versions { xcov: env!("CARGO_PKG_VERSION").to_string(), schema_version: xcov_core::SCHEMA_VERSION },
                started: now(),
                finished: 0.0,
                outputs: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) -> anyhow::Result<()> {
        self.manifest.config = serde_json::to_value(cfg)?;
        Ok(())
    }

    pub fn add_seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.manifest.seeds.extend(seeds);
    }

    fn record(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        if !self.manifest.outputs.contains(&p) {
            self.manifest.outputs.push(p.clone());
        }
        p
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> anyhow::Result<PathBuf> {
        let p = self.record(name);
        dataio::save_csv(m, &p)?;
        Ok(p)
    }

    /// CSV with a header row; values in 17 significant digits.
    pub fn table(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> anyhow::Result<PathBuf> {
        let p = self.record(name);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn params(&mut self, name: &str, shape: &xcov_core::models::ParamShape, values: &[f64]) -> anyhow::Result<PathBuf> {
        let p = self.record(name);
        xcov_core::models::save_params(&p, shape, values)?;
        Ok(p)
    }

    /// Writes `report.json` wrapping `body` with the schema version.
    pub fn report<T: Serialize>(&mut self, body: &T) -> anyhow::Result<serde_json::Value> {
        let mut v = serde_json::json!({
            "schema_version": xcov_core::SCHEMA_VERSION,
            "subcommand": self.manifest.subcommand,
        });
        let b = serde_json::to_value(body)?;
        if let (Some(obj), serde_json::Value::Object(extra)) = (v.as_object_mut(), b) {
            obj.extend(extra);
        }
        let p = self.record("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(&v)?)?;
        Ok(v)
    }

    /// Writes `manifest.json`, listing itself among the outputs.
    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        self.record("manifest.json");
        self.manifest.finished = now();
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
