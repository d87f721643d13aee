use std::fs;
use std::path::PathBuf;

use conceptlens::provenance::Provenance;
use conceptlens::{Error, Result};
use serde::Serialize;

use crate::config::JobConfig;

/// The configured output directory; commands write nowhere else.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(cfg: &JobConfig) -> Result<Self> {
        let dir = cfg.output_dir.clone().ok_or_else(|| Error::validation("no output directory given (--out)"))?;
        fs::create_dir_all(&dir)?;
        Ok(Output { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)).map_err(|e| Error::format(format!("{name}: {e}")))?;
        for r in rows {
            w.serialize(r).map_err(|e| Error::format(format!("{name}: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn provenance(&self, cfg: &JobConfig) -> Result<Provenance> {
        Ok(Provenance::new(cfg)?
            .with_seed("model", cfg.model.seed)
            .with_seed("task", cfg.task.seed)
            .with_seed("train", cfg.train.seed)
            .with_seed("experiment", cfg.experiment.seed)
            .with_seed("analysis", cfg.analysis.seed))
    }

    /// Writes `provenance.json`, covering the CSV files of this command.
    pub fn finish(&self, prov: &Provenance) -> Result<()> {
        self.json("provenance.json", prov)
    }
}

#[derive(Debug, Serialize)]
pub struct OverlapRow {
    pub a: String,
    pub b: String,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct PcRow {
    pub layer: usize,
    pub k: usize,
    pub explained_fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct EigenRow {
    pub component: usize,
    pub eigenvalue: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct HeadCieRow {
    pub condition: String,
    pub layer: usize,
    pub head: usize,
    pub cie: f64,
    pub significant: bool,
    pub threshold: f64,
}

#[derive(Debug, Serialize)]
pub struct SpanRow {
    pub run: String,
    pub layer: usize,
    pub head: usize,
    pub span: String,
    pub mass: f64,
}

#[derive(Debug, Serialize)]
pub struct HeadMetricRow {
    pub run: String,
    pub layer: usize,
    pub head: usize,
    pub alpha: f64,
    pub align: Option<f64>,
    pub reference_layer: usize,
    pub alpha_denominator: String,
}
