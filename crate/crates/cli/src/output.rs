//! Run artifacts: row files, JSON summaries and the resolved config.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use ogp_core::report::{output_path, write_csv, write_json};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Everything needed to rerun a command.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a, P: Serialize> {
    pub command: &'a str,
    pub params: &'a P,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub format: Format,
    pub threads: Option<usize>,
    pub version: &'static str,
}

/// Writes `stem.{csv,json}`, `stem.summary.json` and `stem.config.json`
/// under one directory.
pub struct Sink {
    pub dir: PathBuf,
    pub stem: String,
    pub format: Format,
}

impl Sink {
    pub fn rows<S: Serialize>(&self, rows: &[S]) -> Result<PathBuf> {
        let path = match self.format {
            Format::Csv => {
                let p = output_path(&self.dir, &self.stem, "csv")?;
                write_csv(&p, rows)?;
                p
            }
            Format::Json => {
                let p = output_path(&self.dir, &self.stem, "json")?;
                write_json(&p, rows)?;
                p
            }
        };
        Ok(path)
    }

    pub fn summary<S: Serialize + ?Sized>(&self, value: &S) -> Result<PathBuf> {
        let p = output_path(&self.dir, &format!("{}.summary", self.stem), "json")?;
        write_json(&p, value)?;
        Ok(p)
    }

    pub fn config<P: Serialize>(&self, config: &RunConfig<'_, P>) -> Result<PathBuf> {
        let p = output_path(&self.dir, &format!("{}.config", self.stem), "json")?;
        write_json(&p, config)?;
        Ok(p)
    }
}
