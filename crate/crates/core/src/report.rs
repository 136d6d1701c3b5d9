//! Output files shared by the experiment harnesses and the CLI.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// `experiment_n{n}_alpha{alpha}_kappa{kappa}_seed{seed}`.
pub fn file_stem(experiment: &str, n: usize, alpha: f64, kappa: f64, seed: u64) -> String {
    format!("{experiment}_n{n}_alpha{alpha}_kappa{kappa}_seed{seed}")
}

/// `dir/stem.ext`, creating `dir` if needed.
pub fn output_path(dir: &Path, stem: &str, ext: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(format!("{stem}.{ext}")))
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}
