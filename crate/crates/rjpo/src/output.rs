//! CSV tables, JSON summaries and the per-run metadata record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::superres::LAPLACIAN_STENCIL;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// One CSV cell.
#[derive(Debug, Clone, Copy)]
pub enum Cell<'a> {
    F(f64),
    U(usize),
    B(bool),
    S(&'a str),
}

impl From<f64> for Cell<'_> {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell<'_> {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell<'_> {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(v: &'a str) -> Self {
        Cell::S(v)
    }
}

/// In-memory CSV with a header row. Floats carry 17 significant digits.
#[derive(Debug, Clone)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let text = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",") + "\n";
        Csv {
            columns: header.len(),
            text,
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = match c {
                Cell::F(v) => write!(self.text, "{v:.16e}"),
                Cell::U(v) => write!(self.text, "{v}"),
                Cell::B(v) => write!(self.text, "{}", *v as u8),
                Cell::S(v) => write!(self.text, "{v}"),
            };
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        std::fs::write(path, &self.text).map_err(|e| AppError::io(path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

pub fn write_json(path: &Path, value: &Value) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values always serialize") + "\n";
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Finite floats as numbers, anything else as a string.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

/// Writes `metadata.json`: every setting, the seed, build and generator.
pub fn write_metadata(config: &RunConfig) -> AppResult<PathBuf> {
    let cfg: serde_json::Map<String, Value> =
        config.pairs().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
    let meta = json!({
        "command": config.command.name(),
        "seed": config.seed,
        "build": BUILD_ID,
        "generator": rjpo_core::rng::GENERATOR_NAME,
        "laplacian_stencil": LAPLACIAN_STENCIL,
        "config": cfg,
    });
    let path = config.out.join("metadata.json");
    write_json(&path, &meta)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_precision() {
        let mut c = Csv::new(&["a", "b", "c"]);
        c.row(&[0.1.into(), 3usize.into(), true.into()]);
        let line = c.as_str().lines().nth(1).unwrap();
        let a: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert_eq!(a, 0.1);
        assert_eq!(c.as_str(), "a,b,c\n1.0000000000000001e-1,3,1\n");
    }

    #[test]
    fn metadata_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(crate::config::Command::Toy);
        cfg.out = dir.path().to_path_buf();
        cfg.seed = 99;
        let p = write_metadata(&cfg).unwrap();
        let mut back = RunConfig::defaults(crate::config::Command::Toy);
        back.apply_file(&p).unwrap();
        assert_eq!(back, cfg);
    }
}
