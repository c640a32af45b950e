//! Result files: CSV tables behind a metadata comment line, JSON summaries
//! and mesh dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use treespec::mesh::Mesh2D;

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A CSV cell. Floats are written with 17 significant digits.
pub enum Cell {
    F(f64),
    U(usize),
    B(bool),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x:.16e}"),
            Cell::U(n) => n.to_string(),
            Cell::B(b) => b.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::U(n)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::B(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}

pub struct Sink {
    dir: PathBuf,
    metadata: String,
}

impl Sink {
    pub fn new(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash: String = Sha256::digest(cfg.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let seed = cfg.seed.map_or("none".to_string(), |s| s.to_string());
        Ok(Sink { dir: dir.to_path_buf(), metadata: format!("# treespec {VERSION} config_sha256={hash} seed={seed}") })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(file, "{}", self.metadata)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Node, triangle and boundary-tag tables, plus node values when given.
    pub fn mesh(&self, stem: &str, mesh: &Mesh2D, field: Option<&[f64]>) -> Result<()> {
        let nodes: Vec<_> = mesh.nodes.iter().enumerate().map(|(i, p)| row![i, p[0], p[1]]).collect();
        self.csv(&format!("{stem}_nodes.csv"), &["node", "x", "y"], &nodes)?;
        let tris: Vec<_> = mesh.triangles.iter().enumerate().map(|(i, t)| row![i, t[0], t[1], t[2]]).collect();
        self.csv(&format!("{stem}_triangles.csv"), &["triangle", "a", "b", "c"], &tris)?;
        let tags: Vec<_> = mesh.boundary.iter().map(|e| row![e.nodes[0], e.nodes[1], e.tag.name()]).collect();
        self.csv(&format!("{stem}_tags.csv"), &["a", "b", "tag"], &tags)?;
        if let Some(u) = field {
            let vals: Vec<_> = u.iter().enumerate().map(|(i, &v)| row![i, v]).collect();
            self.csv(&format!("{stem}_field.csv"), &["node", "value"], &vals)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        let s = Cell::F(0.1).render();
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(Cell::F(2.0f64.sqrt()).render().parse::<f64>().unwrap(), 2.0f64.sqrt());
    }
}
