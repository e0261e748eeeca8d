//! Results directory layout:
//!
//! ```text
//! grid.json                         manifest (config hash, model, seeds, config)
//! cells/<k>_<prior_id>/summary.json  cell means, variances, diagnostics, seed
//! cells/<k>_<prior_id>/chain.csv     retained draws
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloning::{CellKey, CellResult, CellRun};
use crate::inference::Draws;

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{path}: config hash {found} does not match the results manifest ({expected})")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ResultsError {
    ResultsError::Io {
        path: path.to_owned(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub k: u64,
    pub prior_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub config_hash: String,
    pub model: String,
    pub seed: u64,
    pub cells: Vec<ManifestCell>,
    /// The effective configuration the hash was computed from.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummaryFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub cell: CellResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResults {
    pub root: PathBuf,
    pub manifest: GridManifest,
    pub cells: Vec<CellResult>,
}

impl GridResults {
    pub fn chain(&self, key: &CellKey) -> Result<Draws, ResultsError> {
        read_chain(&self.root, key)
    }
}

/// JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ResultsError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ResultsError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn cell_dir(root: &Path, key: &CellKey) -> PathBuf {
    root.join("cells").join(key.dir_name())
}

/// Write the manifest and every cell. Files are written only after all
/// cells have finished.
pub fn write_results(root: &Path, manifest: &GridManifest, runs: &[CellRun]) -> Result<Vec<CellResult>, ResultsError> {
    fs::create_dir_all(root.join("cells")).map_err(|e| io_err(root, e))?;
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        let dir = cell_dir(root, &run.result.key);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let chain_path = dir.join("chain.csv");
        let f = fs::File::create(&chain_path).map_err(|e| io_err(&chain_path, e))?;
        run.chain
            .draws
            .write_csv(std::io::BufWriter::new(f))
            .map_err(|e| io_err(&chain_path, e))?;
        let mut cell = run.result.clone();
        cell.chain_ref = Some(format!("cells/{}/chain.csv", cell.key.dir_name()));
        write_json(
            &dir.join("summary.json"),
            &CellSummaryFile {
                config_hash: manifest.config_hash.clone(),
                cell: cell.clone(),
            },
        )?;
        out.push(cell);
    }
    write_json(&root.join("grid.json"), manifest)?;
    Ok(out)
}

/// Load a results directory, refusing cells whose config hash differs from
/// the manifest.
pub fn read_results(root: &Path) -> Result<GridResults, ResultsError> {
    let manifest: GridManifest = read_json(&root.join("grid.json"))?;
    let cells_root = root.join("cells");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&cells_root)
        .map_err(|e| io_err(&cells_root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut cells = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let path = dir.join("summary.json");
        let file: CellSummaryFile = read_json(&path)?;
        if file.config_hash != manifest.config_hash {
            return Err(ResultsError::HashMismatch {
                path,
                expected: manifest.config_hash.clone(),
                found: file.config_hash,
            });
        }
        cells.push(file.cell);
    }
    cells.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(GridResults {
        root: root.to_owned(),
        manifest,
        cells,
    })
}

pub fn read_chain(root: &Path, key: &CellKey) -> Result<Draws, ResultsError> {
    let path = cell_dir(root, key).join("chain.csv");
    let f = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    Draws::read_csv(std::io::BufReader::new(f)).map_err(|e| io_err(&path, e))
}
