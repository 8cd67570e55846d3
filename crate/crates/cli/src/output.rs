//! CSV emission and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nlhj_core::mather::DiscreteMeasure;
use nlhj_core::numerics::format_g17;
use nlhj_core::GridFunction;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub stage: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_seconds: f64,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    pub acceptance: BTreeMap<String, bool>,
}

impl RunManifest {
    fn new(config_hash: String, seed: u64, threads: usize) -> Self {
        let versions = BTreeMap::from([
            ("nlhj-core".to_string(), nlhj_core::VERSION.to_string()),
            ("nlhj-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        RunManifest {
            config_hash,
            versions,
            seed,
            threads,
            stages: Vec::new(),
            files: Vec::new(),
            acceptance: BTreeMap::new(),
        }
    }
}

/// Writes stage outputs into one directory and keeps the manifest in sync.
///
/// An existing manifest for the same config hash is extended, so separate
/// invocations can feed one another; any other manifest is discarded.
pub struct Emitter {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl Emitter {
    pub fn open(dir: &Path, config_hash: String, seed: u64, threads: usize) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(MANIFEST);
        let previous = fs::read_to_string(&path)
            .ok()
            .and_then(|text| serde_json::from_str::<RunManifest>(&text).ok())
            .filter(|m| m.config_hash == config_hash && m.seed == seed);
        let mut manifest = previous.unwrap_or_else(|| RunManifest::new(config_hash, seed, threads));
        manifest.threads = threads;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, stage: &str, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        let record = FileRecord {
            path: name.to_string(),
            stage: stage.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        };
        match self.manifest.files.iter_mut().find(|f| f.path == name) {
            Some(f) => *f = record,
            None => self.manifest.files.push(record),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, stage: &str, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Manifest(e.to_string()))?;
        self.write(stage, name, &(text + "\n"))
    }

    /// Files recorded for `stage`, in emission order.
    pub fn files_of(&self, stage: &str) -> Vec<String> {
        self.manifest
            .files
            .iter()
            .filter(|f| f.stage == stage)
            .map(|f| f.path.clone())
            .collect()
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.manifest.stages.iter().any(|s| s.name == stage)
    }

    /// Reads a file that must be listed in the manifest with a matching checksum.
    pub fn read(&self, name: &str) -> Result<String, CliError> {
        let record = self
            .manifest
            .files
            .iter()
            .find(|f| f.path == name)
            .ok_or_else(|| CliError::Manifest(format!("{name} is not listed in the manifest")))?;
        let path = self.dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        if sha256_hex(text.as_bytes()) != record.sha256 {
            return Err(CliError::Manifest(format!(
                "{} changed since it was written",
                path.display()
            )));
        }
        Ok(text)
    }

    pub fn record_stage(&mut self, name: &str, wall_seconds: f64, summary: String) {
        let record = StageRecord {
            name: name.to_string(),
            wall_seconds,
            summary,
        };
        match self.manifest.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => *s = record,
            None => self.manifest.stages.push(record),
        }
    }

    pub fn flag(&mut self, name: &str, value: bool) {
        self.manifest.acceptance.insert(name.to_string(), value);
    }

    pub fn save(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Manifest(e.to_string()))?;
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

fn csv(header: &str, rows: impl Iterator<Item = [f64; 3]>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_g17(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `x,u,residual` table.
pub fn solution_csv(u: &GridFunction, residual: &GridFunction) -> String {
    csv("x,u,residual", (0..u.n()).map(|i| [u.x(i), u[i], residual[i]]))
}

/// `lambda,sup_gap,lambda_u_z` table.
pub fn gap_csv(rows: &[[f64; 3]]) -> String {
    csv("lambda,sup_gap,lambda_u_z", rows.iter().copied())
}

/// `x,xi,weight` table over the whole state-velocity grid.
pub fn measure_csv(mu: &DiscreteMeasure) -> String {
    let g = &mu.grid;
    csv(
        "x,xi,weight",
        mu.weights.iter().enumerate().map(|(k, &w)| {
            let (i, q) = g.split(k);
            [g.x(i), g.q.xi[q], w]
        }),
    )
}

/// Parses a three-column table written by this module, checking its header.
pub fn parse_csv(text: &str, header: &str) -> Result<Vec<[f64; 3]>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(CliError::Manifest(format!("expected CSV header {header}")));
    }
    lines
        .map(|line| {
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Manifest(format!("bad CSV cell in {line:?}: {e}")))?;
            <[f64; 3]>::try_from(cells).map_err(|_| CliError::Manifest(format!("expected 3 columns in {line:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solution_table_round_trips_exactly() {
        let u = GridFunction::from_fn(32, |x| (x * 7.0).sin() / 3.0);
        let r = GridFunction::from_fn(32, |x| 1e-17 * x);
        let rows = parse_csv(&solution_csv(&u, &r), "x,u,residual").unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[1], u[i]);
            assert_eq!(row[2], r[i]);
        }
    }

    #[test]
    fn header_is_checked() {
        assert!(parse_csv("a,b,c\n1,2,3\n", "x,u,residual").is_err());
        assert!(parse_csv("x,u,residual\n1,2\n", "x,u,residual").is_err());
    }
}
