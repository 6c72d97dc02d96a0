//! Output directory layout and file helpers.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use offrl::dataset::TransitionDataset;
use offrl::text::Table;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed{seed}"))
    }

    pub fn dataset(&self, seed: u64, split: &str) -> PathBuf {
        self.seed_dir(seed)
            .join("data")
            .join(format!("{split}.csv"))
    }

    pub fn manifest(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("data").join("manifest.json")
    }

    pub fn behavior_policy(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("behavior").join("policy.json")
    }

    pub fn behavior_selection(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("behavior").join("selection.csv")
    }

    pub fn cell_dir(&self, seed: u64, cell_id: &str) -> PathBuf {
        self.seed_dir(seed).join("cells").join(cell_id)
    }

    pub fn checkpoint(&self, seed: u64, cell_id: &str) -> PathBuf {
        self.cell_dir(seed, cell_id).join("checkpoint.json")
    }

    pub fn selection(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("selection.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn chart_dir(&self) -> PathBuf {
        self.report_dir().join("charts")
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    write_file(path, table.to_text())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| invalid_data(path, e))
}

pub fn write_dataset(path: &Path, ds: &TransitionDataset) -> Result<(), CliError> {
    let mut buf = Vec::new();
    ds.write_text(&mut buf)?;
    write_file(path, buf)
}

pub fn read_dataset(
    path: &Path,
    n_states: usize,
    n_actions: usize,
) -> Result<TransitionDataset, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    TransitionDataset::read_text(BufReader::new(f), n_states, n_actions, true)
        .map_err(|e| invalid_data(path, e))
}

fn invalid_data(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(
        path,
        std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    )
}
