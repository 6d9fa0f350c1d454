//! File-backed document store.
//!
//! ```text
//! <root>/cases/<case_name>/manifest.json
//! <root>/cases/<case_name>/scenarios/<scenario_name>.json
//! ```
//!
//! Every write goes to a temporary file in the target directory and is then
//! renamed over the destination, so readers never observe a partial document.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use fewsim_core::ScenarioResult;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MiddlewareError, Result};
use crate::grid::CaseConfig;
use crate::job::JobRecord;
use fewsim_core::ScenarioSpec;

/// Environment variable overriding the default store location.
pub const DATA_DIR_ENV: &str = "FEWSIM_DATA_DIR";

/// `$FEWSIM_DATA_DIR`, or `./fewsim-data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fewsim-data"))
}

/// Per-case document: configuration, expanded grid and job state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub config: CaseConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub job: JobRecord,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MiddlewareError + '_ {
    move |source| MiddlewareError::Io {
        path: path.display().to_string(),
        source,
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.{}-{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("doc"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| MiddlewareError::Corrupt {
        path: path.display().to_string(),
        source,
    })
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        let cases = root.join("cases");
        std::fs::create_dir_all(&cases).map_err(io_err(&cases))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn case_dir(&self, case: &str) -> PathBuf {
        self.root.join("cases").join(case)
    }

    fn manifest_path(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("manifest.json")
    }

    pub fn result_path(&self, case: &str, scenario: &str) -> PathBuf {
        self.case_dir(case).join("scenarios").join(format!("{scenario}.json"))
    }

    /// Case names with a readable manifest, sorted.
    pub fn case_names(&self) -> Result<Vec<String>> {
        let dir = self.root.join("cases");
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && self.manifest_path(&name).is_file() {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn read_manifest(&self, case: &str) -> Result<CaseManifest> {
        let path = self.manifest_path(case);
        if !path.is_file() {
            return Err(MiddlewareError::UnknownCase(case.to_string()));
        }
        read_json(&path)
    }

    pub fn write_manifest(&self, manifest: &CaseManifest) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        write_atomic(&self.manifest_path(&manifest.config.case_name), &bytes)
    }

    /// Serializes a result; split from [`Store::write_result_bytes`] so the
    /// expensive part can run outside any lock.
    pub fn encode_result(result: &ScenarioResult) -> Vec<u8> {
        serde_json::to_vec(result).expect("result serializes")
    }

    pub fn write_result_bytes(&self, case: &str, scenario: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.result_path(case, scenario), bytes)
    }

    pub fn write_result(&self, case: &str, result: &ScenarioResult) -> Result<()> {
        self.write_result_bytes(case, &result.scenario.scenario_name, &Self::encode_result(result))
    }

    pub fn has_result(&self, case: &str, scenario: &str) -> bool {
        self.result_path(case, scenario).is_file()
    }

    pub fn read_result(&self, case: &str, scenario: &str) -> Result<ScenarioResult> {
        let path = self.result_path(case, scenario);
        if !path.is_file() {
            return Err(MiddlewareError::NotFound(format!(
                "result for scenario `{scenario}` in case `{case}`"
            )));
        }
        read_json(&path)
    }

    pub fn delete_result(&self, case: &str, scenario: &str) -> Result<()> {
        let path = self.result_path(case, scenario);
        match std::fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(&path)(e)),
            _ => Ok(()),
        }
    }

    pub fn delete_case(&self, case: &str) -> Result<()> {
        let dir = self.case_dir(case);
        if !dir.exists() {
            return Err(MiddlewareError::UnknownCase(case.to_string()));
        }
        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))
    }
}
