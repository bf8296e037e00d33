//! Dataset and artifact files.

use std::fs;
use std::path::Path;

use attrag_core::Dataset;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline. Output is a pure function of the
/// value, so reruns overwrite files with identical bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    match serde_json::from_str::<Dataset>(&text) {
        Ok(d) => Ok(d),
        Err(e) => {
            // validation failures surface through serde as custom errors;
            // rerun the check directly to keep the structured error
            if let Ok(raw) = serde_json::from_str::<attrag_core::corpus::RawDataset>(&text) {
                if let Err(err) = Dataset::try_from(raw) {
                    return Err(Error::Corpus(err));
                }
            }
            Err(Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        }
    }
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_json(path, dataset)
}
