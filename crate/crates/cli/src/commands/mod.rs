pub mod audit;
pub mod edit;
pub mod eval;
pub mod manifest;

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Per-image output directory name: the file stem.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn check_unique_ids(images: &[impl AsRef<Path>]) -> Result<(), CliError> {
    let mut seen = HashSet::new();
    for p in images {
        let id = image_id(p.as_ref());
        if !seen.insert(id.clone()) {
            return Err(CliError::Config(format!(
                "two inputs share the image id `{id}`"
            )));
        }
    }
    Ok(())
}

pub fn check_exists(paths: &[impl AsRef<Path>]) -> Result<(), CliError> {
    for p in paths {
        let p = p.as_ref();
        if !p.exists() {
            return Err(CliError::Io(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
