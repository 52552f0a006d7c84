use std::path::{Path, PathBuf};

use safe_edit_core::protocol::{parse_detections, validate_detection, DetectionSet, PolicyPrompt};
use safe_edit_core::VlmClient;

use super::{image_id, write_json};
use crate::error::CliError;

/// Audits one image. The DetectionSet is written to
/// `<out_dir>/<image_id>/detections.json` and returned.
pub fn audit_one(
    client: &VlmClient,
    prompt: &PolicyPrompt,
    image: &Path,
    out_dir: &Path,
) -> Result<(PathBuf, DetectionSet), CliError> {
    let bytes =
        std::fs::read(image).map_err(|e| CliError::Io(format!("{}: {e}", image.display())))?;
    image::load_from_memory(&bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", image.display())))?;

    let text = client.audit_image(&bytes, prompt.text())?;
    let set = parse_detections(&text)?;
    for (i, d) in set.iter().enumerate() {
        let violations = validate_detection(d);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(CliError::Protocol(format!(
                "detection {i}: {}",
                list.join("; ")
            )));
        }
    }
    let dir = out_dir.join(image_id(image));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join("detections.json");
    write_json(&path, &set)?;
    Ok((path, set))
}
