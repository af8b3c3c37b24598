//! Dataset manifests: one JSON object per line,
//! `{"id": ..., "hq_left": ..., "hq_right": ...}`.
//!
//! Relative image paths are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub hq_left: PathBuf,
    pub hq_right: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| CliError::user(format!("{}:{}: {err}", origin.display(), n + 1)))?;
        if !valid_id(&e.id) {
            return Err(CliError::user(format!(
                "{}:{}: id `{}` must be non-empty and use only letters, digits, `-`, `_` and `.`",
                origin.display(),
                n + 1,
                e.id
            )));
        }
        if !seen.insert(e.id.clone()) {
            return Err(CliError::user(format!("{}:{}: duplicate id `{}`", origin.display(), n + 1, e.id)));
        }
        e.hq_left = base.join(&e.hq_left);
        e.hq_right = base.join(&e.hq_right);
        out.push(e);
    }
    if out.is_empty() {
        return Err(CliError::user(format!("{} lists no images", origin.display())));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("read manifest", path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse(&text, base, path)
}

pub fn write(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io("write", path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let text = "{\"id\":\"a\",\"hq_left\":\"hq/a_L.png\",\"hq_right\":\"/abs/a_R.png\"}\n\n";
        let m = parse(text, Path::new("/data"), Path::new("m.jsonl")).unwrap();
        assert_eq!(m[0].hq_left, PathBuf::from("/data/hq/a_L.png"));
        assert_eq!(m[0].hq_right, PathBuf::from("/abs/a_R.png"));
    }

    #[test]
    fn rejects_bad_lines() {
        let base = Path::new(".");
        let o = Path::new("m.jsonl");
        assert!(parse("", base, o).is_err());
        assert!(parse("{\"id\":\"a\"}", base, o).is_err());
        assert!(parse("{\"id\":\"../x\",\"hq_left\":\"l\",\"hq_right\":\"r\"}", base, o).is_err());
        let dup = "{\"id\":\"a\",\"hq_left\":\"l\",\"hq_right\":\"r\"}\n".repeat(2);
        let e = parse(&dup, base, o).unwrap_err();
        assert!(e.to_string().contains("m.jsonl:2"));
    }
}
