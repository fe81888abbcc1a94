//! Experiment configuration files.
//!
//! A configuration is a TOML document with the same layout as
//! [`ExperimentConfig`]; keys left out keep their defaults. `--set
//! section.key=value` overrides are applied after the file. Unknown keys are
//! rejected so that typos cannot silently fall back to defaults.

use std::path::Path;

use lexcon_core::experiment::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

fn defaults() -> Table {
    match Value::try_from(ExperimentConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("the default configuration serializes to a table"),
    }
}

/// Overlay `patch` onto `base`, refusing keys that `base` does not have.
fn merge(base: &mut Table, patch: Table, prefix: &str) -> CliResult<()> {
    for (key, value) in patch {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(CliError::Config(format!("unknown configuration key `{path}`"))),
            (Some(Value::Table(inner)), Value::Table(patch)) => merge(inner, patch, &path)?,
            (Some(Value::Table(_)), _) => {
                return Err(CliError::Config(format!("`{path}` is a section and needs a table value")))
            }
            (Some(slot), value) => *slot = value,
        }
    }
    Ok(())
}

/// Parse a `key=value` override. The value is read as a TOML literal, falling
/// back to a bare string (`decode.lcd_mode=gbs`).
pub fn parse_override(text: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{text}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{text}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn nest(path: &[String], value: Value) -> Table {
    let mut table = Table::new();
    match path {
        [last] => {
            table.insert(last.clone(), value);
        }
        [head, rest @ ..] => {
            table.insert(head.clone(), Value::Table(nest(rest, value)));
        }
        [] => {}
    }
    table
}

/// Resolve a configuration from an optional file plus overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut table = defaults();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, file, "")?;
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        merge(&mut table, nest(&path, value), "")?;
    }
    let cfg: ExperimentConfig = Value::Table(table).try_into().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// The configuration as a TOML document.
pub fn render(cfg: &ExperimentConfig) -> CliResult<String> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))
}

/// Short content hash of any serializable value.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration values serialize to JSON");
    hex::encode(&Sha256::digest(&bytes)[..6])
}

#[cfg(test)]
mod tests {
    use super::*;
    use lexcon_core::DecodeMode;

    #[test]
    fn defaults_round_trip() {
        assert_eq!(load(None, &[]).unwrap(), ExperimentConfig::default());
        let text = render(&ExperimentConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        assert_eq!(load(Some(&path), &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 7\n[train]\nsteps = 10\n[data.toy]\nreorder_window = 3\n").unwrap();
        let cfg = load(Some(&path), &["train.steps=20".into(), "decode.lcd_mode=gbs".into()]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.steps, 20);
        assert_eq!(cfg.data.toy.reorder_window, 3);
        assert_eq!(cfg.decode.lcd_mode, DecodeMode::Gbs);
        assert_eq!(cfg.data.toy.variants, ExperimentConfig::default().data.toy.variants);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(load(None, &["train.stepz=3".into()]), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["train=3".into()]), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["version=9".into()]), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["ensemble_size=0".into()]), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["seed".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 2, ..a.clone() };
        assert_eq!(digest(&a), digest(&a.clone()));
        assert_ne!(digest(&a), digest(&b));
        assert_eq!(digest(&a).len(), 12);
    }
}
