//! Layered command configuration: built-in defaults, then an optional TOML
//! file, then `--set key.path=value` overrides, then dedicated flags.

use std::path::Path;

use iqsei::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Resolves a command configuration of type `T`.
///
/// Without a file the defaults are used. With a file, the file must be
/// complete apart from fields that have their own defaults. Every
/// `key.path=value` override replaces one value; `value` is read as a TOML
/// literal and falls back to a plain string.
pub fn resolve<T>(file: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => to_table(&T::default())?,
    };
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::config(format!("invalid configuration: {e}")))
}

pub fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(_) => Err(Error::Internal("configuration is not a table".into())),
        Err(e) => Err(Error::Internal(format!("cannot serialize configuration: {e}"))),
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Internal(format!("cannot serialize configuration: {e}")))
}

fn parse_literal(raw: &str) -> toml::Value {
    // Parse `v = <raw>` so arrays, numbers, booleans and quoted strings work.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {item:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}
