//! Flat key-value configuration text.
//!
//! ```text
//! # comment
//! train.epochs = 40
//! loss.margin = 0.1
//! ```
//!
//! Keys are dotted paths. Blank lines and `#` comments are ignored; later
//! entries override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One `key = value` line with its 1-based line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got {line:?}")))?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(i + 1, format!("invalid key {key:?}")));
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Splits a command-line override `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(format!("override must look like key=value, got {s:?}"))),
    }
}

/// Parses a config value, naming the key on failure.
pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// Comma-separated list; `-` or an empty value is the empty list.
pub fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if value.is_empty() || value == "-" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

/// Resolves a possibly abbreviated key against the known dotted keys. An
/// exact match wins; otherwise a unique known key ending in `.{key}` is
/// accepted.
pub fn resolve_key<'a>(key: &str, known: &[&'a str]) -> Result<&'a str> {
    if let Some(k) = known.iter().find(|k| **k == key) {
        return Ok(k);
    }
    let suffix = format!(".{key}");
    let hits: Vec<&'a str> = known.iter().copied().filter(|k| k.ends_with(&suffix)).collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::config(format!("unknown config key {key:?}"))),
        many => Err(Error::config(format!("ambiguous config key {key:?}: {}", many.join(", ")))),
    }
}

/// Renders `(key, value)` pairs as config text, sorted by key.
pub fn render(pairs: &BTreeMap<String, String>) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
