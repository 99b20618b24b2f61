//! Flat `key = value` text files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored and a key
//! may appear only once. Both sensor configs and scene declarations use this
//! syntax; scene keys carry a `scene.` prefix.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

/// Parsed key/value document. Keys are kept sorted for stable iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    entries: BTreeMap<String, Entry>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(line, "empty key"));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(Error::parse(
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(
            key.into(),
            Entry {
                value: value.into(),
                line: 0,
            },
        );
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the value under `key`, if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| Error::parse(e.line, format!("`{key}`: {err}"))),
        }
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse_bool(&e.value)
                .map(Some)
                .ok_or_else(|| Error::parse(e.line, format!("`{key}`: expected a boolean, got `{}`", e.value))),
        }
    }
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let doc = KvDocument::parse("# header\n\nwidth = 64 # trailing\nnoise_mode=off\n").unwrap();
        assert_eq!(doc.get("width").unwrap().value, "64");
        assert_eq!(doc.get("width").unwrap().line, 3);
        assert_eq!(doc.get("noise_mode").unwrap().value, "off");
        assert_eq!(doc.keys().count(), 2);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            KvDocument::parse("a = 1\na = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(KvDocument::parse("just words"), Err(Error::Parse { line: 1, .. })));
        assert!(KvDocument::parse(" = 3").is_err());
    }

    #[test]
    fn typed_access() {
        let doc = KvDocument::parse("x = 2.5\nb = yes\nbad = nope").unwrap();
        assert_eq!(doc.parsed::<f64>("x").unwrap(), Some(2.5));
        assert_eq!(doc.parsed::<f64>("missing").unwrap(), None);
        assert_eq!(doc.flag("b").unwrap(), Some(true));
        assert!(doc.flag("bad").is_err());
        assert!(doc.parsed::<u32>("x").is_err());
    }
}
