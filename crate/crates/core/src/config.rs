//! Plain-text key-value configuration files.
//!
//! One `key = value` per line, `#` starts a comment, `[section]` headers
//! prefix the keys that follow (`[train]` + `lr = 0.0002` becomes
//! `train.lr`). Keys outside any section are stored bare.

use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {ty}")]
    BadValue {
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            let full_key = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            entries.insert(full_key, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_as(key, v, "f64"),
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        parse_as(key, self.require(key)?, "f64")
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_as(key, v, "usize"),
        }
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, ConfigError> {
        parse_as(key, self.require(key)?, "usize")
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_as(key, v, "u64"),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: other.to_string(),
                    ty: "bool",
                }),
            },
        }
    }

    pub fn get_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str, ty: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        ty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = Config::parse(
            "# camera\nfx = 100.0\n[train]\nlr = 0.0002 # base rate\nepochs=20\n",
        )
        .unwrap();
        assert_eq!(cfg.require_f64("fx").unwrap(), 100.0);
        assert_eq!(cfg.require_f64("train.lr").unwrap(), 0.0002);
        assert_eq!(cfg.require_usize("train.epochs").unwrap(), 20);
        assert_eq!(cfg.get_f64("train.missing", 7.0).unwrap(), 7.0);
    }

    #[test]
    fn rejects_malformed_lines() {
        let err = Config::parse("fx 100").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 1, .. }));
    }

    #[test]
    fn missing_required_key_is_named() {
        let cfg = Config::parse("").unwrap();
        let err = cfg.require_f64("cam_height").unwrap_err();
        assert!(err.to_string().contains("cam_height"));
    }
}
