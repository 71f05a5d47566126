//! Flat `key = value` configuration files.
//!
//! Lines starting with `#` are comments; list values are comma-separated.
//! Every key an experiment reads is recorded with its effective value, so the
//! echo written beside the outputs includes defaults. Keys nobody reads are an
//! error.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown keys for this experiment: {0}")]
    Unknown(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    raw: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: trimmed.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: trimmed.to_string(),
                });
            }
            if raw.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: line_no,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self {
            raw,
            echo: BTreeMap::new(),
        })
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.raw.insert(key.to_string(), value.to_string());
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::Value {
                key: key.to_string(),
                value: v,
            }),
        }
    }

    pub fn scalar<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        let v = self.take(key)?.unwrap_or(default);
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A mandatory scalar.
    pub fn required<T: FromStr + Display>(&mut self, key: &str) -> Result<T, ConfigError> {
        let v: T = self.take(key)?.ok_or_else(|| ConfigError::Invalid {
            key: key.to_string(),
            message: "required".into(),
        })?;
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn list<T: FromStr + Display + Clone>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError> {
        let values = match self.raw.remove(key) {
            None => default.to_vec(),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| ConfigError::Value {
                        key: key.to_string(),
                        value: v.clone(),
                    })
                })
                .collect::<Result<Vec<T>, _>>()?,
        };
        if values.is_empty() {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                message: "list must be non-empty".into(),
            });
        }
        let joined = values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.echo.insert(key.to_string(), joined);
        Ok(values)
    }

    /// A non-empty list of strictly positive values.
    pub fn positive_list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T: FromStr + Display + Clone + PartialOrd + Default,
    {
        let values = self.list(key, default)?;
        if values.iter().any(|v| !(*v > T::default())) {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                message: "values must be positive".into(),
            });
        }
        Ok(values)
    }

    pub fn positive<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + Display + PartialOrd + Default,
    {
        let v = self.scalar(key, default)?;
        if !(v > T::default()) {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                message: "must be positive".into(),
            });
        }
        Ok(v)
    }

    /// Errors if any key in the file was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        if self.raw.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(self.raw.keys().cloned().collect::<Vec<_>>().join(", ")))
        }
    }

    /// Effective settings, one `key = value` line each, sorted by key.
    pub fn echo(&self) -> String {
        self.echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::echo`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_and_lists() {
        let mut c = Config::parse("# comment\nseed = 4\nn = 10, 30 ,50\n\n").unwrap();
        assert_eq!(c.scalar::<u64>("seed", 0).unwrap(), 4);
        assert_eq!(c.list::<u32>("n", &[1]).unwrap(), vec![10, 30, 50]);
        assert_eq!(c.scalar::<f64>("absent", 0.5).unwrap(), 0.5);
        c.finish().unwrap();
        assert_eq!(c.echo(), "absent = 0.5\nn = 10,30,50\nseed = 4\n");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Config::parse("a = 1\na = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let mut c = Config::parse("n = 1,x\nstray = 3").unwrap();
        assert!(c.list::<u32>("n", &[]).is_err());
        assert!(matches!(c.finish(), Err(ConfigError::Unknown(_))));
        let mut c = Config::parse("eps = 0.1, -0.2").unwrap();
        assert!(c.positive_list::<f64>("eps", &[]).is_err());
    }

    #[test]
    fn hash_tracks_effective_values() {
        let mut a = Config::parse("x = 1.0").unwrap();
        let mut b = Config::parse("").unwrap();
        a.scalar("x", 2.0).unwrap();
        b.scalar("x", 1.0).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = Config::parse("").unwrap();
        c.scalar("x", 3.0).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
