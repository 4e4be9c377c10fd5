//! Flat key-value run configuration.
//!
//! One TOML document whose keys mirror the command-line flags one to one
//! (`manifest`, `arpa`, `nbins`, `trim`, `snrs`, `boot`, `seed`, `out`,
//! `target_error`, ...). Flags win over the file; the file wins over the
//! `KBOOST_SEED` environment variable; built-in defaults come last.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("config key `{key}`: expected {expected}, got `{got}`")]
    BadValue {
        key: String,
        expected: &'static str,
        got: String,
    },
}

/// Parsed flat config; empty when no file was given.
#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    table: toml::Table,
}

impl FlatConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let table: toml::Table = body.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok(FlatConfig { table })
    }

    fn bad(&self, key: &str, expected: &'static str) -> ConfigError {
        ConfigError::BadValue {
            key: key.to_string(),
            expected,
            got: self.table[key].to_string(),
        }
    }

    pub fn get_string(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    pub fn get_path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        Ok(self.get_string(key)?.map(PathBuf::from))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(toml::Value::String(s)) => {
                s.parse().map(Some).map_err(|_| self.bad(key, "a number"))
            }
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(toml::Value::String(s)) => s
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, "a non-negative integer")),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(v)) => Ok(Some(*v)),
            Some(_) => Err(self.bad(key, "a boolean")),
        }
    }

    /// SNR grids are written the same way as on the command line:
    /// `"-10,-5,0,5"`, or as a TOML integer array.
    pub fn get_snrs(&self, key: &str) -> Result<Option<Vec<i32>>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => parse_snr_list(s)
                .map(Some)
                .map_err(|_| self.bad(key, "comma-separated integers")),
            Some(toml::Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        toml::Value::Integer(v) => out.push(*v as i32),
                        _ => return Err(self.bad(key, "an integer array")),
                    }
                }
                Ok(Some(out))
            }
            Some(_) => Err(self.bad(key, "comma-separated integers")),
        }
    }
}

/// Parse `-10,-5,0,5,10` into dB values.
pub fn parse_snr_list(s: &str) -> Result<Vec<i32>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<i32>()
                .map_err(|_| format!("bad SNR value `{t}`"))
        })
        .collect()
}

/// Seed fallback from the environment.
pub fn env_seed() -> Option<u64> {
    std::env::var("KBOOST_SEED").ok()?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_mirror_file_keys() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "manifest = \"dev.tsv\"\ntrim = 0.05\nboot = 999\nsnrs = \"-10,-5,0\"\nnbins = 3\nlog_space = true"
        )
        .unwrap();
        let c = FlatConfig::load(f.path()).unwrap();
        assert_eq!(c.get_path("manifest").unwrap().unwrap(), PathBuf::from("dev.tsv"));
        assert_eq!(c.get_f64("trim").unwrap(), Some(0.05));
        assert_eq!(c.get_usize("boot").unwrap(), Some(999));
        assert_eq!(c.get_snrs("snrs").unwrap(), Some(vec![-10, -5, 0]));
        assert_eq!(c.get_bool("log_space").unwrap(), Some(true));
        assert_eq!(c.get_string("absent").unwrap(), None);
    }

    #[test]
    fn toml_arrays_also_work_for_snrs() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "snrs = [-10, 0, 10]").unwrap();
        let c = FlatConfig::load(f.path()).unwrap();
        assert_eq!(c.get_snrs("snrs").unwrap(), Some(vec![-10, 0, 10]));
    }

    #[test]
    fn type_errors_name_the_key() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "trim = \"lots\"").unwrap();
        let c = FlatConfig::load(f.path()).unwrap();
        match c.get_f64("trim").unwrap_err() {
            ConfigError::BadValue { key, .. } => assert_eq!(key, "trim"),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn snr_list_parsing() {
        assert_eq!(parse_snr_list("-10, -5,0").unwrap(), vec![-10, -5, 0]);
        assert!(parse_snr_list("a,b").is_err());
    }
}
