use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Loss in units of 10^-2, rounded to 3 decimals.
pub fn x100(loss: f64) -> f64 {
    (loss * 1e5).round() / 1e3
}

/// A relative value as a percentage with 3 decimals.
pub fn percent(v: f64) -> f64 {
    (v * 1e5).round() / 1e3
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Write { path, source })
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("results serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn svg(&self, name: &str, svg: String) -> Result<(), CliError> {
        self.write(name, svg.as_bytes())
    }

    /// Writes a header and rows of already formatted fields.
    pub fn csv(
        &self,
        name: &str,
        header: &[String],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let path = self.path(name);
        let err = |e: csv::Error| CliError::Write {
            path: path.clone(),
            source: std::io::Error::other(e),
        };
        let file = File::create(&path).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })
    }
}

/// File-name-safe form of a feature name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(x100(0.252134), 25.213);
        assert_eq!(percent(0.0450049), 4.5);
        assert_eq!(slug("Veh Brand/2"), "Veh_Brand_2");
    }
}
