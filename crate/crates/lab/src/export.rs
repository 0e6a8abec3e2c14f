//! File outputs: RFC 4180 CSV tables and pretty JSON documents.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Format, OutputConfig};
use crate::{LabError, Result};

/// Output directory and the enabled data formats of one run.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: PathBuf,
    csv: bool,
    json: bool,
}

impl Sink {
    pub fn new(outputs: &OutputConfig) -> Result<Self> {
        let dir = outputs.directory.clone();
        std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        Ok(Sink {
            csv: outputs.formats.contains(&Format::Csv),
            json: outputs.formats.contains(&Format::Json),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `rows` to `<dir>/<name>` when CSV output is enabled.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<Option<PathBuf>> {
        if !self.csv {
            return Ok(None);
        }
        let path = self.path(name);
        write_csv(&path, rows)?;
        Ok(Some(path))
    }

    /// Writes `value` to `<dir>/<name>` when JSON data output is enabled.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<Option<PathBuf>> {
        if !self.json {
            return Ok(None);
        }
        let path = self.path(name);
        write_json(&path, value)?;
        Ok(Some(path))
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        value: Option<f64>,
    }

    #[test]
    fn csv_quotes_and_leaves_missing_values_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &[
                Row {
                    name: "a,b",
                    value: Some(0.5),
                },
                Row { name: "c", value: None },
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "name,value\n\"a,b\",0.5\nc,\n");
    }

    #[test]
    fn disabled_formats_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let sink = Sink::new(&OutputConfig {
            directory: dir.path().join("out"),
            formats: vec![Format::Json],
            max_export_paths: 1,
        })
        .unwrap();
        assert!(sink.csv("x.csv", &[1u8]).unwrap().is_none());
        assert!(sink.json("x.json", &[1u8]).unwrap().is_some());
    }
}
