//! Output files. Every write goes to a temporary file in the destination
//! directory and is renamed into place, so readers never see half a file.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use slq_core::quadrature::SmoothedDensity;
use slq_core::{RitzSpectrum, TridiagonalMatrix};

/// First line of every `run.slq` artifact.
pub const ARTIFACT_HEADER: &str = "slq-artifact v1";

/// Sections from this header on vary between identical runs.
pub const TIMING_SECTION: &str = "[timing]";

pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Collects output files and records their paths in write order.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            written: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

pub fn spectrum_csv(s: &RitzSpectrum) -> String {
    let mut out = String::from("ritz_value,weight\n");
    for (v, w) in s.iter() {
        let _ = writeln!(out, "{v:e},{w:e}");
    }
    out
}

pub fn density_csv(d: &SmoothedDensity) -> String {
    let mut out = String::from("x,density\n");
    for (x, y) in d.grid.iter().zip(&d.density) {
        let _ = writeln!(out, "{x:e},{y:e}");
    }
    out
}

/// Parses a `spectrum_csv` file back into `(value, weight)` pairs.
pub fn parse_spectrum_csv(text: &str) -> Option<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    if lines.next()? != "ritz_value,weight" {
        return None;
    }
    lines
        .map(|l| {
            let (v, w) = l.split_once(',')?;
            Some((v.parse().ok()?, w.parse().ok()?))
        })
        .collect()
}

pub fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

/// Sectioned text artifact: `[name]` headers followed by free-form lines.
#[derive(Debug, Default)]
pub struct Artifact {
    text: String,
}

impl Artifact {
    pub fn new() -> Self {
        Self {
            text: format!("{ARTIFACT_HEADER}\n"),
        }
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.text, "\n[{name}]");
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    /// Appends text verbatim, adding a trailing newline if missing.
    pub fn block(&mut self, text: &str) -> &mut Self {
        self.text.push_str(text);
        if !text.ends_with('\n') {
            self.text.push('\n');
        }
        self
    }

    pub fn tridiagonal(&mut self, t: &TridiagonalMatrix) -> &mut Self {
        self.kv("k", t.k());
        self.kv("alpha", join_floats(t.alphas()));
        self.kv("beta", join_floats(t.betas()))
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// The part of an artifact that must be identical between identical runs.
pub fn deterministic_part(artifact: &str) -> &str {
    match artifact.find(&format!("\n{TIMING_SECTION}\n")) {
        Some(i) => &artifact[..i],
        None => artifact,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn spectrum_csv_round_trips() {
        let s = RitzSpectrum::new(vec![-1.5, 0.1, 3.0], vec![0.25, 0.5, 0.25]).unwrap();
        let parsed = parse_spectrum_csv(&spectrum_csv(&s)).unwrap();
        assert_eq!(parsed, s.iter().collect::<Vec<_>>());
    }

    #[test]
    fn timing_is_stripped() {
        let mut a = Artifact::new();
        a.section("spectrum").kv("k", 3);
        a.section("timing").kv("total_seconds", 0.5);
        let text = a.finish();
        let det = deterministic_part(&text);
        assert!(det.contains("k = 3"));
        assert!(!det.contains("total_seconds"));
    }
}
