use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

/// Scalar results plus the files a scenario wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub scalars: Vec<(String, Scalar)>,
    pub files: Vec<PathBuf>,
    pub config_echo: Vec<(String, String)>,
}

impl ScenarioReport {
    pub(super) fn new(scenario: Scenario, seed: u64, config_echo: Vec<(String, String)>) -> Self {
        Self {
            scenario,
            seed,
            scalars: Vec::new(),
            files: Vec::new(),
            config_echo,
        }
    }

    pub(super) fn number(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.push((name.into(), Scalar::Number(value)));
    }

    pub(super) fn text(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.scalars.push((name.into(), Scalar::Text(value.into())));
    }

    /// Numeric scalar by name.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find_map(|(k, v)| match v {
            Scalar::Number(x) if k == name => Some(*x),
            _ => None,
        })
    }

    pub fn get_text(&self, name: &str) -> Option<&str> {
        self.scalars.iter().find_map(|(k, v)| match v {
            Scalar::Text(s) if k == name => Some(s.as_str()),
            _ => None,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario = {}\nseed = {}\n", self.scenario, self.seed);
        if !self.config_echo.is_empty() {
            out.push_str("\n[config]\n");
            for (k, v) in &self.config_echo {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out.push_str("\n[results]\n");
        for (k, v) in &self.scalars {
            match v {
                Scalar::Number(x) => out.push_str(&format!("{k} = {}\n", num(*x))),
                Scalar::Text(s) => out.push_str(&format!("{k} = {s}\n")),
            }
        }
        out.push_str("\n[files]\n");
        for f in &self.files {
            let name = f.file_name().map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned());
            out.push_str(&name);
            out.push('\n');
        }
        out
    }

    /// Writes `report.txt` into `dir` and lists it among the files.
    pub(super) fn write(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("report.txt");
        self.files.push(path.clone());
        std::fs::write(&path, self.render()).map_err(|source| Error::Io { path, source })
    }
}

/// Twelve significant digits in scientific notation.
pub(super) fn num(v: f64) -> String {
    format!("{v:.11e}")
}

pub(super) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(super) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Comma-separated, header row, LF line endings.
pub(super) fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let body = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_has_twelve_digits() {
        assert_eq!(num(136.3e6), "1.36300000000e8");
        assert_eq!(num(-0.5), "-5.00000000000e-1");
        let back: f64 = num(std::f64::consts::PI).parse().unwrap();
        assert!((back - std::f64::consts::PI).abs() < 1e-11);
    }

    #[test]
    fn report_lists_scalars_and_files() {
        let mut r = ScenarioReport::new(Scenario::Esr, 4, vec![("esr.b0_G".into(), "1.16e2".into())]);
        r.number("f_minus_Hz", 2.545e9);
        r.text("note", "ok");
        r.files.push(PathBuf::from("/tmp/x/esr.csv"));
        let text = r.render();
        assert!(text.contains("esr.b0_G = 1.16e2"));
        assert!(text.contains("f_minus_Hz = 2.54500000000e9"));
        assert!(text.contains("\n[files]\nesr.csv\n"));
        assert_eq!(r.get("f_minus_Hz"), Some(2.545e9));
        assert_eq!(r.get_text("note"), Some("ok"));
    }
}
