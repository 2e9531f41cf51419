use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cps_core::numeric::fmt_sig;

use crate::error::CliError;

/// Provenance shared by every file a command writes.
pub struct RunHeader {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub options: Vec<(&'static str, String)>,
}

impl RunHeader {
    pub fn new(command: &'static str, config_hash: String, seed: u64) -> Self {
        Self {
            command,
            config_hash,
            seed,
            options: Vec::new(),
        }
    }

    pub fn option(mut self, key: &'static str, value: impl ToString) -> Self {
        self.options.push((key, value.to_string()));
        self
    }

    pub fn line(&self) -> String {
        let mut s = format!("# cps command={} config_hash={} seed={}", self.command, self.config_hash, self.seed);
        for (k, v) in &self.options {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

/// Writes output files into one directory and remembers their paths.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// Header line followed by `body`.
    pub fn write_with_header(&mut self, name: &str, header: &RunHeader, body: &str) -> Result<(), CliError> {
        self.write(name, &format!("{}\n{body}", header.line()))
    }

    pub fn report(&self) {
        for p in &self.written {
            println!("wrote {}", p.display());
        }
    }
}

/// Incremental CSV body.
pub struct Csv(String);

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        Self(format!("{}\n", columns.join(",")))
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        self.0.push_str(&line.join(","));
        self.0.push('\n');
    }

    pub fn finish(self) -> String {
        self.0
    }
}

pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_sig(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Builds a `[Cell; N]` from heterogeneous values.
#[macro_export]
macro_rules! cells {
    ($($v:expr),* $(,)?) => {
        [$($crate::output::Cell::from($v)),*]
    };
}
