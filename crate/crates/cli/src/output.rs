use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::Failure;

/// Summary of one invocation, printed to stderr so that stdout and output
/// files stay byte-identical across reruns.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub scenario_hash: Option<String>,
    pub seed: Option<u64>,
    pub elapsed_s: f64,
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            scenario_hash: None,
            seed: None,
            elapsed_s: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn scenario(&mut self, hash: &str, seed: u64) {
        self.scenario_hash = Some(hash.to_string());
        self.seed = Some(seed);
    }
}

pub enum Output {
    Stdout,
    File { path: String, file: File },
}

impl Output {
    /// Creates the output file up front so an unwritable path fails before any work.
    pub fn open(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Output::Stdout),
            Some(p) => {
                let file = File::create(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                Ok(Output::File {
                    path: p.display().to_string(),
                    file,
                })
            }
        }
    }

    pub fn write_str(&mut self, text: &str) -> Result<(), Failure> {
        let result = match self {
            Output::Stdout => {
                let mut lock = io::stdout().lock();
                lock.write_all(text.as_bytes()).and_then(|_| lock.flush())
            }
            Output::File { file, .. } => file.write_all(text.as_bytes()),
        };
        result.map_err(|e| Failure::Io(e.to_string()))
    }

    pub fn finish(self, report: &mut RunReport) -> Result<(), Failure> {
        match self {
            Output::Stdout => report.outputs.push("-".into()),
            Output::File { path, file } => {
                file.sync_all().map_err(|e| Failure::Io(format!("{path}: {e}")))?;
                report.outputs.push(path);
            }
        }
        Ok(())
    }
}

pub fn csv_preamble(command: &str, seed: u64, hash: &str) -> String {
    format!(
        "# thzloc {} command={command} seed={seed} scenario={hash}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Shortest round-trip decimal; `inf` for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// A bound that may be absent (non-localizable): written as `inf`.
pub fn opt(v: Option<f64>) -> String {
    num(v.unwrap_or(f64::INFINITY))
}
