use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;

/// Plain-text record of one CLI run: what was asked, what was read, what was
/// written and how long each stage took.
#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<(String, f64)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "tool_version = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "seed = {seed}");
            }
            None => s.push_str("seed = none\n"),
        }
        s.push_str("\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[inputs]\n");
        for p in &self.inputs {
            let _ = writeln!(s, "{}", p.display());
        }
        s.push_str("\n[outputs]\n");
        for p in &self.outputs {
            let _ = writeln!(s, "{}", p.display());
        }
        s.push_str("\n[timings_s]\n");
        for (k, v) in &self.timings {
            let _ = writeln!(s, "{k} = {v:.6}");
        }
        let _ = writeln!(s, "total = {:.6}", self.started.elapsed().as_secs_f64());
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.render()).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<primary>.manifest.txt`, next to the primary output (a sibling file
/// when the output is a directory, so directory contents stay
/// reproducible).
pub fn default_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_string_lossy().trim_end_matches(['/', '\\']).to_string();
    if s.is_empty() {
        s.push('.');
    }
    s.push_str(".manifest.txt");
    PathBuf::from(s)
}
