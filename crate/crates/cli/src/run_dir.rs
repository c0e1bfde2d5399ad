//! `runs/<name>/{config.snapshot, metrics.csv, params.json, log.txt}`

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use permlearn::{Error, Result};

pub struct RunDir {
    path: PathBuf,
    log: File,
    started: Instant,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Creates the directory and an empty log, replacing earlier outputs.
    pub fn create(out_dir: &Path, name: &str) -> Result<Self> {
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(Error::Config(format!("invalid run name {name:?}")));
        }
        let path = out_dir.join("runs").join(name);
        fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
        let log_path = path.join("log.txt");
        let log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        Ok(Self {
            path,
            log,
            started: Instant::now(),
        })
    }

    pub fn write(&self, file: &str, contents: &str) -> Result<()> {
        let p = self.path.join(file);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))
    }

    /// Timestamps live only here, never in the primary outputs.
    pub fn log(&mut self, message: &str) -> Result<()> {
        let line = format!("[{:>9.3}s] {message}\n", self.started.elapsed().as_secs_f64());
        self.log
            .write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path.join("log.txt"), e))
    }
}
