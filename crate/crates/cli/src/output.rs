//! Output files are staged next to their destination and renamed into place
//! only once every file of a command has been written.

use std::fs;
use std::path::{Path, PathBuf};

use gmvae::training::{EpochRecord, Metrics};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const METRICS_HEADER: &str = "epoch,step,train_loss,val_loss,w_t,kl_y,wall_seconds";
pub const BENCH_HEADER: &str = "estimator,K,median_ms,p10_ms,p90_ms,steps";

/// A set of files that appear together or not at all.
#[derive(Debug)]
pub struct Staged {
    dir: PathBuf,
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Staged {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn add(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.dir.join(name);
        let temp = self.dir.join(format!(".{name}.{}.partial", std::process::id()));
        if let Err(e) = fs::write(&temp, bytes) {
            let _ = fs::remove_file(&temp);
            self.discard();
            return Err(CliError::Data(format!("cannot write {}: {e}", target.display())));
        }
        self.files.push((temp, target));
        Ok(())
    }

    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.add(name, text.as_bytes())
    }

    /// Renames every staged file into place and returns the final paths.
    pub fn commit(mut self) -> CliResult<Vec<PathBuf>> {
        let files = std::mem::take(&mut self.files);
        let mut done = Vec::with_capacity(files.len());
        for (temp, target) in files {
            fs::rename(&temp, &target)
                .map_err(|e| CliError::Data(format!("cannot move {} into place: {e}", target.display())))?;
            done.push(target);
        }
        Ok(done)
    }

    fn discard(&mut self) {
        for (temp, _) in self.files.drain(..) {
            let _ = fs::remove_file(temp);
        }
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        self.discard();
    }
}

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.step, r.train_loss, r.val_loss, r.w_t, r.kl_y, r.wall_seconds
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct BenchRow {
    pub estimator: gmvae::training::Estimator,
    pub k: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub steps: usize,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{}\n",
            r.estimator.name(),
            r.k,
            r.median_ms,
            r.p10_ms,
            r.p90_ms,
            r.steps
        );
    }
    out
}

/// Parses a bench CSV written by [`bench_csv`].
pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(BENCH_HEADER) {
        return Err("missing bench header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 fields: {line}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
            let int = |s: &str| s.parse::<usize>().map_err(|e| format!("{s}: {e}"));
            Ok(BenchRow {
                estimator: serde_json::from_value(serde_json::Value::from(f[0])).map_err(|e| e.to_string())?,
                k: int(f[1])?,
                median_ms: num(f[2])?,
                p10_ms: num(f[3])?,
                p90_ms: num(f[4])?,
                steps: int(f[5])?,
            })
        })
        .collect()
}

/// Evaluation output: the metrics plus what they were computed on.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub split: crate::config::EvalSplit,
    pub checkpoint: String,
    pub metrics: Metrics,
}
