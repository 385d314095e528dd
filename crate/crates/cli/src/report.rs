//! Results files.

use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use lsm_core::Error;

use crate::params::Params;
use crate::{CliResult, Failure};

pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the command name and the sorted `key=value` lines.
pub fn config_hash(p: &Params) -> String {
    let mut h = Sha256::new();
    h.update(p.command.as_bytes());
    h.update(b"\n");
    for (k, v) in &p.resolved {
        h.update(format!("{k}={v}\n").as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn mean_std(v: &[f64]) -> Value {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    json!({"mean": mean, "std": var.sqrt()})
}

/// Buffered outputs of one run; nothing touches the disk before `commit`.
pub struct Output {
    dir: std::path::PathBuf,
    files: Vec<(String, String)>,
    header: Value,
}

impl Output {
    pub fn new(p: &Params) -> Self {
        Output {
            dir: p.out.clone(),
            files: Vec::new(),
            header: json!({
                "schema_version": SCHEMA_VERSION,
                "command": p.command,
                "seed": p.seed,
                "config": p.resolved,
                "config_hash": config_hash(p),
            }),
        }
    }

    pub fn file(&mut self, name: String, contents: String) {
        self.files.push((name, contents));
    }

    pub fn results(&mut self, results: Value) {
        self.header["results"] = results;
    }

    pub fn commit(mut self) -> CliResult<()> {
        let doc = serde_json::to_string_pretty(&self.header).expect("serializable") + "\n";
        self.files.push(("results.json".into(), doc));
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        for (name, contents) in &self.files {
            write_atomic(&self.dir.join(name), contents)?;
        }
        Ok(())
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::from(Error::Io(e))
}

fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
