//! Parameter resolution: flag, then config file, then default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use lsm_core::{Error, Regularizer};

use crate::{invalid, CliResult, Common, Failure};

/// A value that can come from a config file and be recorded in the results.
pub trait ParamValue: Sized {
    fn parse(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ParamValue for $t {
            fn parse(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(usize, u32, u64, f64, bool, String);

impl ParamValue for PathBuf {
    fn parse(s: &str) -> Option<Self> {
        Some(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ParamValue for Regularizer {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        match self {
            Regularizer::SumSq => "sum-sq",
            Regularizer::MaxSq => "max-sq",
            Regularizer::MaxNorm => "max-norm",
        }
        .to_string()
    }
}

pub struct Params {
    pub command: &'static str,
    pub seed: u64,
    pub out: PathBuf,
    file: BTreeMap<String, String>,
    used: Vec<String>,
    /// Every resolved parameter, rendered.
    pub resolved: BTreeMap<String, String>,
}

fn parse_config(text: &str, path: &std::path::Path) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!("{}:{}: expected key=value", path.display(), no + 1)));
        };
        let key = k.trim().replace('-', "_");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(invalid(format!("{}:{}: duplicate key {key}", path.display(), no + 1)));
        }
    }
    Ok(map)
}

impl Params {
    pub fn load(command: &'static str, common: &Common) -> CliResult<Self> {
        let file = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io(e)))?;
                parse_config(&text, path)?
            }
            None => BTreeMap::new(),
        };
        let mut p = Params {
            command,
            seed: 0,
            out: common.out.clone(),
            file,
            used: Vec::new(),
            resolved: BTreeMap::new(),
        };
        p.seed = p.get("seed", common.seed, 0)?;
        Ok(p)
    }

    fn lookup<T: ParamValue>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        self.used.push(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(s) => T::parse(s)
                .map(Some)
                .ok_or_else(|| invalid(format!("config: bad value {s:?} for {key}"))),
            None => Ok(None),
        }
    }

    pub fn get<T: ParamValue>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.render());
        Ok(v)
    }

    pub fn get_opt<T: ParamValue>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.render());
        }
        Ok(v)
    }

    pub fn require<T: ParamValue>(&mut self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.get_opt(key, flag)?
            .ok_or_else(|| invalid(format!("missing required parameter --{}", key.replace('_', "-"))))
    }

    /// Rejects config keys that the subcommand does not understand.
    pub fn finish(&self) -> CliResult<()> {
        match self.file.keys().find(|k| !self.used.contains(k)) {
            Some(k) => Err(invalid(format!("config: unknown key {k} for {}", self.command))),
            None => Ok(()),
        }
    }
}
