//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! contain one `=`; keys are trimmed and must be unique.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::Config { line, message: format!("expected key = value, got {trimmed:?}") });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config { line, message: "empty key".into() });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::Config { line, message: format!("duplicate key {key:?}") });
        }
        out.push(Entry { line, key: key.to_string(), value: value.trim().to_string() });
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    parse(&std::fs::read_to_string(path)?)
}

impl Entry {
    pub fn f64(&self) -> Result<f64> {
        self.value
            .parse::<f64>()
            .map_err(|_| Error::Config { line: self.line, message: format!("{}: not a number: {:?}", self.key, self.value) })
    }

    pub fn usize(&self) -> Result<usize> {
        self.value.parse::<usize>().map_err(|_| Error::Config {
            line: self.line,
            message: format!("{}: not a non-negative integer: {:?}", self.key, self.value),
        })
    }

    pub fn u64(&self) -> Result<u64> {
        self.value.parse::<u64>().map_err(|_| Error::Config {
            line: self.line,
            message: format!("{}: not a non-negative integer: {:?}", self.key, self.value),
        })
    }

    pub fn bool(&self) -> Result<bool> {
        match self.value.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config { line: self.line, message: format!("{}: not a boolean: {v:?}", self.key) }),
        }
    }

    /// Comma-separated list of numbers.
    pub fn f64_list(&self) -> Result<Vec<f64>> {
        self.value
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Config {
                    line: self.line,
                    message: format!("{}: bad number {s:?} in list", self.key),
                })
            })
            .collect()
    }

    /// Pose written as `qw, qx, qy, qz, tx, ty, tz`.
    pub fn pose(&self) -> Result<Pose> {
        let v = self.f64_list()?;
        if v.len() != 7 || !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Config { line: self.line, message: format!("{}: expected 7 finite numbers", self.key) });
        }
        if v[..4].iter().all(|&x| x == 0.0) {
            return Err(Error::Config { line: self.line, message: format!("{}: zero quaternion", self.key) });
        }
        Ok(Pose::new([v[0], v[1], v[2], v[3]], Vector3::new(v[4], v[5], v[6])))
    }

    pub fn unknown(&self) -> Error {
        Error::Config { line: self.line, message: format!("unknown key {:?}", self.key) }
    }
}

/// Renders entries back to text; numbers use Rust's round-trip formatting.
pub fn render(entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

pub fn format_pose(p: &Pose) -> String {
    let q = p.quaternion();
    let t = p.translation;
    format_list(&[q[0], q[1], q[2], q[3], t.x, t.y, t.z])
}
