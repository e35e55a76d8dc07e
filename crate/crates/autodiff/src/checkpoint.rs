//! Versioned text checkpoint of named tensors.
//!
//! ```text
//! gthna-checkpoint v1
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <rows*cols IEEE-754 bit patterns as 16-digit hex, space separated>
//! end
//! ```
//!
//! Values are stored as raw bit patterns so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamRegistry;
use crate::tensor::Tensor;

pub const CHECKPOINT_HEADER: &str = "gthna-checkpoint v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Checkpoint { line, msg: msg.into() }
}

impl Checkpoint {
    pub fn from_registry(registry: &ParamRegistry) -> Self {
        Self {
            meta: Vec::new(),
            tensors: registry.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Registry made of every tensor whose name does not start with one of `exclude_prefixes`.
    pub fn to_registry(&self, exclude_prefixes: &[&str]) -> Result<ParamRegistry> {
        let mut reg = ParamRegistry::new();
        for (name, t) in &self.tensors {
            if exclude_prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            reg.insert(name.clone(), t.clone())?;
        }
        Ok(reg)
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            let words: Vec<String> = t.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, CHECKPOINT_HEADER)) => {}
            Some((n, other)) => return Err(bad(n, format!("unsupported header `{other}`"))),
            None => return Err(bad(0, "empty file")),
        }
        let mut ckpt = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            if line == "end" {
                return Ok(ckpt);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                let [name, rows, cols] = fields[..] else {
                    return Err(bad(n, "expected `tensor <name> <rows> <cols>`"));
                };
                let rows: usize = rows.parse().map_err(|_| bad(n, "bad row count"))?;
                let cols: usize = cols.parse().map_err(|_| bad(n, "bad column count"))?;
                let (vn, values) = lines.next().ok_or_else(|| bad(n, "missing tensor data"))?;
                let data = values
                    .split_whitespace()
                    .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits))
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| bad(vn, format!("bad value: {e}")))?;
                let t = Tensor::new(rows, cols, data).map_err(|e| bad(vn, e.to_string()))?;
                ckpt.tensors.push((name.to_string(), t));
            } else {
                return Err(bad(n, format!("unrecognised record `{line}`")));
            }
        }
        Err(bad(0, "missing `end` marker"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read_to_string(path)?)
    }
}
