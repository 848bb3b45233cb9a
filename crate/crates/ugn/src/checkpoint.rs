//! Text checkpoints. Floats are serialized as the hex of their IEEE-754
//! bits, so save -> load -> save is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: u64,
    pub epoch: usize,
    /// Named parameter tensors in model order.
    pub tensors: Vec<(String, Tensor)>,
    /// Optimizer first/second moments, aligned with `tensors`.
    pub moments_m: Vec<Tensor>,
    pub moments_v: Vec<Tensor>,
    pub adam_t: u64,
}

fn write_tensor(out: &mut String, prefix: &str, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let _ = write!(out, "{prefix} {name} {}", dims.join(","));
    for &x in t.data() {
        let _ = write!(out, " {:016x}", x.to_bits());
    }
    out.push('\n');
}

fn parse_tensor(line: &str, lineno: usize, path: &Path) -> Result<(String, Tensor)> {
    let err = |msg: String| UgnError::Parse {
        path: path.display().to_string(),
        line: lineno,
        message: msg,
    };
    let mut fields = line.split(' ');
    let _tag = fields.next();
    let name = fields
        .next()
        .ok_or_else(|| err("missing tensor name".into()))?
        .to_string();
    let shape: Vec<usize> = fields
        .next()
        .ok_or_else(|| err("missing tensor shape".into()))?
        .split(',')
        .map(|d| d.parse().map_err(|e| err(format!("bad dim: {e}"))))
        .collect::<Result<_>>()?;
    let data: Vec<f64> = fields
        .map(|h| {
            u64::from_str_radix(h, 16)
                .map(f64::from_bits)
                .map_err(|e| err(format!("bad float bits: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("ugn-checkpoint v1\n");
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "adam_t {}", self.adam_t);
        let _ = writeln!(out, "config_hash {:016x}", self.config_hash);
        out.push_str("config_begin\n");
        out.push_str(&self.config_text);
        out.push_str("config_end\n");
        for (name, t) in &self.tensors {
            write_tensor(&mut out, "tensor", name, t);
        }
        for (i, t) in self.moments_m.iter().enumerate() {
            write_tensor(&mut out, "moment_m", &i.to_string(), t);
        }
        for (i, t) in self.moments_v.iter().enumerate() {
            write_tensor(&mut out, "moment_v", &i.to_string(), t);
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let err = |lineno: usize, msg: String| UgnError::Parse {
            path: path.display().to_string(),
            line: lineno,
            message: msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty checkpoint".into()))?;
        if header != "ugn-checkpoint v1" {
            return Err(err(1, format!("unexpected header {header}")));
        }
        let mut epoch = None;
        let mut adam_t = None;
        let mut config_hash = None;
        let mut config_text = String::new();
        let mut in_config = false;
        let mut tensors = Vec::new();
        let mut moments_m = Vec::new();
        let mut moments_v = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if in_config {
                if line == "config_end" {
                    in_config = false;
                } else {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                continue;
            }
            if line == "config_begin" {
                in_config = true;
            } else if let Some(v) = line.strip_prefix("epoch ") {
                epoch = Some(v.parse().map_err(|e| err(lineno, format!("bad epoch: {e}")))?);
            } else if let Some(v) = line.strip_prefix("adam_t ") {
                adam_t =
                    Some(v.parse().map_err(|e| err(lineno, format!("bad adam_t: {e}")))?);
            } else if let Some(v) = line.strip_prefix("config_hash ") {
                config_hash = Some(
                    u64::from_str_radix(v, 16)
                        .map_err(|e| err(lineno, format!("bad hash: {e}")))?,
                );
            } else if line.starts_with("tensor ") {
                tensors.push(parse_tensor(line, lineno, path)?);
            } else if line.starts_with("moment_m ") {
                moments_m.push(parse_tensor(line, lineno, path)?.1);
            } else if line.starts_with("moment_v ") {
                moments_v.push(parse_tensor(line, lineno, path)?.1);
            } else if !line.trim().is_empty() {
                return Err(err(lineno, format!("unexpected line {line}")));
            }
        }
        Ok(Checkpoint {
            config_text,
            config_hash: config_hash.ok_or_else(|| err(0, "missing config_hash".into()))?,
            epoch: epoch.ok_or_else(|| err(0, "missing epoch".into()))?,
            tensors,
            moments_m,
            moments_v,
            adam_t: adam_t.ok_or_else(|| err(0, "missing adam_t".into()))?,
        })
    }
}
