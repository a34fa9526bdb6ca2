//! Hyperparameter grid files.
//!
//! One `key = value, value, ...` entry per line; `#` starts a comment.
//!
//! ```text
//! signature = rotterdam, citbcmst
//! signature_file.rotterdam = signatures/rotterdam.txt
//! signature_file.citbcmst = signatures/citbcmst.txt
//! arch = logistic_regression, shallow_mlp:16
//! q = 0.05, 0.1
//! eta = 0.5
//! sigma = 1.0, 2.0
//! clip_c = 1.0
//! n_rounds = 5, 10
//! local_steps = 10
//! deltas = 1e-5, 1e-4, 1e-3
//! ```
//!
//! The grid is the Cartesian product of the value lists, enumerated with
//! the last key in [`GRID_KEYS`] varying fastest. `deltas` and the
//! `signature_file.<name>` entries are optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{HarnessError, HyperParams};
use crate::models::ArchKind;

/// Keys that span the grid, in enumeration order.
pub const GRID_KEYS: [&str; 8] = [
    "signature",
    "arch",
    "q",
    "eta",
    "sigma",
    "clip_c",
    "n_rounds",
    "local_steps",
];

const SIGNATURE_FILE_PREFIX: &str = "signature_file.";

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub points: Vec<HyperParams>,
    /// Signature name to file path, as written in the file.
    pub signature_files: Vec<(String, PathBuf)>,
    pub deltas: Option<Vec<f64>>,
}

impl GridConfig {
    /// Makes relative signature paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for (_, p) in &mut self.signature_files {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::GridConfig {
        line,
        message: message.into(),
    }
}

fn parse_list<T: FromStr>(line: usize, key: &str, values: &[String]) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    values
        .iter()
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| err(line, format!("`{key}`: cannot parse `{v}`: {e}")))
        })
        .collect()
}

pub fn parse_grid_config(text: &str) -> Result<GridConfig, HarnessError> {
    let mut entries: BTreeMap<String, (usize, Vec<String>)> = BTreeMap::new();
    let mut signature_files = Vec::new();
    let mut deltas = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value, ...`"))?;
        let key = key.trim();
        let values: Vec<String> = value
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(err(line, format!("`{key}` has no values")));
        }

        if let Some(name) = key.strip_prefix(SIGNATURE_FILE_PREFIX) {
            if values.len() != 1 {
                return Err(err(line, format!("`{key}` takes exactly one path")));
            }
            if signature_files.iter().any(|(n, _)| n == name) {
                return Err(err(line, format!("`{key}` given twice")));
            }
            signature_files.push((name.to_string(), PathBuf::from(&values[0])));
        } else if key == "deltas" {
            if deltas.is_some() {
                return Err(err(line, "`deltas` given twice"));
            }
            let ds: Vec<f64> = parse_list(line, key, &values)?;
            if let Some(d) = ds.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
                return Err(err(line, format!("delta {d} outside (0, 1)")));
            }
            deltas = Some(ds);
        } else if GRID_KEYS.contains(&key) {
            if entries.insert(key.to_string(), (line, values)).is_some() {
                return Err(err(line, format!("`{key}` given twice")));
            }
        } else {
            return Err(err(line, format!("unknown key `{key}`")));
        }
    }

    let get = |key: &str| -> Result<&(usize, Vec<String>), HarnessError> {
        entries
            .get(key)
            .ok_or_else(|| err(text.lines().count().max(1), format!("missing key `{key}`")))
    };
    let (_, signatures) = get("signature")?.clone();
    let (l, v) = get("arch")?;
    let archs: Vec<ArchKind> = parse_list(*l, "arch", v)?;
    let mut floats = Vec::new();
    for key in ["q", "eta", "sigma", "clip_c"] {
        let (l, v) = get(key)?;
        floats.push(parse_list::<f64>(*l, key, v)?);
    }
    let (l, v) = get("n_rounds")?;
    let rounds: Vec<u32> = parse_list(*l, "n_rounds", v)?;
    let (l, v) = get("local_steps")?;
    let steps: Vec<u32> = parse_list(*l, "local_steps", v)?;

    let mut points = Vec::new();
    for signature in &signatures {
        for &arch in &archs {
            for &q in &floats[0] {
                for &eta in &floats[1] {
                    for &sigma in &floats[2] {
                        for &clip_c in &floats[3] {
                            for &n_rounds in &rounds {
                                for &local_steps in &steps {
                                    let hp = HyperParams {
                                        signature: signature.clone(),
                                        arch,
                                        q,
                                        eta,
                                        sigma,
                                        clip_c,
                                        n_rounds,
                                        local_steps,
                                    };
                                    hp.validate()?;
                                    points.push(hp);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(GridConfig {
        points,
        signature_files,
        deltas,
    })
}
