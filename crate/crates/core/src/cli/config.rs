//! Config files mirroring the command-line flags, and case overlays that
//! describe congestion scenarios declaratively.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::grid_model::GridCase;
use crate::{Error, Result};

/// Every flag that can also come from a file. Command-line values win over
/// file values, which win over built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub range: Option<[f64; 2]>,
    pub samples: Option<usize>,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub baseline: Option<String>,
    pub no_projection: Option<bool>,
    pub out: Option<String>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Parses TOML, or JSON when the path ends in `.json`.
pub(crate) fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return serde_json::from_str(&text).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        });
    }
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(&text, s.start));
        Error::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_structured(path.as_ref())
    }
}

/// Replaces the limit of every branch between two buses (file numbering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchLimit {
    pub from: usize,
    pub to: usize,
    pub rate_mw: f64,
    pub rate_contingency_mw: Option<f64>,
}

/// A scenario applied on top of a case: scaled loads, scaled or replaced
/// line limits and a sampling range.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overlay {
    pub name: Option<String>,
    /// Multiplies every default load.
    pub load_scale: Option<f64>,
    /// Multiplies every line limit (both ratings).
    pub rate_scale: Option<f64>,
    /// Sampling range used when no `--range` is given.
    pub range: Option<[f64; 2]>,
    pub branch: Vec<BranchLimit>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("overlay {name} must be positive, got {v}")))
    }
}

impl Overlay {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_structured(path.as_ref())
    }

    pub fn apply(&self, case: &GridCase) -> Result<GridCase> {
        let mut out = case.clone();
        if let Some(s) = self.load_scale {
            positive("load_scale", s)?;
            out.buses.iter_mut().for_each(|b| b.load_mw *= s);
        }
        if let Some(s) = self.rate_scale {
            positive("rate_scale", s)?;
            for br in &mut out.branches {
                br.rate_mw *= s;
                if let Some(r) = br.rate_contingency_mw.as_mut() {
                    *r *= s;
                }
            }
        }
        for lim in &self.branch {
            positive("rate_mw", lim.rate_mw)?;
            let (f, t) = match (case.bus_index(lim.from), case.bus_index(lim.to)) {
                (Some(f), Some(t)) => (f, t),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "overlay names unknown bus in branch {}-{}",
                        lim.from, lim.to
                    )))
                }
            };
            let mut hit = false;
            for br in &mut out.branches {
                if (br.from, br.to) == (f, t) || (br.from, br.to) == (t, f) {
                    br.rate_mw = lim.rate_mw;
                    br.rate_contingency_mw = lim.rate_contingency_mw;
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::InvalidInput(format!(
                    "overlay names branch {}-{} which is not in the case",
                    lim.from, lim.to
                )));
            }
        }
        out.validate()?;
        Ok(out)
    }
}
