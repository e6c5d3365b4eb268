//! Power-network case data, N-1 contingency enumeration and the
//! per-contingency electrical matrices.
//!
//! A [`GridCase`] keeps the values in the units of the case file (MW for
//! power, per-unit for reactance) so that serialization round-trips exactly.
//! Everything downstream of parsing (matrices, the QP, reconstruction) works
//! in per-unit on `base_mva`; the `*_pu` accessors perform the conversion.

mod matpower;
mod matrices;
mod topology;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub use matrices::{build_all_matrices, build_matrices, ContingencyMatrices};
pub use topology::{
    enumerate_contingencies, find_bridges, is_connected, Contingency, ContingencySet,
    SkippedOutage,
};

/// Input format of a case file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseFormat {
    MatpowerSubset,
    Json,
}

impl CaseFormat {
    /// Guesses the format from a file extension (`.m` is MATPOWER).
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => CaseFormat::MatpowerSubset,
            _ => CaseFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Bus number as written in the case file.
    pub id: usize,
    pub load_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Dense index of the sending bus.
    pub from: usize,
    /// Dense index of the receiving bus.
    pub to: usize,
    /// Series reactance, per-unit.
    pub x: f64,
    /// Flow limit in MW, used for the intact network and, unless
    /// `rate_contingency_mw` is set, for every outage case too.
    pub rate_mw: f64,
    pub rate_contingency_mw: Option<f64>,
}

impl Branch {
    /// Flow limit (MW) that applies under contingency case `c` (0 = intact).
    pub fn rate_for_case(&self, c: usize) -> f64 {
        match (c, self.rate_contingency_mw) {
            (0, _) | (_, None) => self.rate_mw,
            (_, Some(r)) => r,
        }
    }
}

/// Quadratic cost `quadratic * P^2 + linear * P + constant` with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub quadratic: f64,
    pub linear: f64,
    pub constant: f64,
}

impl CostCoefficients {
    pub fn eval(&self, p_mw: f64) -> f64 {
        self.quadratic * p_mw * p_mw + self.linear * p_mw + self.constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Dense index of the hosting bus.
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub cost: CostCoefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Dense index of the slack bus.
    pub slack_bus: usize,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Buses with a positive default load, in bus order.
    pub fn load_buses(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].load_mw > 0.0)
            .collect()
    }

    pub fn default_loads_mw(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.load_mw).collect()
    }

    /// The generator that absorbs the balance residual: the first generator
    /// located at the slack bus.
    pub fn slack_generator(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.bus == self.slack_bus)
            .expect("validated case has a generator at the slack bus")
    }

    /// Generators whose output is predicted (all but the slack generator).
    pub fn predicted_generators(&self) -> Vec<usize> {
        let slack = self.slack_generator();
        (0..self.generators.len()).filter(|&g| g != slack).collect()
    }

    pub fn to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn to_mw(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }

    /// Dense index of the bus with file id `id`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Total cost ($/hr) of a generation vector in MW.
    pub fn evaluate_cost(&self, p_g_mw: &[f64]) -> f64 {
        assert_eq!(p_g_mw.len(), self.generators.len());
        self.generators
            .iter()
            .zip(p_g_mw)
            .map(|(g, &p)| g.cost.eval(p))
            .sum()
    }

    /// Checks every structural invariant of a case.
    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(Error::validation(format!(
                "base_mva must be positive (got {})",
                self.base_mva
            )));
        }
        if n == 0 {
            return Err(Error::validation("case has no buses"));
        }
        let mut seen = HashMap::new();
        for (i, bus) in self.buses.iter().enumerate() {
            if let Some(prev) = seen.insert(bus.id, i) {
                return Err(Error::validation(format!(
                    "bus id {} appears twice (positions {prev} and {i})",
                    bus.id
                )));
            }
            if !(bus.load_mw.is_finite() && bus.load_mw >= 0.0) {
                return Err(Error::validation(format!(
                    "bus {}: load must be finite and non-negative (got {})",
                    bus.id, bus.load_mw
                )));
            }
        }
        if self.slack_bus >= n {
            return Err(Error::validation("slack bus does not exist"));
        }
        for (k, br) in self.branches.iter().enumerate() {
            let label = || {
                let f = self.buses.get(br.from).map_or(usize::MAX, |b| b.id);
                let t = self.buses.get(br.to).map_or(usize::MAX, |b| b.id);
                format!("branch {k} ({f}-{t})")
            };
            if br.from >= n || br.to >= n {
                return Err(Error::validation(format!(
                    "branch {k}: endpoint refers to a missing bus"
                )));
            }
            if br.from == br.to {
                return Err(Error::validation(format!("{}: self-loop", label())));
            }
            if !(br.x > 0.0 && br.x.is_finite()) {
                return Err(Error::validation(format!(
                    "{}: reactance x must be positive (got {})",
                    label(),
                    br.x
                )));
            }
            if !(br.rate_mw > 0.0 && br.rate_mw.is_finite()) {
                return Err(Error::validation(format!(
                    "{}: flow limit must be positive (got {})",
                    label(),
                    br.rate_mw
                )));
            }
            if let Some(r) = br.rate_contingency_mw {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::validation(format!(
                        "{}: contingency flow limit must be positive (got {r})",
                        label()
                    )));
                }
            }
        }
        if self.generators.is_empty() {
            return Err(Error::validation("case has no generators"));
        }
        for (k, g) in self.generators.iter().enumerate() {
            if g.bus >= n {
                return Err(Error::validation(format!(
                    "generator {k}: bus does not exist"
                )));
            }
            let id = self.buses[g.bus].id;
            if !(g.p_min_mw.is_finite() && g.p_max_mw.is_finite()) || g.p_min_mw > g.p_max_mw {
                return Err(Error::validation(format!(
                    "generator {k} at bus {id}: need p_min <= p_max (got {} > {})",
                    g.p_min_mw, g.p_max_mw
                )));
            }
            let c = g.cost;
            if !(c.quadratic.is_finite() && c.linear.is_finite() && c.constant.is_finite())
                || c.quadratic < 0.0
            {
                return Err(Error::validation(format!(
                    "generator {k} at bus {id}: cost must be finite and convex"
                )));
            }
        }
        if !self.generators.iter().any(|g| g.bus == self.slack_bus) {
            return Err(Error::validation(format!(
                "slack bus {} hosts no generator",
                self.buses[self.slack_bus].id
            )));
        }
        let all: Vec<usize> = (0..self.branches.len()).collect();
        if !is_connected(n, &self.branches, &all) {
            return Err(Error::Disconnected(
                "the branch graph of the intact network is not connected".into(),
            ));
        }
        Ok(())
    }

    /// Stable fingerprint of the case contents (hex SHA-256 of the canonical
    /// JSON form).
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(&CaseFile::from(self)).expect("case serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A validated case together with its contingency set and the matrices of
/// every retained contingency. Immutable once built.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: GridCase,
    pub contingencies: ContingencySet,
    pub matrices: Vec<ContingencyMatrices>,
}

impl Network {
    /// Validates `case`, enumerates N-1 outages and factors every reduced
    /// admittance matrix.
    pub fn new(case: GridCase) -> Result<Self> {
        case.validate()?;
        let contingencies = enumerate_contingencies(&case);
        Self::with_contingencies(case, contingencies)
    }

    pub fn with_contingencies(case: GridCase, contingencies: ContingencySet) -> Result<Self> {
        let matrices = build_all_matrices(&case, &contingencies)?;
        Ok(Network {
            case,
            contingencies,
            matrices,
        })
    }

    /// Nodal net injections (generation minus load) in per-unit.
    pub fn injections_pu(&self, p_g_mw: &[f64], p_d_mw: &[f64]) -> Vec<f64> {
        let case = &self.case;
        let mut inj: Vec<f64> = p_d_mw.iter().map(|d| -case.to_pu(*d)).collect();
        for (g, p) in case.generators.iter().zip(p_g_mw) {
            inj[g.bus] += case.to_pu(*p);
        }
        inj
    }

    /// Angles of every contingency case for the given dispatch.
    pub fn reconstruct_angles(&self, p_g_mw: &[f64], p_d_mw: &[f64], slack_angle: f64) -> Vec<Vec<f64>> {
        let inj = self.injections_pu(p_g_mw, p_d_mw);
        self.matrices
            .iter()
            .map(|m| m.solve_angles(&inj, slack_angle))
            .collect()
    }
}

/// Parses and validates a case file.
pub fn parse_case(text: &str, format: CaseFormat) -> Result<GridCase> {
    let case = match format {
        CaseFormat::Json => parse_json(text)?,
        CaseFormat::MatpowerSubset => matpower::parse(text)?,
    };
    case.validate()?;
    Ok(case)
}

/// Reads a case from disk, picking the format from the extension.
pub fn load_case(path: impl AsRef<std::path::Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_case(&text, CaseFormat::from_path(path))
}

/// Serializes a case to the documented JSON schema.
pub fn to_json(case: &GridCase) -> String {
    serde_json::to_string_pretty(&CaseFile::from(case)).expect("case serializes")
}

fn parse_json(text: &str) -> Result<GridCase> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.into_case()
}

// On-disk JSON layout. Bus references use file ids.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    slack_bus: usize,
    buses: Vec<Bus>,
    branches: Vec<BranchFile>,
    generators: Vec<GeneratorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    from: usize,
    to: usize,
    x: f64,
    rate_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_contingency_mw: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    bus: usize,
    p_min_mw: f64,
    p_max_mw: f64,
    /// `[quadratic, linear, constant]`.
    cost: [f64; 3],
}

impl From<&GridCase> for CaseFile {
    fn from(case: &GridCase) -> Self {
        let id = |i: usize| case.buses[i].id;
        CaseFile {
            base_mva: case.base_mva,
            slack_bus: id(case.slack_bus),
            buses: case.buses.clone(),
            branches: case
                .branches
                .iter()
                .map(|b| BranchFile {
                    from: id(b.from),
                    to: id(b.to),
                    x: b.x,
                    rate_mw: b.rate_mw,
                    rate_contingency_mw: b.rate_contingency_mw,
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorFile {
                    bus: id(g.bus),
                    p_min_mw: g.p_min_mw,
                    p_max_mw: g.p_max_mw,
                    cost: [g.cost.quadratic, g.cost.linear, g.cost.constant],
                })
                .collect(),
        }
    }
}

impl CaseFile {
    fn into_case(self) -> Result<GridCase> {
        let index: HashMap<usize, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect();
        let lookup = |id: usize, what: &str| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::validation(format!("{what} refers to unknown bus {id}")))
        };
        let slack_bus = lookup(self.slack_bus, "slack_bus")?;
        let branches = self
            .branches
            .iter()
            .enumerate()
            .map(|(k, b)| {
                Ok(Branch {
                    from: lookup(b.from, &format!("branch {k}"))?,
                    to: lookup(b.to, &format!("branch {k}"))?,
                    x: b.x,
                    rate_mw: b.rate_mw,
                    rate_contingency_mw: b.rate_contingency_mw,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let generators = self
            .generators
            .iter()
            .enumerate()
            .map(|(k, g)| {
                Ok(Generator {
                    bus: lookup(g.bus, &format!("generator {k}"))?,
                    p_min_mw: g.p_min_mw,
                    p_max_mw: g.p_max_mw,
                    cost: CostCoefficients {
                        quadratic: g.cost[0],
                        linear: g.cost[1],
                        constant: g.cost[2],
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridCase {
            base_mva: self.base_mva,
            buses: self.buses,
            branches,
            generators,
            slack_bus,
        })
    }
}
