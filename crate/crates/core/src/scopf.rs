//! Preventive N-1 DC optimal power flow as a canonical QP.
//!
//! Variable layout (fixed): generator outputs first, then one block of N bus
//! angles per contingency case, in contingency order.
//!
//! ```text
//! x = [ P_G (|G|) | theta_0 (N) | theta_1 (N) | ... | theta_{C-1} (N) ]
//! ```
//!
//! All quantities are per-unit; the objective is in $/hr so that
//! `qp.objective(x) + const_term` is the operating cost.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::grid_model::{GridCase, Network};
use crate::solver::{QpProblem, QpSolution};
use crate::{Error, Result};

/// Default tolerance on normalized constraint residuals.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EqRow {
    /// Power balance at `bus` in contingency `case`.
    Balance { case: usize, bus: usize },
    /// Angle reference of contingency `case`.
    SlackPin { case: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IneqRow {
    GenUpper { generator: usize },
    GenLower { generator: usize },
    /// Forward flow limit of `branch` in contingency `case`.
    LineUpper { case: usize, branch: usize },
    LineLower { case: usize, branch: usize },
}

#[derive(Debug, Clone)]
pub struct ScopfProblem {
    pub qp: QpProblem,
    /// Sum of the constant cost terms.
    pub const_term: f64,
    pub eq_rows: Vec<EqRow>,
    pub ineq_rows: Vec<IneqRow>,
    pub n_generators: usize,
    pub n_buses: usize,
    pub n_cases: usize,
    pub slack_angle: f64,
    base_mva: f64,
}

/// Generation and angles of the whole contingency set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// MW, one per generator.
    pub p_g: Vec<f64>,
    /// Radians, `theta[c][bus]`.
    pub theta: Vec<Vec<f64>>,
    /// $/hr.
    pub objective: f64,
}

impl ScopfProblem {
    pub fn n_vars(&self) -> usize {
        self.n_generators + self.n_cases * self.n_buses
    }

    /// Column of the angle of `bus` in contingency `case`.
    pub fn theta_col(&self, case: usize, bus: usize) -> usize {
        self.n_generators + case * self.n_buses + bus
    }

    /// Replaces the loads (MW per bus) in the balance rows.
    pub fn set_loads(&mut self, p_d_mw: &[f64]) -> Result<()> {
        if p_d_mw.len() != self.n_buses {
            return Err(Error::InvalidInput(format!(
                "load vector has {} entries, case has {} buses",
                p_d_mw.len(),
                self.n_buses
            )));
        }
        for (r, row) in self.eq_rows.iter().enumerate() {
            if let EqRow::Balance { bus, .. } = *row {
                self.qp.b_eq[r] = -p_d_mw[bus] / self.base_mva;
            }
        }
        Ok(())
    }

    /// Decodes a solver point into MW generation, angles and total cost.
    pub fn decode(&self, x: &DVector<f64>) -> Dispatch {
        let p_g = (0..self.n_generators)
            .map(|g| x[g] * self.base_mva)
            .collect();
        let theta = (0..self.n_cases)
            .map(|c| {
                (0..self.n_buses)
                    .map(|i| x[self.theta_col(c, i)])
                    .collect()
            })
            .collect();
        Dispatch {
            p_g,
            theta,
            objective: self.qp.objective(x) + self.const_term,
        }
    }

    pub fn decode_solution(&self, sol: &QpSolution) -> Dispatch {
        self.decode(&sol.x)
    }

    /// Writes dimensions and nonzero triplets of every matrix, one per line.
    pub fn write_debug_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        let qp = &self.qp;
        writeln!(
            out,
            "# n_vars {} n_eq {} n_ineq {} const {:e}",
            qp.n_vars(),
            qp.b_eq.len(),
            qp.b_in.len(),
            self.const_term
        )?;
        let dump = |out: &mut dyn Write, name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        writeln!(out, "{r} {c} {v:e}")?;
                    }
                }
            }
            Ok(())
        };
        let vec = |out: &mut dyn Write, name: &str, v: &DVector<f64>| -> std::io::Result<()> {
            writeln!(out, "{name} {}", v.len())?;
            for (i, x) in v.iter().enumerate() {
                if *x != 0.0 {
                    writeln!(out, "{i} {x:e}")?;
                }
            }
            Ok(())
        };
        dump(&mut out, "Q", &qp.q_mat)?;
        vec(&mut out, "q", &qp.q)?;
        dump(&mut out, "Aeq", &qp.a_eq)?;
        vec(&mut out, "beq", &qp.b_eq)?;
        dump(&mut out, "Aineq", &qp.a_in)?;
        vec(&mut out, "bineq", &qp.b_in)?;
        Ok(())
    }
}

/// Assembles the QP at the case's default loads with the slack angle at 0.
pub fn assemble(network: &Network) -> ScopfProblem {
    assemble_with(network, &network.case.default_loads_mw(), 0.0)
        .expect("default load vector matches the case")
}

/// Assembles the QP for the given loads (MW per bus).
pub fn assemble_with(network: &Network, p_d_mw: &[f64], slack_angle: f64) -> Result<ScopfProblem> {
    let case = &network.case;
    let n = case.n_buses();
    let n_g = case.n_generators();
    let n_cases = network.contingencies.len();
    let n_vars = n_g + n_cases * n;
    let base = case.base_mva;

    let mut qp = QpProblem::new(n_vars);
    for (g, gen) in case.generators.iter().enumerate() {
        qp.q_mat[(g, g)] = 2.0 * gen.cost.quadratic * base * base;
        qp.q[g] = gen.cost.linear * base;
    }
    let const_term = case.generators.iter().map(|g| g.cost.constant).sum();

    let n_eq = n_cases * (n + 1);
    let mut a_eq = DMatrix::zeros(n_eq, n_vars);
    let b_eq = DVector::zeros(n_eq);
    let mut eq_rows = Vec::with_capacity(n_eq);
    for (c, m) in network.matrices.iter().enumerate() {
        let off = n_g + c * n;
        for i in 0..n {
            let r = eq_rows.len();
            for j in 0..n {
                a_eq[(r, off + j)] = m.b[(i, j)];
            }
            eq_rows.push(EqRow::Balance { case: c, bus: i });
        }
        for (g, gen) in case.generators.iter().enumerate() {
            let r = c * (n + 1) + gen.bus;
            a_eq[(r, g)] = -1.0;
        }
        let r = eq_rows.len();
        a_eq[(r, off + case.slack_bus)] = 1.0;
        eq_rows.push(EqRow::SlackPin { case: c });
    }

    let n_lines: usize = network.matrices.iter().map(|m| m.n_rows()).sum();
    let n_in = 2 * n_g + 2 * n_lines;
    let mut a_in = DMatrix::zeros(n_in, n_vars);
    let mut b_in = DVector::zeros(n_in);
    let mut ineq_rows = Vec::with_capacity(n_in);
    for (g, gen) in case.generators.iter().enumerate() {
        let r = ineq_rows.len();
        a_in[(r, g)] = 1.0;
        b_in[r] = gen.p_max_mw / base;
        ineq_rows.push(IneqRow::GenUpper { generator: g });
        a_in[(r + 1, g)] = -1.0;
        b_in[r + 1] = -gen.p_min_mw / base;
        ineq_rows.push(IneqRow::GenLower { generator: g });
    }
    for (c, m) in network.matrices.iter().enumerate() {
        let off = n_g + c * n;
        for (row, &k) in m.branches.iter().enumerate() {
            let br = &case.branches[k];
            let y = 1.0 / br.x;
            let rate = m.rates_pu[row];
            let r = ineq_rows.len();
            a_in[(r, off + br.from)] = y;
            a_in[(r, off + br.to)] = -y;
            b_in[r] = rate;
            ineq_rows.push(IneqRow::LineUpper { case: c, branch: k });
            a_in[(r + 1, off + br.from)] = -y;
            a_in[(r + 1, off + br.to)] = y;
            b_in[r + 1] = rate;
            ineq_rows.push(IneqRow::LineLower { case: c, branch: k });
        }
    }
    qp.a_eq = a_eq;
    qp.b_eq = b_eq;
    qp.a_in = a_in;
    qp.b_in = b_in;

    let mut problem = ScopfProblem {
        qp,
        const_term,
        eq_rows,
        ineq_rows,
        n_generators: n_g,
        n_buses: n,
        n_cases,
        slack_angle,
        base_mva: base,
    };
    for (r, row) in problem.eq_rows.iter().enumerate() {
        if let EqRow::SlackPin { .. } = row {
            problem.qp.b_eq[r] = slack_angle;
        }
    }
    problem.set_loads(p_d_mw)?;
    Ok(problem)
}

/// Total generation cost ($/hr) for MW outputs.
pub fn evaluate_cost(case: &GridCase, p_g_mw: &[f64]) -> f64 {
    case.evaluate_cost(p_g_mw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GenUpper,
    GenLower,
    LineLimit,
    Balance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Contingency index for line and balance violations.
    pub contingency: Option<usize>,
    /// Generator index, branch id or bus index depending on `kind`.
    pub element: usize,
    /// Normalized excess: per-unit for generation and balance, fraction of
    /// the rating for line flows.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Lists every generator-limit, line-limit and balance violation larger
/// than `tol` (normalized).
pub fn check_feasibility(
    network: &Network,
    p_d_mw: &[f64],
    dispatch: &Dispatch,
    tol: f64,
) -> FeasibilityReport {
    let case = &network.case;
    let mut violations = Vec::new();
    for (g, (gen, &p)) in case.generators.iter().zip(&dispatch.p_g).enumerate() {
        let over = (p - gen.p_max_mw) / case.base_mva;
        let under = (gen.p_min_mw - p) / case.base_mva;
        if over > tol {
            violations.push(Violation {
                kind: ViolationKind::GenUpper,
                contingency: None,
                element: g,
                magnitude: over,
            });
        }
        if under > tol {
            violations.push(Violation {
                kind: ViolationKind::GenLower,
                contingency: None,
                element: g,
                magnitude: under,
            });
        }
    }
    let inj = network.injections_pu(&dispatch.p_g, p_d_mw);
    for (c, m) in network.matrices.iter().enumerate() {
        let theta = &dispatch.theta[c];
        for i in 0..case.n_buses() {
            let bt: f64 = (0..case.n_buses()).map(|j| m.b[(i, j)] * theta[j]).sum();
            let r = (bt - inj[i]).abs();
            if r > tol {
                violations.push(Violation {
                    kind: ViolationKind::Balance,
                    contingency: Some(c),
                    element: i,
                    magnitude: r,
                });
            }
        }
        for (row, &k) in m.branches.iter().enumerate() {
            let br = &case.branches[k];
            let flow = m.a[(row, br.from)] * theta[br.from] + m.a[(row, br.to)] * theta[br.to];
            let excess = flow.abs() - 1.0;
            if excess > tol {
                violations.push(Violation {
                    kind: ViolationKind::LineLimit,
                    contingency: Some(c),
                    element: k,
                    magnitude: excess,
                });
            }
        }
    }
    FeasibilityReport { violations }
}
