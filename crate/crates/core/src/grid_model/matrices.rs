use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::{ContingencySet, GridCase};
use crate::{Error, Result};

/// Electrical matrices of one contingency case, all in per-unit.
#[derive(Debug, Clone)]
pub struct ContingencyMatrices {
    /// Contingency index into the owning [`ContingencySet`].
    pub case_index: usize,
    /// N x N admittance (susceptance) matrix.
    pub b: DMatrix<f64>,
    /// B with the slack row and column removed.
    pub b_red: DMatrix<f64>,
    b_red_factor: Cholesky<f64, Dyn>,
    /// One row per in-service branch: `+1/(rate*x)` at the sending bus and
    /// `-1/(rate*x)` at the receiving bus, so `|A theta| <= 1` is the flow
    /// limit.
    pub a: DMatrix<f64>,
    /// Branch id of each row of `a`.
    pub branches: Vec<usize>,
    /// Flow limit of each row of `a`, per-unit.
    pub rates_pu: Vec<f64>,
    /// Position of each bus in the reduced ordering (`None` for the slack).
    pub reduced_index: Vec<Option<usize>>,
    /// Bus indices in reduced order.
    pub reduced_buses: Vec<usize>,
    slack_bus: usize,
}

impl ContingencyMatrices {
    pub fn n_rows(&self) -> usize {
        self.branches.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    /// Lower-triangular Cholesky factor of `b_red`.
    pub fn factor_l(&self) -> DMatrix<f64> {
        self.b_red_factor.l()
    }

    /// Solves `B_red x = rhs` with the cached factorization.
    pub fn solve_reduced(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.b_red_factor.solve(rhs)
    }

    /// Phase angles for the full network given nodal net injections
    /// (generation minus load, per-unit). The slack angle is pinned to
    /// `slack_angle`.
    pub fn solve_angles(&self, injection_pu: &[f64], slack_angle: f64) -> Vec<f64> {
        let rhs = DVector::from_iterator(
            self.reduced_buses.len(),
            self.reduced_buses.iter().map(|&i| injection_pu[i]),
        );
        let reduced = self.solve_reduced(&rhs);
        // B has zero row sums, so shifting every angle by the slack angle
        // leaves B*theta unchanged.
        (0..injection_pu.len())
            .map(|i| match self.reduced_index[i] {
                Some(r) => reduced[r] + slack_angle,
                None => slack_angle,
            })
            .collect()
    }

    /// Normalized line flows `A theta`.
    pub fn normalized_flows(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.a * t).iter().copied().collect()
    }
}

/// Builds the matrices for contingency `c`.
pub fn build_matrices(
    case: &GridCase,
    cont: &ContingencySet,
    c: usize,
) -> Result<ContingencyMatrices> {
    let contingency = cont
        .cases
        .get(c)
        .ok_or_else(|| Error::InvalidInput(format!("contingency index {c} out of range")))?;
    let n = case.n_buses();
    let slack = case.slack_bus;

    let mut b = DMatrix::zeros(n, n);
    for &k in &contingency.in_service {
        let br = &case.branches[k];
        let y = 1.0 / br.x;
        b[(br.from, br.to)] -= y;
        b[(br.to, br.from)] -= y;
        b[(br.from, br.from)] += y;
        b[(br.to, br.to)] += y;
    }

    let reduced_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut reduced_index = vec![None; n];
    for (r, &i) in reduced_buses.iter().enumerate() {
        reduced_index[i] = Some(r);
    }
    let m = reduced_buses.len();
    let b_red = DMatrix::from_fn(m, m, |r, s| b[(reduced_buses[r], reduced_buses[s])]);
    let b_red_factor = Cholesky::new(b_red.clone()).ok_or_else(|| {
        Error::Solver(format!(
            "reduced admittance of contingency {c} is not positive definite (disconnected case)"
        ))
    })?;

    let rows = contingency.in_service.len();
    let mut a = DMatrix::zeros(rows, n);
    let mut rates_pu = Vec::with_capacity(rows);
    for (row, &k) in contingency.in_service.iter().enumerate() {
        let br = &case.branches[k];
        let rate = case.to_pu(br.rate_for_case(c));
        let v = 1.0 / (rate * br.x);
        a[(row, br.from)] = v;
        a[(row, br.to)] = -v;
        rates_pu.push(rate);
    }

    Ok(ContingencyMatrices {
        case_index: c,
        b,
        b_red,
        b_red_factor,
        a,
        branches: contingency.in_service.clone(),
        rates_pu,
        reduced_index,
        reduced_buses,
        slack_bus: slack,
    })
}

/// Builds the matrices for every contingency in `cont`, in order.
pub fn build_all_matrices(
    case: &GridCase,
    cont: &ContingencySet,
) -> Result<Vec<ContingencyMatrices>> {
    (0..cont.len())
        .into_par_iter()
        .map(|c| build_matrices(case, cont, c))
        .collect()
}
