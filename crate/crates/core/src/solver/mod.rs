//! Dense primal-dual interior-point solver for convex quadratic programs
//!
//! ```text
//! minimize    1/2 x'Qx + q'x
//! subject to  A_eq x  = b_eq
//!             A_in x <= b_in
//! ```
//!
//! The same code path solves linear programs (`Q = 0`). Mehrotra
//! predictor-corrector steps are taken on the reduced KKT system, which is
//! factored densely once per iteration.

mod ipm;
mod presolve;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use presolve::independent_rows;

/// Canonical convex QP in dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// An unconstrained problem with `n` variables and zero objective.
    pub fn new(n: usize) -> Self {
        QpProblem {
            q_mat: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    /// A linear program `min c'x` over the given constraints.
    pub fn lp(
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Self {
        let n = c.len();
        QpProblem {
            q_mat: DMatrix::zeros(n, n),
            q: c,
            a_eq,
            b_eq,
            a_in,
            b_in,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q.dot(x)
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.n_vars();
        let ok = self.q_mat.shape() == (n, n)
            && self.a_eq.ncols() == n
            && self.a_in.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.nrows() == self.b_in.len();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("QP dimensions are inconsistent".into()))
        }
    }
}

/// Random perturbation of the starting point, used to check that the
/// optimum does not depend on where the iteration begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPerturbation {
    pub seed: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// 0 = silent, 1 = summary, 2 = per-iteration log lines.
    pub verbosity: u8,
    pub start_perturbation: Option<StartPerturbation>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iter: 100,
            verbosity: 0,
            start_perturbation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Relative KKT residuals. Each is an infinity norm divided by one plus
/// the magnitude of the terms it balances:
///
/// - `primal`: `max(|A_eq x - b_eq|, |A_in x + s - b_in|, max(A_in x - b_in, 0))`
///   over `1 + max(|b|, |Ax|)`.
/// - `dual`: `|Qx + q + A_eq'y + A_in'z|` over
///   `1 + max(|Qx|, |q|, |A_eq'y|, |A_in'z|)`.
/// - `complementarity`: `max_i |z_i s_i|` over `1 + |objective|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of every equality row; rows dropped as redundant get 0.
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residuals: KktResiduals,
    /// `1/2 x'Qx + q'x` at `x`.
    pub objective: f64,
    /// Residual norm plus duality measure at each iterate (scaled problem).
    pub merit_trace: Vec<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Computes the relative KKT residuals of a candidate primal-dual point.
pub fn kkt_residuals(
    problem: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> KktResiduals {
    let inf = |v: &DVector<f64>| v.amax();
    let ax = &problem.a_eq * x;
    let gx = &problem.a_in * x;
    let eq = inf(&(&ax - &problem.b_eq));
    let slack = inf(&(&gx + s - &problem.b_in));
    let violation = (&gx - &problem.b_in).iter().fold(0.0f64, |m, v| m.max(*v));
    let scale_p = 1.0
        + inf(&problem.b_eq)
            .max(inf(&problem.b_in))
            .max(inf(&ax))
            .max(inf(&gx));
    let primal = eq.max(slack).max(violation) / scale_p;

    let qx = &problem.q_mat * x;
    let aty = problem.a_eq.tr_mul(y);
    let gtz = problem.a_in.tr_mul(z);
    let r_d = &qx + &problem.q + &aty + &gtz;
    let scale_d = 1.0 + inf(&qx).max(inf(&problem.q)).max(inf(&aty)).max(inf(&gtz));
    let dual = inf(&r_d) / scale_d;

    let comp = z
        .iter()
        .zip(s.iter())
        .fold(0.0f64, |m, (zi, si)| m.max((zi * si).abs()));
    let complementarity = comp / (1.0 + problem.objective(x).abs());
    KktResiduals {
        primal,
        dual,
        complementarity,
    }
}

/// Solves a convex QP. Only inconsistent dimensions are reported as `Err`;
/// infeasibility and iteration limits come back in `status`.
pub fn solve_qp(problem: &QpProblem, opts: &SolverOptions) -> Result<QpSolution> {
    problem.check_dimensions()?;
    ipm::solve(problem, opts)
}

/// Solves `min c'x` subject to linear constraints.
pub fn solve_lp(
    c: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    opts: &SolverOptions,
) -> Result<QpSolution> {
    solve_qp(&QpProblem::lp(c, a_eq, b_eq, a_in, b_in), opts)
}
