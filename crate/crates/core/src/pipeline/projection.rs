use nalgebra::{DMatrix, DVector};

use super::InferOptions;
use crate::grid_model::Network;
use crate::scopf::{self, check_feasibility, Dispatch};
use crate::solver::{solve_lp, SolveStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Projected MW per generator.
    pub p_g: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    /// `sum |p_hat - U|`, MW, recomputed from `p_g`.
    pub distance: f64,
    /// LP optimum converted to MW (0 when no LP was needed).
    pub lp_objective: f64,
}

/// Nearest dispatch (l1 distance) satisfying generator limits, power
/// balance and every contingency's line limits.
///
/// The LP works on `[U | theta_0 .. theta_{C-1} | t]` with
/// `t >= U - p_hat` and `t >= p_hat - U`, minimizing `sum t`. A prediction
/// that already passes the feasibility check is returned unchanged.
pub fn project_l1(
    network: &Network,
    p_d: &[f64],
    p_hat: &[f64],
    slack_angle: f64,
    opts: &InferOptions,
) -> Result<Projection> {
    let case = &network.case;
    let n_g = case.n_generators();
    if p_hat.len() != n_g {
        return Err(Error::InvalidInput(format!(
            "prediction has {} entries, case has {n_g} generators",
            p_hat.len()
        )));
    }
    let theta = network.reconstruct_angles(p_hat, p_d, slack_angle);
    let candidate = Dispatch {
        p_g: p_hat.to_vec(),
        theta,
        objective: 0.0,
    };
    if check_feasibility(network, p_d, &candidate, opts.feasibility_tol).is_feasible() {
        return Ok(Projection {
            p_g: candidate.p_g,
            theta: candidate.theta,
            distance: 0.0,
            lp_objective: 0.0,
        });
    }

    let sp = scopf::assemble_with(network, p_d, slack_angle)?;
    let base = case.base_mva;
    let n_x = sp.n_vars();
    let n = n_x + n_g;
    let qp = &sp.qp;

    let mut c = DVector::zeros(n);
    c.rows_mut(n_x, n_g).fill(1.0);

    let mut a_eq = DMatrix::zeros(qp.a_eq.nrows(), n);
    a_eq.view_mut((0, 0), qp.a_eq.shape()).copy_from(&qp.a_eq);

    let m_in = qp.a_in.nrows();
    let mut a_in = DMatrix::zeros(m_in + 2 * n_g, n);
    a_in.view_mut((0, 0), qp.a_in.shape()).copy_from(&qp.a_in);
    let mut b_in = DVector::zeros(m_in + 2 * n_g);
    b_in.rows_mut(0, m_in).copy_from(&qp.b_in);
    for g in 0..n_g {
        let target = p_hat[g] / base;
        // U - t <= p_hat
        a_in[(m_in + 2 * g, g)] = 1.0;
        a_in[(m_in + 2 * g, n_x + g)] = -1.0;
        b_in[m_in + 2 * g] = target;
        // -U - t <= -p_hat
        a_in[(m_in + 2 * g + 1, g)] = -1.0;
        a_in[(m_in + 2 * g + 1, n_x + g)] = -1.0;
        b_in[m_in + 2 * g + 1] = -target;
    }

    let sol = solve_lp(c, a_eq, qp.b_eq.clone(), a_in, b_in, &opts.solver)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::LoadInfeasible),
        SolveStatus::MaxIter => {
            return Err(Error::Solver(format!(
                "projection LP did not converge in {} iterations",
                sol.iterations
            )))
        }
    }

    let mut p_g: Vec<f64> = (0..n_g).map(|g| sol.x[g] * base).collect();
    let slack = case.slack_generator();
    // Close the balance exactly; the LP meets it only to solver tolerance.
    p_g[slack] = crate::dataset::slack_by_balance(case, p_d, &p_g);
    let theta = network.reconstruct_angles(&p_g, p_d, slack_angle);
    let distance = p_g.iter().zip(p_hat).map(|(u, p)| (u - p).abs()).sum();
    Ok(Projection {
        p_g,
        theta,
        distance,
        lp_objective: sol.objective * base,
    })
}
