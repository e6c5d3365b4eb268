use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::presolve::independent_rows;
use super::{kkt_residuals, QpProblem, QpSolution, SolveStatus, SolverOptions};
use crate::{Error, Result};

const STEP_FRACTION: f64 = 0.99;
const REG_PRIMAL: f64 = 1e-9;
const REG_DUAL: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 2;
const DEPENDENT_ROW_TOL: f64 = 1e-10;

/// Problem data after presolve: independent equality rows and a scaled
/// objective.
struct Scaled<'a> {
    q_mat: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    kept_rows: Vec<usize>,
    cost_scale: f64,
}

impl<'a> Scaled<'a> {
    fn new(problem: &'a QpProblem) -> Self {
        let kept_rows = independent_rows(&problem.a_eq, DEPENDENT_ROW_TOL);
        let n = problem.n_vars();
        let a = DMatrix::from_fn(kept_rows.len(), n, |r, c| problem.a_eq[(kept_rows[r], c)]);
        let b = DVector::from_iterator(kept_rows.len(), kept_rows.iter().map(|&r| problem.b_eq[r]));
        let magnitude = problem.q_mat.amax().max(problem.q.amax()).max(1.0);
        let cost_scale = 1.0 / magnitude;
        Scaled {
            q_mat: &problem.q_mat * cost_scale,
            q: &problem.q * cost_scale,
            a,
            b,
            g: &problem.a_in,
            h: &problem.b_in,
            kept_rows,
            cost_scale,
        }
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    fn p(&self) -> usize {
        self.b.len()
    }

    fn m(&self) -> usize {
        self.h.len()
    }

    /// Assembles the regularized and plain reduced KKT matrices for slack
    /// weights `w = z / s`.
    fn kkt(&self, w: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, p) = (self.n(), self.p());
        let mut wg = self.g.clone();
        for (mut row, wi) in wg.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let h = &self.q_mat + self.g.tr_mul(&wg);
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        k.view_mut((n, 0), (p, n)).copy_from(&self.a);
        k.view_mut((0, n), (n, p)).copy_from(&self.a.transpose());
        let plain = k.clone();
        for i in 0..n {
            k[(i, i)] += REG_PRIMAL;
        }
        for i in n..n + p {
            k[(i, i)] -= REG_DUAL;
        }
        (k, plain)
    }
}

struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    plain: DMatrix<f64>,
}

impl Factored {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..REFINEMENT_STEPS {
            let r = rhs - &self.plain * &sol;
            sol += self.lu.solve(&r)?;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
}

/// Largest step in (0, 1] that keeps `v + t*dv` non-negative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).fold(1.0f64, |t, (vi, di)| {
        if *di < 0.0 {
            t.min(-vi / di)
        } else {
            t
        }
    })
}

pub(super) fn solve(problem: &QpProblem, opts: &SolverOptions) -> Result<QpSolution> {
    let sc = Scaled::new(problem);
    let (n, p, m) = (sc.n(), sc.p(), sc.m());

    // Dropped dependent rows must be consistent; a zero row with a nonzero
    // right-hand side is the obvious failure.
    for r in 0..problem.a_eq.nrows() {
        if problem.a_eq.row(r).amax() == 0.0 && problem.b_eq[r].abs() > opts.tolerance {
            return Ok(infeasible_point(problem, 0));
        }
    }

    let (mut x, mut y, mut z, mut s) = starting_point(&sc, opts)?;
    let mut merit_trace = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    loop {
        let r_d = &sc.q_mat * &x + &sc.q + sc.a.tr_mul(&y) + sc.g.tr_mul(&z);
        let r_p = &sc.a * &x - &sc.b;
        let r_g = sc.g * &x + &s - sc.h;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        merit_trace.push(r_d.amax() + r_p.amax() + r_g.amax() + mu);

        let (y_full, z_full) = unscale_multipliers(&sc, problem.a_eq.nrows(), &y, &z);
        let res = kkt_residuals(problem, &x, &y_full, &z_full, &s);
        if opts.verbosity >= 2 {
            log::debug!(
                "ipm iter {iterations:3}: primal {:.2e} dual {:.2e} comp {:.2e} mu {mu:.2e}",
                res.primal,
                res.dual,
                res.complementarity
            );
        }
        if res.max() <= opts.tolerance {
            status = SolveStatus::Optimal;
            break;
        }
        if farkas_certificate(&sc, &y, &z) {
            status = SolveStatus::Infeasible;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        let w = DVector::from_iterator(m, z.iter().zip(s.iter()).map(|(zi, si)| zi / si));
        let (k, plain) = sc.kkt(&w);
        let fac = Factored { lu: k.lu(), plain };

        // Predictor.
        let r_sz = s.component_mul(&z);
        let Some(aff) = newton_direction(&sc, &fac, &w, &r_d, &r_p, &r_g, &s, &z, &r_sz) else {
            return Err(Error::Solver("KKT system is singular".into()));
        };
        let alpha_aff = max_step(&s, &aff.ds).min(max_step(&z, &aff.dz));
        let sigma = if m > 0 {
            let s_a = &s + &aff.ds * alpha_aff;
            let z_a = &z + &aff.dz * alpha_aff;
            let mu_aff = s_a.dot(&z_a) / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // Corrector with centering.
        let r_sz = DVector::from_iterator(
            m,
            (0..m).map(|i| s[i] * z[i] + aff.ds[i] * aff.dz[i] - sigma * mu),
        );
        let Some(dir) = newton_direction(&sc, &fac, &w, &r_d, &r_p, &r_g, &s, &z, &r_sz) else {
            return Err(Error::Solver("KKT solve produced non-finite values".into()));
        };
        let alpha = (STEP_FRACTION * max_step(&s, &dir.ds).min(max_step(&z, &dir.dz))).min(1.0);

        x.axpy(alpha, &dir.dx, 1.0);
        y.axpy(alpha, &dir.dy, 1.0);
        z.axpy(alpha, &dir.dz, 1.0);
        s.axpy(alpha, &dir.ds, 1.0);
        iterations += 1;
    }

    let (y_full, z_full) = unscale_multipliers(&sc, problem.a_eq.nrows(), &y, &z);
    let kkt = kkt_residuals(problem, &x, &y_full, &z_full, &s);
    let objective = problem.objective(&x);
    if opts.verbosity >= 1 {
        log::info!(
            "ipm: {status:?} after {iterations} iterations (n={n}, eq={p}, ineq={m}), objective {objective:.6e}"
        );
    }
    Ok(QpSolution {
        x,
        y: y_full,
        z: z_full,
        s,
        status,
        iterations,
        kkt_residuals: kkt,
        objective,
        merit_trace,
    })
}

fn infeasible_point(problem: &QpProblem, iterations: usize) -> QpSolution {
    let n = problem.n_vars();
    let m = problem.b_in.len();
    let x = DVector::zeros(n);
    let y = DVector::zeros(problem.b_eq.len());
    let z = DVector::zeros(m);
    let s = DVector::zeros(m);
    let kkt = kkt_residuals(problem, &x, &y, &z, &s);
    QpSolution {
        objective: problem.objective(&x),
        x,
        y,
        z,
        s,
        status: SolveStatus::Infeasible,
        iterations,
        kkt_residuals: kkt,
        merit_trace: Vec::new(),
    }
}

fn unscale_multipliers(
    sc: &Scaled<'_>,
    n_eq: usize,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut y_full = DVector::zeros(n_eq);
    for (k, &r) in sc.kept_rows.iter().enumerate() {
        y_full[r] = y[k] / sc.cost_scale;
    }
    (y_full, z / sc.cost_scale)
}

/// Detects growing multipliers that satisfy `A'y + G'z ~ 0`, `b'y + h'z < 0`
/// with `z >= 0`, a certificate that no feasible point exists.
fn farkas_certificate(sc: &Scaled<'_>, y: &DVector<f64>, z: &DVector<f64>) -> bool {
    let t = y.amax().max(z.amax());
    if t < 1e6 {
        return false;
    }
    let y_hat = y / t;
    let z_hat = z / t;
    let combo = sc.a.tr_mul(&y_hat) + sc.g.tr_mul(&z_hat);
    let scale = 1.0 + sc.a.amax().max(sc.g.amax());
    let gap = sc.b.dot(&y_hat) + sc.h.dot(&z_hat);
    combo.amax() <= 1e-6 * scale && gap < -1e-6
}

#[allow(clippy::too_many_arguments)]
fn newton_direction(
    sc: &Scaled<'_>,
    fac: &Factored,
    w: &DVector<f64>,
    r_d: &DVector<f64>,
    r_p: &DVector<f64>,
    r_g: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
    r_sz: &DVector<f64>,
) -> Option<Direction> {
    let (n, p, m) = (sc.n(), sc.p(), sc.m());
    // dz = W (G dx + r_g) - r_sz / s, substituted into the stationarity row.
    let inner = DVector::from_iterator(m, (0..m).map(|i| w[i] * r_g[i] - r_sz[i] / s[i]));
    let top = -r_d - sc.g.tr_mul(&inner);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&top);
    rhs.rows_mut(n, p).copy_from(&(-r_p));
    let sol = fac.solve(&rhs)?;
    let dx = sol.rows(0, n).into_owned();
    let dy = sol.rows(n, p).into_owned();
    let gdx = sc.g * &dx;
    let dz = DVector::from_iterator(
        m,
        (0..m).map(|i| w[i] * (gdx[i] + r_g[i]) - r_sz[i] / s[i]),
    );
    let ds = DVector::from_iterator(m, (0..m).map(|i| -(r_sz[i] + s[i] * dz[i]) / z[i]));
    Some(Direction { dx, dy, dz, ds })
}

type Point = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Least-squares style start: minimize the regularized objective plus
/// `|Gx - h|^2` subject to the equalities, then lift slacks to at least one.
fn starting_point(sc: &Scaled<'_>, opts: &SolverOptions) -> Result<Point> {
    let (n, p, m) = (sc.n(), sc.p(), sc.m());
    let ones = DVector::from_element(m, 1.0);
    let (k, plain) = sc.kkt(&ones);
    let fac = Factored { lu: k.lu(), plain };
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-&sc.q + sc.g.tr_mul(sc.h)));
    rhs.rows_mut(n, p).copy_from(&sc.b);
    let sol = fac
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("could not compute a starting point".into()))?;
    let mut x = sol.rows(0, n).into_owned();
    let y = DVector::zeros(p);
    let slack = sc.h - sc.g * &x;
    let mut s = slack.map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    if let Some(pert) = opts.start_perturbation {
        let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);
        for v in x.iter_mut() {
            *v += pert.scale * rng.gen_range(-1.0..1.0) * (1.0 + v.abs());
        }
        for v in s.iter_mut() {
            *v *= 1.0 + pert.scale * rng.gen_range(0.0..1.0);
        }
        for v in z.iter_mut() {
            *v *= 1.0 + pert.scale * rng.gen_range(0.0..1.0);
        }
    }
    Ok((x, y, z, s))
}
