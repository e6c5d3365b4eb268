//! Independent oracles shared by the integration and acceptance tests.
//! The oracles never call the library's matrix, contingency or solver
//! code; the `check_*` drivers run the library against them.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use scopf_learn::grid_model::{Branch, Bus, CostCoefficients, Generator, GridCase};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Random connected case with at most `max_buses` buses and up to three
/// generators, the first at the slack bus. Costs are strictly convex.
pub fn random_case(rng: &mut impl Rng, max_buses: usize) -> GridCase {
    let n = rng.gen_range(2..=max_buses);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !edges.iter().any(|&(f, t)| (f, t) == (a, b) || (f, t) == (b, a)) {
            edges.push((a, b));
        }
    }
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: i + 1,
            load_mw: if i > 0 && rng.gen_bool(0.7) { rng.gen_range(10.0..100.0) } else { 0.0 },
        })
        .collect();
    let total: f64 = buses.iter().map(|b| b.load_mw).sum::<f64>().max(20.0);
    let n_g = rng.gen_range(1..=3);
    let generators = (0..n_g)
        .map(|g| {
            let p_min = if rng.gen_bool(0.3) { rng.gen_range(0.0..10.0) } else { 0.0 };
            Generator {
                bus: if g == 0 { 0 } else { rng.gen_range(0..n) },
                p_min_mw: p_min,
                p_max_mw: p_min + rng.gen_range(0.5..1.5) * total,
                cost: CostCoefficients {
                    quadratic: rng.gen_range(0.005..0.05),
                    linear: rng.gen_range(10.0..40.0),
                    constant: rng.gen_range(0.0..50.0),
                },
            }
        })
        .collect();
    let branches: Vec<Branch> = edges
        .into_iter()
        .map(|(from, to)| Branch {
            from,
            to,
            x: rng.gen_range(0.05..0.5),
            rate_mw: f64::INFINITY,
            rate_contingency_mw: None,
        })
        .collect();
    let mut case = GridCase {
        base_mva: 100.0,
        buses,
        branches,
        generators,
        slack_bus: 0,
    };
    // Ratings are drawn around the flows of a capacity-proportional
    // dispatch, so that limits bind often without making most cases
    // infeasible.
    let capacity: f64 = case.generators.iter().map(|g| g.p_max_mw).sum();
    let demand: f64 = case.buses.iter().map(|b| b.load_mw).sum();
    let reference: Vec<f64> = case.generators.iter().map(|g| g.p_max_mw * demand / capacity).collect();
    let p_d = case.default_loads_mw();
    let outs = outages(&case);
    let mut intact = vec![0.0f64; case.branches.len()];
    let mut post = vec![0.0f64; case.branches.len()];
    for &out in &outs {
        let f = flows_mw(&case, out, &reference, &p_d);
        let target = if out.is_none() { &mut intact } else { &mut post };
        for (t, v) in target.iter_mut().zip(&f) {
            *t = t.max(v.abs());
        }
    }
    for k in 0..case.branches.len() {
        let split = rng.gen_bool(0.3);
        let br = &mut case.branches[k];
        if split {
            br.rate_mw = intact[k].max(5.0) * rng.gen_range(0.85..1.6);
            br.rate_contingency_mw = Some(post[k].max(intact[k]).max(5.0) * rng.gen_range(0.85..1.8));
        } else {
            br.rate_mw = intact[k].max(post[k]).max(5.0) * rng.gen_range(0.85..1.6);
        }
    }
    case
}

fn connected(n: usize, branches: &[Branch], out: Option<usize>) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for (k, b) in branches.iter().enumerate() {
            if Some(k) == out {
                continue;
            }
            for (a, c) in [(b.from, b.to), (b.to, b.from)] {
                if a == u && !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Outaged branch per case: `None` for the intact network, then every
/// branch whose removal keeps the graph connected.
pub fn outages(case: &GridCase) -> Vec<Option<usize>> {
    let n = case.buses.len();
    std::iter::once(None)
        .chain((0..case.branches.len()).filter(|&k| connected(n, &case.branches, Some(k))).map(Some))
        .collect()
}

/// Full bus susceptance matrix (per-unit) without branch `out`.
pub fn b_matrix(case: &GridCase, out: Option<usize>) -> DMatrix<f64> {
    let n = case.buses.len();
    let mut b = DMatrix::zeros(n, n);
    for (k, br) in case.branches.iter().enumerate() {
        if Some(k) == out {
            continue;
        }
        let y = 1.0 / br.x;
        b[(br.from, br.from)] += y;
        b[(br.to, br.to)] += y;
        b[(br.from, br.to)] -= y;
        b[(br.to, br.from)] -= y;
    }
    b
}

/// Bus angles for per-unit injections, slack angle zero.
pub fn angles(case: &GridCase, out: Option<usize>, inj_pu: &[f64]) -> Vec<f64> {
    let n = case.buses.len();
    let s = case.slack_bus;
    let keep: Vec<usize> = (0..n).filter(|&i| i != s).collect();
    let b = b_matrix(case, out);
    let red = DMatrix::from_fn(keep.len(), keep.len(), |i, j| b[(keep[i], keep[j])]);
    let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&i| inj_pu[i]));
    let sol = red.lu().solve(&rhs).expect("reduced matrix is nonsingular");
    let mut theta = vec![0.0; n];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = sol[k];
    }
    theta
}

/// MW flow on every branch (0 for the outaged one).
pub fn flows_mw(case: &GridCase, out: Option<usize>, p_g: &[f64], p_d: &[f64]) -> Vec<f64> {
    let base = case.base_mva;
    let mut inj: Vec<f64> = p_d.iter().map(|d| -d / base).collect();
    for (g, gen) in case.generators.iter().enumerate() {
        inj[gen.bus] += p_g[g] / base;
    }
    let theta = angles(case, out, &inj);
    case.branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            if Some(k) == out {
                0.0
            } else {
                base * (theta[br.from] - theta[br.to]) / br.x
            }
        })
        .collect()
}

/// Flow limit of `branch` in the case with outage `out`.
pub fn rate(br: &Branch, out: Option<usize>) -> f64 {
    match (out, br.rate_contingency_mw) {
        (Some(_), Some(r)) => r,
        _ => br.rate_mw,
    }
}

/// Worst relative violation of generator limits, balance and line limits
/// over every case (0 when feasible).
pub fn max_violation(case: &GridCase, p_g: &[f64], p_d: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (g, gen) in case.generators.iter().enumerate() {
        let scale = 1.0 + gen.p_max_mw.abs();
        worst = worst.max((p_g[g] - gen.p_max_mw) / scale).max((gen.p_min_mw - p_g[g]) / scale);
    }
    let total_d: f64 = p_d.iter().sum();
    worst = worst.max((p_g.iter().sum::<f64>() - total_d).abs() / (1.0 + total_d));
    for out in outages(case) {
        let f = flows_mw(case, out, p_g, p_d);
        for (k, br) in case.branches.iter().enumerate() {
            if Some(k) != out {
                worst = worst.max((f[k].abs() - rate(br, out)) / rate(br, out));
            }
        }
    }
    worst
}

/// One linear inequality `a' P_G <= b` in MW.
struct Row {
    a: Vec<f64>,
    b: f64,
}

fn inequality_rows(case: &GridCase, p_d: &[f64]) -> Vec<Row> {
    let n_g = case.generators.len();
    let mut rows = Vec::new();
    for (g, gen) in case.generators.iter().enumerate() {
        let mut a = vec![0.0; n_g];
        a[g] = 1.0;
        rows.push(Row { a: a.clone(), b: gen.p_max_mw });
        a[g] = -1.0;
        rows.push(Row { a, b: -gen.p_min_mw });
    }
    // Flows are affine in P_G: evaluate at zero and at unit vectors.
    let zero = vec![0.0; n_g];
    for out in outages(case) {
        let f0 = flows_mw(case, out, &zero, p_d);
        let cols: Vec<Vec<f64>> = (0..n_g)
            .map(|g| {
                let mut e = vec![0.0; n_g];
                e[g] = 1.0;
                let f1 = flows_mw(case, out, &e, p_d);
                f1.iter().zip(&f0).map(|(x, y)| x - y).collect()
            })
            .collect();
        for (k, br) in case.branches.iter().enumerate() {
            if Some(k) == out {
                continue;
            }
            let a: Vec<f64> = (0..n_g).map(|g| cols[g][k]).collect();
            let r = rate(br, out);
            rows.push(Row { a: a.clone(), b: r - f0[k] });
            rows.push(Row { a: a.iter().map(|v| -v).collect(), b: r + f0[k] });
        }
    }
    rows
}

fn subsets(n: usize, max: usize, f: &mut impl FnMut(&[usize]) -> bool) {
    fn rec(start: usize, n: usize, max: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
        if f(cur) {
            return true;
        }
        if cur.len() == max {
            return false;
        }
        for i in start..n {
            cur.push(i);
            if rec(i + 1, n, max, cur, f) {
                return true;
            }
            cur.pop();
        }
        false
    }
    rec(0, n, max, &mut Vec::new(), f);
}

/// Optimal dispatch (MW) by active-set enumeration on the generation-only
/// problem, or `None` when no feasible dispatch exists.
pub fn active_set_oracle(case: &GridCase, p_d: &[f64]) -> Option<Vec<f64>> {
    let n_g = case.generators.len();
    let rows = inequality_rows(case, p_d);
    let total: f64 = p_d.iter().sum();
    let mut best = None;
    subsets(rows.len(), n_g - 1, &mut |s: &[usize]| {
        let m = 1 + s.len();
        let dim = n_g + m;
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (g, gen) in case.generators.iter().enumerate() {
            k[(g, g)] = 2.0 * gen.cost.quadratic;
            rhs[g] = -gen.cost.linear;
            k[(g, n_g)] = 1.0;
            k[(n_g, g)] = 1.0;
        }
        rhs[n_g] = total;
        for (j, &r) in s.iter().enumerate() {
            for g in 0..n_g {
                k[(g, n_g + 1 + j)] = rows[r].a[g];
                k[(n_g + 1 + j, g)] = rows[r].a[g];
            }
            rhs[n_g + 1 + j] = rows[r].b;
        }
        let lu = k.lu();
        if lu.determinant().abs() < 1e-12 {
            return false;
        }
        let Some(sol) = lu.solve(&rhs) else { return false };
        // multipliers of active inequalities must be non-negative
        if (0..s.len()).any(|j| sol[n_g + 1 + j] < -1e-7) {
            return false;
        }
        let p: Vec<f64> = (0..n_g).map(|g| sol[g]).collect();
        let feasible = rows
            .iter()
            .all(|r| r.a.iter().zip(&p).map(|(a, x)| a * x).sum::<f64>() <= r.b + 1e-7 * (1.0 + r.b.abs()));
        if feasible {
            best = Some(p);
        }
        feasible
    });
    best
}

pub fn cost(case: &GridCase, p_g: &[f64]) -> f64 {
    case.generators.iter().zip(p_g).map(|(g, p)| g.cost.quadratic * p * p + g.cost.linear * p + g.cost.constant).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverCheck {
    /// Both sides found the same optimum; worst deviations recorded.
    Agreed { objective_rel: f64, x_err: f64, kkt: f64, line_binding: bool },
    /// Both sides report that no feasible dispatch exists.
    BothInfeasible,
}

/// Solves the default-load problem of `case` with the library and compares
/// against [`active_set_oracle`].
pub fn check_solver_case(case: &GridCase) -> Result<SolverCheck, String> {
    use scopf_learn::grid_model::Network;
    use scopf_learn::scopf;
    use scopf_learn::solver::{solve_qp, SolverOptions};

    let net = Network::new(case.clone()).map_err(|e| e.to_string())?;
    let outs = outages(case);
    if net.contingencies.len() != outs.len() {
        return Err(format!("contingency count {} vs oracle {}", net.contingencies.len(), outs.len()));
    }
    let p_d = case.default_loads_mw();
    let sp = scopf::assemble(&net);
    let sol = solve_qp(&sp.qp, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let Some(p_star) = active_set_oracle(case, &p_d) else {
        return if sol.is_optimal() {
            Err("solver found an optimum the oracle says is infeasible".into())
        } else {
            Ok(SolverCheck::BothInfeasible)
        };
    };
    if !sol.is_optimal() {
        return Err(format!("solver status {:?}, oracle found {p_star:?}", sol.status));
    }
    let base = case.base_mva;
    let n = case.buses.len();
    let n_g = case.generators.len();
    let f_star = cost(case, &p_star);
    let f = sol.objective + sp.const_term;
    let objective_rel = (f - f_star).abs() / f_star.abs().max(1.0);
    let mut x_err: f64 = 0.0;
    for g in 0..n_g {
        x_err = x_err.max((sol.x[g] - p_star[g] / base).abs());
    }
    let mut inj: Vec<f64> = p_d.iter().map(|d| -d / base).collect();
    for (g, gen) in case.generators.iter().enumerate() {
        inj[gen.bus] += p_star[g] / base;
    }
    for (c, out) in outs.iter().enumerate() {
        let theta = angles(case, *out, &inj);
        for i in 0..n {
            x_err = x_err.max((sol.x[n_g + c * n + i] - theta[i]).abs());
        }
    }
    let line_binding = outs.iter().any(|&out| {
        let f = flows_mw(case, out, &p_star, &p_d);
        case.branches
            .iter()
            .enumerate()
            .any(|(k, br)| Some(k) != out && f[k].abs() >= rate(br, out) * (1.0 - 1e-6))
    });
    Ok(SolverCheck::Agreed {
        objective_rel,
        x_err,
        kkt: sol.kkt_residuals.max(),
        line_binding,
    })
}

/// l1 projection for a case with exactly two generators, by scanning the
/// non-slack output (the slack output follows from balance) and refining
/// around the best grid point. Returns `(distance, p_g)`.
pub fn grid_projection(case: &GridCase, p_d: &[f64], p_hat: &[f64]) -> Option<(f64, Vec<f64>)> {
    assert_eq!(case.generators.len(), 2);
    let slack = case.generators.iter().position(|g| g.bus == case.slack_bus).unwrap();
    let other = 1 - slack;
    let total: f64 = p_d.iter().sum();
    let eval = |u: f64| {
        let mut p = vec![0.0; 2];
        p[other] = u;
        p[slack] = total - u;
        let feasible = max_violation(case, &p, p_d) <= 0.0;
        let d = (p[0] - p_hat[0]).abs() + (p[1] - p_hat[1]).abs();
        (feasible, d, p)
    };
    let g = &case.generators[other];
    let scan = |lo: f64, hi: f64, steps: usize| {
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        for i in 0..=steps {
            let u = lo + (hi - lo) * i as f64 / steps as f64;
            let (ok, d, p) = eval(u);
            if ok && best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, p, u));
            }
        }
        best
    };
    let steps = 20_000;
    let (_, _, u) = scan(g.p_min_mw, g.p_max_mw, steps)?;
    let h = (g.p_max_mw - g.p_min_mw) / steps as f64;
    let (d, p, _) = scan((u - h).max(g.p_min_mw), (u + h).min(g.p_max_mw), 2_000)?;
    Some((d, p))
}

/// K nearest training loads by a full sort, ties to the lower index, and
/// the mean of their labels.
pub fn knn_full_scan(features: &[Vec<f64>], labels: &[Vec<f64>], q: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut d: Vec<(f64, usize)> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let idx: Vec<usize> = d[..k].iter().map(|p| p.1).collect();
    let mut mean = vec![0.0; labels[0].len()];
    for &i in &idx {
        for (m, v) in mean.iter_mut().zip(&labels[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    (idx, mean)
}

/// Network with random Xavier weights and unit-scale input normalization.
pub fn random_model(case: &GridCase, hidden: &[usize], seed: u64) -> scopf_learn::mlp::MlpModel {
    use scopf_learn::dataset::NormStats;
    use scopf_learn::mlp::{MlpModel, MlpParameters};
    let buses = case.load_buses();
    let stats = NormStats {
        mean: buses.iter().map(|&b| case.buses[b].load_mw).collect(),
        std: buses.iter().map(|&b| 0.1 * case.buses[b].load_mw).collect(),
        buses,
    };
    let mut sizes = vec![stats.n_inputs()];
    sizes.extend_from_slice(hidden);
    sizes.push(case.predicted_generators().len());
    let params = MlpParameters::xavier_seeded(&sizes, seed).unwrap();
    MlpModel::new(case, stats, params, 0.0, None).unwrap()
}

/// `max_c |B_c theta_c - (P_G - P_D)|_inf` in per-unit.
pub fn balance_residual(case: &GridCase, p_g: &[f64], p_d: &[f64], theta: &[Vec<f64>]) -> f64 {
    let base = case.base_mva;
    let mut inj: Vec<f64> = p_d.iter().map(|d| -d / base).collect();
    for (g, gen) in case.generators.iter().enumerate() {
        inj[gen.bus] += p_g[g] / base;
    }
    let mut worst: f64 = 0.0;
    for (c, out) in outages(case).into_iter().enumerate() {
        let b = b_matrix(case, out);
        let t = DVector::from_column_slice(&theta[c]);
        let r = b * t;
        for i in 0..inj.len() {
            worst = worst.max((r[i] - inj[i]).abs());
        }
    }
    worst
}
