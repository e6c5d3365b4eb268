//! Solves the preventive N-1 dispatch for the default loads and prints the
//! generation, the cost and the most loaded line of every case.

use scopf_learn::grid_model::{load_case, Network};
use scopf_learn::scopf;
use scopf_learn::solver::{solve_qp, SolverOptions};

fn main() -> scopf_learn::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/three_bus.json".into());
    let net = Network::new(load_case(&path)?)?;
    let problem = scopf::assemble(&net);
    println!(
        "{} variables, {} equalities, {} inequalities",
        problem.n_vars(),
        problem.qp.a_eq.nrows(),
        problem.qp.a_in.nrows()
    );
    let sol = solve_qp(&problem.qp, &SolverOptions::default())?;
    println!("status {:?} after {} iterations, KKT {:.1e}", sol.status, sol.iterations, sol.kkt_residuals.max());
    let d = problem.decode_solution(&sol);
    for (g, p) in d.p_g.iter().enumerate() {
        println!("generator {g}: {p:.3} MW");
    }
    println!("cost {:.2} $/hr", d.objective);
    for (c, m) in net.matrices.iter().enumerate() {
        let worst = m.normalized_flows(&d.theta[c]).into_iter().fold(0.0f64, |a, f| a.max(f.abs()));
        println!("case {c}: max |flow| / limit = {worst:.3}");
    }
    Ok(())
}
