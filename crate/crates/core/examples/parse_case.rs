//! Reads a case (MATPOWER or JSON), prints its size and N-1 set, and writes
//! the JSON form.
//!
//!     cargo run --example parse_case -- data/three_bus.m

use scopf_learn::grid_model::{load_case, to_json, Network};

fn main() -> scopf_learn::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/three_bus.m".into());
    let case = load_case(&path)?;
    let net = Network::new(case)?;
    let c = &net.case;
    println!(
        "{} buses, {} generators, {} branches, {} post-contingency cases",
        c.n_buses(),
        c.n_generators(),
        c.branches.len(),
        net.contingencies.n_outages()
    );
    for s in &net.contingencies.skipped {
        println!("skipped: {}", s.reason);
    }
    println!("{}", to_json(c));
    Ok(())
}
