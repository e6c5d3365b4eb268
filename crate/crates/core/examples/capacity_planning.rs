//! Estimates the Lipschitz constant of the load to generation mapping from
//! data and prints the smallest network widths that can reach a target
//! worst-case error.

use scopf_learn::analysis::{
    estimate_lipschitz_dataset, load_domain_diameter, min_capacity, op_count, CapacityQuery, LipschitzOptions,
};
use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};

fn main() -> scopf_learn::Result<()> {
    let net = Network::new(load_case("data/three_bus.json")?)?;
    let cfg = SamplerConfig {
        n_samples: 1000,
        seed: 5,
        ..SamplerConfig::default()
    };
    let ds = generate(&net, &cfg, &GenerateOptions::default())?;
    let lipschitz = estimate_lipschitz_dataset(&ds, &LipschitzOptions::default())?;
    let diameter = load_domain_diameter(&net.case, cfg.range_low, cfg.range_high);
    println!("Lipschitz estimate {lipschitz:.4e} per MW, domain diameter {diameter:.2} MW");
    for eps in [1e-2, 1e-3, 1e-4] {
        let report = min_capacity(
            CapacityQuery {
                lipschitz,
                diameter,
                epsilon: eps,
            },
            6,
        )?;
        println!("epsilon {eps:e}:");
        print!("{report}");
    }
    println!("operations for 2/16/8/1: {}", op_count(&[2, 16, 8, 1])?);
    Ok(())
}
