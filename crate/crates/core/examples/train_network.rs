//! Trains a small network with the flow penalty and prints the loss curve.

use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};
use scopf_learn::mlp::{train, TrainingConfig};

fn main() -> scopf_learn::Result<()> {
    let net = Network::new(load_case("data/three_bus.json")?)?;
    let ds = generate(
        &net,
        &SamplerConfig {
            n_samples: 3000,
            seed: 2,
            ..SamplerConfig::default()
        },
        &GenerateOptions::default(),
    )?;
    let cfg = TrainingConfig {
        epochs: 100,
        ..TrainingConfig::default()
    };
    let trained = train(&net, &ds, &[16, 8], &cfg)?;
    for e in trained.log.iter().step_by(10) {
        println!("epoch {:>3}  L_PG {:.3e}  L_pen {:.3e}", e.epoch, e.l_pg, e.l_pen);
    }
    let out = std::env::temp_dir().join("three_bus_model.json");
    trained.model.save(&out)?;
    println!("{} parameters, saved to {}", trained.model.params.n_params(), out.display());
    Ok(())
}
