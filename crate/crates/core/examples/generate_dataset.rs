//! Samples loads around the nominal values, labels them with the oracle and
//! saves the dataset.

use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};

fn main() -> scopf_learn::Result<()> {
    let net = Network::new(load_case("data/three_bus.json")?)?;
    let cfg = SamplerConfig {
        n_samples: 2000,
        seed: 1,
        ..SamplerConfig::default()
    };
    let ds = generate(&net, &cfg, &GenerateOptions::default())?;
    let stats = ds.stats()?;
    println!("{} samples, {} dropped", ds.samples.len(), ds.header.dropped.len());
    println!("input buses {:?}, mean {:?}, std {:?}", stats.buses, stats.mean, stats.std);
    let first = &ds.samples[0];
    println!("sample 0: loads {:?} -> alpha {:?}, cost {:.2}", first.p_d, first.alpha, first.objective);
    let out = std::env::temp_dir().join("three_bus_dataset.jsonl");
    ds.save(&out)?;
    println!("saved to {}", out.display());
    Ok(())
}
