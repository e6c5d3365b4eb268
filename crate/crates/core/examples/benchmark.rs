//! Benchmarks a trained network and the K=50 baseline against the oracle on
//! the typical and the two congested scenarios.

use scopf_learn::cli::{run_bench, BenchOptions, Overlay, Predictor};
use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};
use scopf_learn::mlp::{train, TrainingConfig};
use scopf_learn::pipeline::{KnnMetric, KnnModel};

fn main() -> scopf_learn::Result<()> {
    let base = load_case("data/three_bus.json")?;
    for name in ["typical", "lightly_congested", "heavily_congested"] {
        let overlay = Overlay::load(format!("data/{name}.toml"))?;
        let net = Network::new(overlay.apply(&base)?)?;
        let [lo, hi] = overlay.range.unwrap_or([0.9, 1.1]);
        let ds = generate(
            &net,
            &SamplerConfig {
                range_low: lo,
                range_high: hi,
                n_samples: 5500,
                seed: 6,
            },
            &GenerateOptions::default(),
        )?;
        let model = train(&net, &ds, &[16, 8], &TrainingConfig::default())?.model;
        let knn = KnnModel::fit(&ds, 50, KnnMetric::Raw)?;
        let report = run_bench(
            &net,
            &ds,
            &[Predictor::Network(&model), Predictor::Knn(&knn)],
            &BenchOptions::default(),
        )?;
        println!("== {name}");
        print!("{}", report.summary());
    }
    Ok(())
}
