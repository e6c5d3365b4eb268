//! Nearest-neighbor baseline: averages the generation of the K closest
//! training loads.

use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};
use scopf_learn::pipeline::{knn_predict, InferOptions, KnnMetric, KnnModel};

fn main() -> scopf_learn::Result<()> {
    let net = Network::new(load_case("data/three_bus.json")?)?;
    let ds = generate(
        &net,
        &SamplerConfig {
            n_samples: 2000,
            seed: 4,
            ..SamplerConfig::default()
        },
        &GenerateOptions::default(),
    )?;
    let query: Vec<f64> = net.case.default_loads_mw().iter().map(|d| d * 1.03).collect();
    for k in [1, 10, 50] {
        let knn = KnnModel::fit(&ds, k, KnnMetric::Raw)?;
        let r = knn_predict(&knn, &net, &query, &InferOptions::default())?;
        println!("K={k:<3} nearest {:?}  p_g {:?}  cost {:.2}", &knn.neighbors(&query)[..k.min(3)], r.p_g_final, r.cost);
    }
    Ok(())
}
