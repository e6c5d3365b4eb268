//! Predicts the generation for one load, rebuilds the angles of every
//! contingency and projects when a limit is violated.

use scopf_learn::dataset::{generate, GenerateOptions, SamplerConfig};
use scopf_learn::grid_model::{load_case, Network};
use scopf_learn::mlp::{train, TrainingConfig};
use scopf_learn::pipeline::{infer, InferOptions};

fn main() -> scopf_learn::Result<()> {
    let mut case = load_case("data/three_bus.json")?;
    // tight intact rating on 1-3 so that some predictions need projecting
    case.branches[1].rate_mw = 80.0;
    case.branches[1].rate_contingency_mw = Some(180.0);
    let net = Network::new(case)?;
    let ds = generate(
        &net,
        &SamplerConfig {
            n_samples: 1000,
            seed: 3,
            ..SamplerConfig::default()
        },
        &GenerateOptions::default(),
    )?;
    let cfg = TrainingConfig {
        epochs: 40,
        ..TrainingConfig::default()
    };
    let model = train(&net, &ds, &[16, 8], &cfg)?.model;

    for scale in [0.9, 1.0, 1.1] {
        let p_d: Vec<f64> = net.case.default_loads_mw().iter().map(|d| d * scale).collect();
        let r = infer(&model, &net, &p_d, &InferOptions::default())?;
        println!(
            "load x{scale}: predicted {:?}, feasible {}, projected {} (l1 {:.3} MW), final {:?}, cost {:.2}",
            r.p_g_pred, r.feasible_before_projection, r.projected, r.projection_distance, r.p_g_final, r.cost
        );
        for v in &r.violations.violations {
            println!("  violation {:?} case {:?} element {} by {:.2e}", v.kind, v.contingency, v.element, v.magnitude);
        }
    }
    Ok(())
}
