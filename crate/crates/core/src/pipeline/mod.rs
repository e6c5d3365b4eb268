//! Inference: predict generations, rebuild the angles of every contingency
//! from the DC power-flow equations, check limits and, when a limit is
//! violated, project onto the feasible set in the l1 norm.

mod knn;
mod projection;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grid_model::Network;
use crate::mlp::{InferenceScratch, MlpModel};
use crate::scopf::{check_feasibility, Dispatch, FeasibilityReport, DEFAULT_FEASIBILITY_TOL};
use crate::solver::SolverOptions;
use crate::{Error, Result};

pub use knn::{KnnMetric, KnnModel};
pub use projection::{project_l1, Projection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferOptions {
    pub feasibility_tol: f64,
    /// Project infeasible predictions. When off, `p_g_final` is the raw
    /// prediction even if it violates limits.
    pub project: bool,
    pub solver: SolverOptions,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
            project: true,
            solver: SolverOptions::default(),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub predict: f64,
    pub reconstruct_check: f64,
    /// Only set when the projection ran.
    pub projection: Option<f64>,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.predict + self.reconstruct_check + self.projection.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Predicted MW per generator, slack by balance.
    pub p_g_pred: Vec<f64>,
    /// Angles of the final dispatch, `theta[c][bus]`.
    pub theta: Vec<Vec<f64>>,
    pub feasible_before_projection: bool,
    /// Violations of the prediction.
    pub violations: FeasibilityReport,
    pub projected: bool,
    /// l1 distance (MW) between prediction and final dispatch.
    pub projection_distance: f64,
    pub p_g_final: Vec<f64>,
    /// $/hr of `p_g_final`.
    pub cost: f64,
    pub timings: Timings,
}

fn check_load(network: &Network, p_d: &[f64]) -> Result<()> {
    let n = network.case.n_buses();
    if p_d.len() != n {
        return Err(Error::InvalidInput(format!(
            "load vector has {} entries, case has {n} buses",
            p_d.len()
        )));
    }
    if let Some(i) = p_d.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "load at bus {i} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Runs the network on one load vector.
pub fn infer(model: &MlpModel, network: &Network, p_d: &[f64], opts: &InferOptions) -> Result<DispatchResult> {
    let mut scratch = InferenceScratch::new(model);
    infer_with(model, network, p_d, opts, &mut scratch)
}

/// [`infer`] with caller-owned buffers, for repeated calls.
pub fn infer_with(
    model: &MlpModel,
    network: &Network,
    p_d: &[f64],
    opts: &InferOptions,
    scratch: &mut InferenceScratch,
) -> Result<DispatchResult> {
    check_load(network, p_d)?;
    if model.n_buses != network.case.n_buses() || model.n_generators != network.case.n_generators() {
        return Err(Error::CaseMismatch {
            expected: model.case_hash.clone(),
            found: network.case.content_hash(),
        });
    }
    let start = Instant::now();
    let mut p_g = vec![0.0; model.n_generators];
    model.predict_generation_into(p_d, scratch, &mut p_g);
    let predict = start.elapsed().as_secs_f64();
    finish(network, p_d, p_g, predict, model.slack_angle, opts)
}

/// Reconstruction, feasibility check and optional projection shared by
/// every predictor.
pub(crate) fn finish(
    network: &Network,
    p_d: &[f64],
    p_g_pred: Vec<f64>,
    predict: f64,
    slack_angle: f64,
    opts: &InferOptions,
) -> Result<DispatchResult> {
    let start = Instant::now();
    let theta = network.reconstruct_angles(&p_g_pred, p_d, slack_angle);
    let pred = Dispatch {
        p_g: p_g_pred,
        theta,
        objective: 0.0,
    };
    let violations = check_feasibility(network, p_d, &pred, opts.feasibility_tol);
    let reconstruct_check = start.elapsed().as_secs_f64();
    let feasible = violations.is_feasible();

    let mut timings = Timings {
        predict,
        reconstruct_check,
        projection: None,
    };
    let Dispatch { p_g: p_g_pred, theta, .. } = pred;
    let (p_g_final, theta, distance) = if feasible || !opts.project {
        (p_g_pred.clone(), theta, 0.0)
    } else {
        let start = Instant::now();
        let proj = project_l1(network, p_d, &p_g_pred, slack_angle, opts)?;
        timings.projection = Some(start.elapsed().as_secs_f64());
        (proj.p_g, proj.theta, proj.distance)
    };
    let cost = network.case.evaluate_cost(&p_g_final);
    Ok(DispatchResult {
        p_g_pred,
        theta,
        feasible_before_projection: feasible,
        violations,
        projected: timings.projection.is_some(),
        projection_distance: distance,
        p_g_final,
        cost,
        timings,
    })
}

/// Nearest-neighbor baseline through the same reconstruction path.
pub fn knn_predict(knn: &KnnModel, network: &Network, p_d: &[f64], opts: &InferOptions) -> Result<DispatchResult> {
    check_load(network, p_d)?;
    if knn.n_generators() != network.case.n_generators() {
        return Err(Error::InvalidInput(
            "nearest-neighbor model was built for a different case".into(),
        ));
    }
    let start = Instant::now();
    let p_g = knn.predict_generation(p_d);
    let predict = start.elapsed().as_secs_f64();
    finish(network, p_d, p_g, predict, knn.slack_angle, opts)
}
