use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpParameters, TrainingConfig, Workspace};
use crate::dataset::{generation_from_alpha, NormStats};
use crate::grid_model::GridCase;
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// A trained network bundled with everything inference needs: input
/// normalization, generator limits for de-scaling and the slack generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub version: u32,
    /// Content hash of the case the network was trained on.
    pub case_hash: String,
    pub n_buses: usize,
    pub n_generators: usize,
    pub slack_generator: usize,
    /// Generator index of each network output.
    pub predicted_generators: Vec<usize>,
    pub p_min_mw: Vec<f64>,
    pub p_max_mw: Vec<f64>,
    pub slack_angle: f64,
    pub stats: NormStats,
    pub params: MlpParameters,
    pub training: Option<TrainingConfig>,
}

impl MlpModel {
    pub fn new(
        case: &GridCase,
        stats: NormStats,
        params: MlpParameters,
        slack_angle: f64,
        training: Option<TrainingConfig>,
    ) -> Result<Self> {
        let predicted = case.predicted_generators();
        let model = MlpModel {
            version: MODEL_VERSION,
            case_hash: case.content_hash(),
            n_buses: case.n_buses(),
            n_generators: case.n_generators(),
            slack_generator: case.slack_generator(),
            p_min_mw: predicted.iter().map(|&g| case.generators[g].p_min_mw).collect(),
            p_max_mw: predicted.iter().map(|&g| case.generators[g].p_max_mw).collect(),
            predicted_generators: predicted,
            slack_angle,
            stats,
            params,
            training,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("model: {m}")));
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let layers = &self.params.layers;
        if layers.is_empty() {
            return bad("no layers".into());
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!("layer {i} arrays do not match its shape"));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return bad(format!("layer {i} input width breaks the chain"));
            }
        }
        if !self.params.is_finite() {
            return bad("non-finite parameter".into());
        }
        let k = self.predicted_generators.len();
        if self.params.n_outputs() != k || self.p_min_mw.len() != k || self.p_max_mw.len() != k {
            return bad("output width does not match the predicted generators".into());
        }
        let s = &self.stats;
        if self.params.n_inputs() != s.n_inputs() || s.mean.len() != s.n_inputs() || s.std.len() != s.n_inputs() {
            return bad("input width does not match the normalization statistics".into());
        }
        if s.buses.iter().any(|&b| b >= self.n_buses) || self.slack_generator >= self.n_generators {
            return bad("bus or generator index out of range".into());
        }
        Ok(())
    }

    /// Fails with [`Error::CaseMismatch`] unless `case` is the training case.
    pub fn check_case(&self, case: &GridCase) -> Result<()> {
        let found = case.content_hash();
        if found != self.case_hash {
            return Err(Error::CaseMismatch {
                expected: self.case_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Scaling factors for a per-bus load vector (MW).
    pub fn predict_alpha(&self, p_d: &[f64]) -> Vec<f64> {
        let mut input = vec![0.0; self.stats.n_inputs()];
        self.stats.normalize_into(p_d, &mut input);
        self.params.forward(&input)
    }

    /// Full generation vector (MW): de-scaled predictions plus the slack
    /// generator by balance, written into `out`.
    pub fn predict_generation_into(&self, p_d: &[f64], ws: &mut InferenceScratch, out: &mut [f64]) {
        self.stats.normalize_into(p_d, &mut ws.input);
        let alpha = self.params.forward_with(&ws.input, &mut ws.ws);
        self.descale_into(alpha, p_d, out);
    }

    pub fn predict_generation(&self, p_d: &[f64]) -> Vec<f64> {
        let mut ws = InferenceScratch::new(self);
        let mut out = vec![0.0; self.n_generators];
        self.predict_generation_into(p_d, &mut ws, &mut out);
        out
    }

    /// Converts scaling factors to MW and fills in the slack generator.
    pub fn descale_into(&self, alpha: &[f64], p_d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut others = 0.0;
        for (k, &g) in self.predicted_generators.iter().enumerate() {
            let p = generation_from_alpha(alpha[k], self.p_min_mw[k], self.p_max_mw[k]);
            out[g] = p;
            others += p;
        }
        out[self.slack_generator] = p_d.iter().sum::<f64>() - others;
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MlpModel = serde_json::from_str(text).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        model.check_consistency()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Reusable buffers for repeated predictions.
#[derive(Debug, Clone)]
pub struct InferenceScratch {
    input: Vec<f64>,
    ws: Workspace,
}

impl InferenceScratch {
    pub fn new(model: &MlpModel) -> Self {
        InferenceScratch {
            input: vec![0.0; model.stats.n_inputs()],
            ws: Workspace::new(&model.params),
        }
    }
}
