use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MlpModel, MlpParameters, PenaltyContext, Workspace};
use crate::dataset::Dataset;
use crate::grid_model::Network;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub w1: f64,
    pub w2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            w1: 1.0,
            w2: 1.0,
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

/// One training pair together with the raw load it came from (needed by
/// the flow penalty).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Normalized network input.
    pub input: Vec<f64>,
    /// Target scaling factors.
    pub target: Vec<f64>,
    /// Raw per-bus load, MW.
    pub p_d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub pg: f64,
    pub pen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_pg: f64,
    pub l_pen: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub log: Vec<EpochStats>,
}

struct Scratch {
    ws: Workspace,
    d_alpha: Vec<f64>,
    delta: Vec<Vec<f64>>,
    offset: Vec<f64>,
    flows: Vec<f64>,
}

impl Scratch {
    fn new(params: &MlpParameters, ctx: &PenaltyContext) -> Self {
        Scratch {
            ws: Workspace::new(params),
            d_alpha: vec![0.0; params.n_outputs()],
            delta: params.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            offset: vec![0.0; ctx.n_rows()],
            flows: vec![0.0; ctx.n_rows()],
        }
    }
}

/// Loss of one example; with `grads`, also adds `scale * dL/dparams`.
fn example_pass(
    params: &MlpParameters,
    ex: &TrainingExample,
    ctx: &PenaltyContext,
    cfg: &TrainingConfig,
    s: &mut Scratch,
    grads: Option<(&mut MlpParameters, f64)>,
) -> LossValue {
    let out = params.forward_with(&ex.input, &mut s.ws).to_vec();
    let k = out.len();
    let mut pg = 0.0;
    for j in 0..k {
        let e = out[j] - ex.target[j];
        pg += e * e;
        s.d_alpha[j] = cfg.w1 * 2.0 * e / k as f64;
    }
    pg /= k as f64;

    let rows = ctx.n_rows();
    let mut pen = 0.0;
    if rows > 0 {
        ctx.load_offset(&ex.p_d, &mut s.offset);
        ctx.flows(&out, &s.offset, &mut s.flows);
        pen = ctx.penalty(&s.flows);
        if grads.is_some() && cfg.w2 != 0.0 {
            for r in 0..rows {
                let f = s.flows[r];
                if f * f > 1.0 {
                    let coef = cfg.w2 * 2.0 * f / rows as f64;
                    for (d, g) in s.d_alpha.iter_mut().zip(ctx.alpha_gain_row(r)) {
                        *d += coef * g;
                    }
                }
            }
        }
    }
    let value = LossValue {
        total: cfg.w1 * pg + cfg.w2 * pen,
        pg,
        pen,
    };

    let Some((grads, scale)) = grads else {
        return value;
    };
    let last = params.layers.len() - 1;
    for j in 0..k {
        s.delta[last][j] = scale * s.d_alpha[j] * out[j] * (1.0 - out[j]);
    }
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 { &ex.input } else { &s.ws.act[l - 1] };
        let g = &mut grads.layers[l];
        for o in 0..layer.outputs {
            let d = s.delta[l][o];
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (w, x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
        }
        if l > 0 {
            let (prev, cur) = s.delta.split_at_mut(l);
            let prev = &mut prev[l - 1];
            let pre = &s.ws.pre[l - 1];
            for j in 0..layer.inputs {
                if pre[j] <= 0.0 {
                    prev[j] = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for o in 0..layer.outputs {
                    acc += layer.weights[o * layer.inputs + j] * cur[0][o];
                }
                prev[j] = acc;
            }
        }
    }
    value
}

fn mean_pass<'a>(
    params: &MlpParameters,
    batch: &[&'a TrainingExample],
    ctx: &PenaltyContext,
    cfg: &TrainingConfig,
    s: &mut Scratch,
    mut grads: Option<&mut MlpParameters>,
) -> LossValue {
    assert!(!batch.is_empty(), "empty batch");
    let scale = 1.0 / batch.len() as f64;
    let mut sum = LossValue::default();
    for ex in batch {
        let v = example_pass(
            params,
            ex,
            ctx,
            cfg,
            s,
            grads.as_deref_mut().map(|g| (g, scale)),
        );
        sum.total += v.total;
        sum.pg += v.pg;
        sum.pen += v.pen;
    }
    LossValue {
        total: sum.total * scale,
        pg: sum.pg * scale,
        pen: sum.pen * scale,
    }
}

/// Mean loss over a batch: `L_PG` is the mean squared scaling-factor error,
/// `L_pen` the mean over all monitored rows of `max(f^2 - 1, 0)`.
pub fn loss<'a>(
    params: &MlpParameters,
    batch: impl IntoIterator<Item = &'a TrainingExample>,
    ctx: &PenaltyContext,
    cfg: &TrainingConfig,
) -> LossValue {
    let batch: Vec<_> = batch.into_iter().collect();
    let mut s = Scratch::new(params, ctx);
    mean_pass(params, &batch, ctx, cfg, &mut s, None)
}

/// Loss and its exact gradient with respect to every weight and bias.
pub fn backward<'a>(
    params: &MlpParameters,
    batch: impl IntoIterator<Item = &'a TrainingExample>,
    ctx: &PenaltyContext,
    cfg: &TrainingConfig,
) -> (LossValue, MlpParameters) {
    let batch: Vec<_> = batch.into_iter().collect();
    let mut s = Scratch::new(params, ctx);
    let mut grads = MlpParameters::zeros(&params.layer_sizes()).expect("valid shapes");
    let v = mean_pass(params, &batch, ctx, cfg, &mut s, Some(&mut grads));
    (v, grads)
}

/// Trains a network with the given hidden widths on the training split of
/// `dataset` using SGD with momentum (`v = mu v + g; w -= lr v`).
pub fn train(
    network: &Network,
    dataset: &Dataset,
    hidden: &[usize],
    cfg: &TrainingConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let case = &network.case;
    let hash = case.content_hash();
    if dataset.header.case_hash != hash {
        return Err(Error::CaseMismatch {
            expected: dataset.header.case_hash.clone(),
            found: hash,
        });
    }
    let stats = dataset.stats()?.clone();
    let examples: Vec<TrainingExample> = dataset
        .train()
        .map(|s| TrainingExample {
            input: stats.normalize(&s.p_d),
            target: s.alpha.clone(),
            p_d: s.p_d.clone(),
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let k_out = case.predicted_generators().len();
    if k_out == 0 {
        return Err(Error::InvalidInput(
            "case has no generator besides the slack; nothing to predict".into(),
        ));
    }
    let mut sizes = vec![stats.n_inputs()];
    sizes.extend_from_slice(hidden);
    sizes.push(k_out);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParameters::xavier(&sizes, &mut rng)?;
    let ctx = PenaltyContext::new(network);
    let mut velocity = MlpParameters::zeros(&sizes)?;
    let mut grads = MlpParameters::zeros(&sizes)?;
    let mut scratch = Scratch::new(&params, &ctx);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossValue::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            let v = mean_pass(&params, &batch, &ctx, cfg, &mut scratch, Some(&mut grads));
            if !v.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss became {}", v.total),
                });
            }
            let n = batch.len() as f64;
            sum.total += v.total * n;
            sum.pg += v.pg * n;
            sum.pen += v.pen * n;
            for ((w, vel), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter()) {
                *vel = cfg.momentum * *vel + g;
                *w -= cfg.learning_rate * *vel;
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
        let n = examples.len() as f64;
        let stats = EpochStats {
            epoch,
            l_pg: sum.pg / n,
            l_pen: sum.pen / n,
            l_total: sum.total / n,
        };
        log::debug!(
            "epoch {epoch}: L_PG {:.3e} L_pen {:.3e}",
            stats.l_pg,
            stats.l_pen
        );
        log.push(stats);
    }

    let model = MlpModel::new(case, stats, params, dataset.header.slack_angle, Some(cfg.clone()))?;
    Ok(TrainedModel { model, log })
}

/// CSV with header `epoch,l_pg,l_pen,l_total`.
pub fn write_training_log(log: &[EpochStats], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,l_pg,l_pen,l_total")?;
    for e in log {
        writeln!(out, "{},{:e},{:e},{:e}", e.epoch, e.l_pg, e.l_pen, e.l_total)?;
    }
    Ok(())
}
