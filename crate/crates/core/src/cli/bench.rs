//! Test-set benchmark: every predictor runs the full inference path and is
//! compared against the optimization oracle on the same loads.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::grid_model::Network;
use crate::mlp::{InferenceScratch, MlpModel};
use crate::pipeline::{infer_with, knn_predict, DispatchResult, InferOptions, KnnModel};
use crate::scopf::{self, ScopfProblem};
use crate::solver::{solve_qp, SolverOptions};
use crate::{Error, Result};

/// Something that maps a load vector to a dispatch.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Network(&'a MlpModel),
    Knn(&'a KnnModel),
}

impl Predictor<'_> {
    pub fn name(&self) -> String {
        match self {
            Predictor::Network(m) => format!("mlp {}", crate::mlp::format_architecture(&hidden_widths(m))),
            Predictor::Knn(k) => format!("knn {}", k.k),
        }
    }
}

fn hidden_widths(m: &MlpModel) -> Vec<usize> {
    let sizes = m.params.layer_sizes();
    sizes[1..sizes.len() - 1].to_vec()
}

/// One test load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    /// Position of the sample in the dataset file.
    pub index: usize,
    pub feasible_before_projection: bool,
    pub projected: bool,
    /// $/hr of the final dispatch.
    pub cost_model: f64,
    pub cost_oracle: f64,
    /// `100 (cost_model - cost_oracle) / cost_oracle`.
    pub optimality_loss_pct: f64,
    /// Seconds for prediction, reconstruction, check and projection.
    pub t_model: f64,
    /// Seconds for the oracle solve.
    pub t_oracle: f64,
    /// `t_oracle / t_model`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_instances: usize,
    /// Share of instances feasible before any projection, percent.
    pub feasibility_pct: f64,
    pub n_projected: usize,
    pub mean_loss_pct: f64,
    pub max_loss_pct: f64,
    /// Mean of per-instance ratios. Not the ratio of mean times.
    pub mean_speedup: f64,
    pub mean_t_model: f64,
    pub mean_t_oracle: f64,
}

impl Aggregates {
    pub fn from_records(records: &[InstanceRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Aggregates::default();
        }
        let mean = |f: &dyn Fn(&InstanceRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        let feasible = records.iter().filter(|r| r.feasible_before_projection).count();
        Aggregates {
            n_instances: n,
            feasibility_pct: 100.0 * feasible as f64 / n as f64,
            n_projected: records.iter().filter(|r| r.projected).count(),
            mean_loss_pct: mean(&|r| r.optimality_loss_pct),
            max_loss_pct: records
                .iter()
                .map(|r| r.optimality_loss_pct)
                .fold(f64::NEG_INFINITY, f64::max),
            mean_speedup: mean(&|r| r.ratio),
            mean_t_model: mean(&|r| r.t_model),
            mean_t_oracle: mean(&|r| r.t_oracle),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub predictor: String,
    pub records: Vec<InstanceRecord>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub case_hash: String,
    pub projection: bool,
    /// Dataset indices whose oracle solve failed; they are left out.
    pub oracle_failures: Vec<usize>,
    pub reports: Vec<PredictorReport>,
}

pub const CSV_HEADER: &str = "predictor,index,feasible_before_projection,projected,cost_model,cost_oracle,optimality_loss_pct,t_model,t_oracle,ratio";
pub const CSV_HEADER_UNTIMED: &str =
    "predictor,index,feasible_before_projection,projected,cost_model,cost_oracle,optimality_loss_pct";

impl BenchReport {
    /// Per-instance rows for every predictor. With `timing == false` the
    /// wall-clock columns are left out, so the output is reproducible.
    pub fn write_csv(&self, mut out: impl Write, timing: bool) -> std::io::Result<()> {
        writeln!(out, "{}", if timing { CSV_HEADER } else { CSV_HEADER_UNTIMED })?;
        for rep in &self.reports {
            for r in &rep.records {
                write!(
                    out,
                    "{},{},{},{},{:e},{:e},{:e}",
                    rep.predictor,
                    r.index,
                    r.feasible_before_projection,
                    r.projected,
                    r.cost_model,
                    r.cost_oracle,
                    r.optimality_loss_pct
                )?;
                if timing {
                    write!(out, ",{:e},{:e},{:e}", r.t_model, r.t_oracle, r.ratio)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<16} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}\n",
            "predictor", "n", "feas(%)", "loss(%)", "max(%)", "speedup", "t_model(s)", "t_oracle(s)"
        );
        for r in &self.reports {
            let a = &r.aggregates;
            s.push_str(&format!(
                "{:<16} {:>6} {:>10.2} {:>10.4} {:>10.4} {:>10.1} {:>12.3e} {:>12.3e}\n",
                r.predictor,
                a.n_instances,
                a.feasibility_pct,
                a.mean_loss_pct,
                a.max_loss_pct,
                a.mean_speedup,
                a.mean_t_model,
                a.mean_t_oracle
            ));
        }
        s
    }
}

/// Which samples of the dataset are benchmarked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
    All,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub split: EvalSplit,
    pub infer: InferOptions,
    pub oracle: SolverOptions,
    /// Run instances on the rayon pool. Each instance is timed on the
    /// worker that runs it.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            split: EvalSplit::Test,
            infer: InferOptions::default(),
            oracle: SolverOptions::default(),
            parallel: true,
        }
    }
}

struct OracleResult {
    cost: f64,
    seconds: f64,
}

fn oracle(template: &ScopfProblem, p_d: &[f64], opts: &SolverOptions) -> Result<OracleResult> {
    let mut problem = template.clone();
    problem.set_loads(p_d)?;
    let start = Instant::now();
    let sol = solve_qp(&problem.qp, opts)?;
    let seconds = start.elapsed().as_secs_f64();
    if !sol.is_optimal() {
        return Err(Error::Solver(format!("oracle status {:?}", sol.status)));
    }
    Ok(OracleResult {
        cost: problem.decode_solution(&sol).objective,
        seconds,
    })
}

fn run_predictor(
    predictor: Predictor<'_>,
    network: &Network,
    p_d: &[f64],
    opts: &InferOptions,
    scratch: &mut Option<InferenceScratch>,
) -> Result<DispatchResult> {
    match predictor {
        Predictor::Network(m) => {
            let s = scratch.get_or_insert_with(|| InferenceScratch::new(m));
            infer_with(m, network, p_d, opts, s)
        }
        Predictor::Knn(k) => knn_predict(k, network, p_d, opts),
    }
}

fn check_hash(network: &Network, expected: &str) -> Result<()> {
    let found = network.case.content_hash();
    if found != expected {
        return Err(Error::CaseMismatch {
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

/// Runs each predictor and the oracle on the chosen split of `dataset`.
pub fn run_bench(
    network: &Network,
    dataset: &Dataset,
    predictors: &[Predictor<'_>],
    opts: &BenchOptions,
) -> Result<BenchReport> {
    check_hash(network, &dataset.header.case_hash)?;
    for p in predictors {
        if let Predictor::Network(m) = p {
            check_hash(network, &m.case_hash)?;
        }
    }
    let template = scopf::assemble_with(
        network,
        &network.case.default_loads_mw(),
        dataset.header.slack_angle,
    )?;
    let indices: Vec<usize> = match opts.split {
        EvalSplit::Test => dataset.header.split.test.clone(),
        EvalSplit::Train => dataset.header.split.train.clone(),
        EvalSplit::All => (0..dataset.samples.len()).collect(),
    };

    let one = |i: usize| -> Result<(usize, Option<Vec<InstanceRecord>>)> {
        let p_d = &dataset.samples[i].p_d;
        let orc = match oracle(&template, p_d, &opts.oracle) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("oracle failed on sample {i}: {e}");
                return Ok((i, None));
            }
        };
        let mut out = Vec::with_capacity(predictors.len());
        for &p in predictors {
            let mut scratch = None;
            let r = run_predictor(p, network, p_d, &opts.infer, &mut scratch)?;
            let t_model = r.timings.total().max(1e-9);
            out.push(InstanceRecord {
                index: i,
                feasible_before_projection: r.feasible_before_projection,
                projected: r.projected,
                cost_model: r.cost,
                cost_oracle: orc.cost,
                optimality_loss_pct: 100.0 * (r.cost - orc.cost) / orc.cost.abs(),
                t_model,
                t_oracle: orc.seconds,
                ratio: orc.seconds / t_model,
            });
        }
        Ok((i, Some(out)))
    };

    let rows: Vec<(usize, Option<Vec<InstanceRecord>>)> = if opts.parallel {
        indices.par_iter().map(|&i| one(i)).collect::<Result<_>>()?
    } else {
        indices.iter().map(|&i| one(i)).collect::<Result<_>>()?
    };

    let mut per: Vec<Vec<InstanceRecord>> = vec![Vec::new(); predictors.len()];
    let mut oracle_failures = Vec::new();
    for (i, row) in rows {
        match row {
            Some(recs) => {
                for (k, r) in recs.into_iter().enumerate() {
                    per[k].push(r);
                }
            }
            None => oracle_failures.push(i),
        }
    }
    let reports = predictors
        .iter()
        .zip(per)
        .map(|(p, records)| PredictorReport {
            predictor: p.name(),
            aggregates: Aggregates::from_records(&records),
            records,
        })
        .collect();
    Ok(BenchReport {
        case_hash: network.case.content_hash(),
        projection: opts.infer.project,
        oracle_failures,
        reports,
    })
}
