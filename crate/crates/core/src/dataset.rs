//! Load sampling, oracle labeling, normalization and dataset files.
//!
//! A dataset file is JSON-lines: the first line is a [`DatasetHeader`]
//! (tagged `"record": "header"`), every following line one [`Sample`]
//! (tagged `"record": "sample"`). Floats are written in shortest
//! round-trip form, so reading a file back reproduces every value bit for
//! bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid_model::{GridCase, Network};
use crate::scopf::{self, ScopfProblem};
use crate::solver::{self, SolverOptions};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 8] = b"SCOPFDS1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Lower end of the load range as a fraction of the default load.
    pub range_low: f64,
    pub range_high: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            range_low: 0.9,
            range_high: 1.1,
            n_samples: 1000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_low.is_finite() && self.range_high.is_finite()) {
            return Err(Error::InvalidInput("load range must be finite".into()));
        }
        if self.range_low < 0.0 || self.range_low > self.range_high {
            return Err(Error::InvalidInput(format!(
                "load range [{}, {}] must satisfy 0 <= low <= high",
                self.range_low, self.range_high
            )));
        }
        Ok(())
    }
}

/// Draws `cfg.n_samples` load vectors. Draw `k` uses its own ChaCha stream,
/// so the result does not depend on how draws are scheduled.
pub fn sample_loads(case: &GridCase, cfg: &SamplerConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let base = case.default_loads_mw();
    Ok((0..cfg.n_samples)
        .map(|k| draw(&base, cfg, k as u64))
        .collect())
}

fn draw(base: &[f64], cfg: &SamplerConfig, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let width = cfg.range_high - cfg.range_low;
    base.iter()
        .map(|&d| {
            let u: f64 = rng.gen();
            if d == 0.0 {
                0.0
            } else {
                d * (cfg.range_low + width * u)
            }
        })
        .collect()
}

/// Scaling factor of a generation level within `[p_min, p_max]`.
/// A fixed-output generator (`p_min == p_max`) maps to 0.
pub fn alpha_from_generation(p: f64, p_min: f64, p_max: f64) -> f64 {
    let range = p_max - p_min;
    if range <= 0.0 {
        0.0
    } else {
        ((p - p_min) / range).clamp(0.0, 1.0)
    }
}

pub fn generation_from_alpha(alpha: f64, p_min: f64, p_max: f64) -> f64 {
    alpha * (p_max - p_min) + p_min
}

/// Output of the slack generator that balances total load.
pub fn slack_by_balance(case: &GridCase, p_d: &[f64], p_g: &[f64]) -> f64 {
    slack_by_balance_parts(case.slack_generator(), p_d, p_g)
}

/// Total load minus the output of every generator except `slack`.
pub fn slack_by_balance_parts(slack: usize, p_d: &[f64], p_g: &[f64]) -> f64 {
    let others: f64 = p_g
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != slack)
        .map(|(_, p)| p)
        .sum();
    p_d.iter().sum::<f64>() - others
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Index of the load draw this sample came from.
    pub draw: usize,
    /// MW per bus.
    pub p_d: Vec<f64>,
    /// One scaling factor per predicted (non-slack) generator.
    pub alpha: Vec<f64>,
    /// Optimal MW per generator, slack included.
    pub p_g_full: Vec<f64>,
    /// Optimal cost, $/hr.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub draw: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LabelOutcome {
    pub samples: Vec<Sample>,
    pub dropped: Vec<DroppedSample>,
}

/// Solves the oracle for every load vector. Loads without an optimal
/// solution are dropped (and logged) instead of aborting the batch.
pub fn label(
    network: &Network,
    loads: &[Vec<f64>],
    slack_angle: f64,
    opts: &SolverOptions,
) -> Result<LabelOutcome> {
    let case = &network.case;
    let template = scopf::assemble_with(network, &case.default_loads_mw(), slack_angle)?;
    let results: Vec<std::result::Result<Sample, DroppedSample>> = loads
        .par_iter()
        .enumerate()
        .map(|(k, p_d)| label_one(case, &template, k, p_d, opts))
        .collect();
    let mut out = LabelOutcome::default();
    for r in results {
        match r {
            Ok(s) => out.samples.push(s),
            Err(d) => {
                log::warn!("dropping load draw {}: {}", d.draw, d.reason);
                out.dropped.push(d);
            }
        }
    }
    Ok(out)
}

fn label_one(
    case: &GridCase,
    template: &ScopfProblem,
    draw: usize,
    p_d: &[f64],
    opts: &SolverOptions,
) -> std::result::Result<Sample, DroppedSample> {
    let drop = |reason: String| DroppedSample { draw, reason };
    let mut problem = template.clone();
    problem.set_loads(p_d).map_err(|e| drop(e.to_string()))?;
    let sol = solver::solve_qp(&problem.qp, opts).map_err(|e| drop(e.to_string()))?;
    if !sol.is_optimal() {
        return Err(drop(format!("oracle status {:?}", sol.status)));
    }
    let dispatch = problem.decode_solution(&sol);
    let slack = case.slack_generator();
    // Interior-point iterates sit within the solver tolerance of the bounds;
    // snap first so that alpha reproduces the stored generation exactly.
    let mut p_g_full = dispatch.p_g;
    let mut alpha = Vec::with_capacity(case.n_generators().saturating_sub(1));
    for (g, gen) in case.generators.iter().enumerate() {
        if g == slack {
            continue;
        }
        let a = alpha_from_generation(p_g_full[g], gen.p_min_mw, gen.p_max_mw);
        p_g_full[g] = generation_from_alpha(a, gen.p_min_mw, gen.p_max_mw);
        alpha.push(a);
    }
    Ok(Sample {
        draw,
        p_d: p_d.to_vec(),
        alpha,
        p_g_full,
        objective: dispatch.objective,
    })
}

/// Per-coordinate mean and (population) standard deviation of the network
/// inputs, which are the loads at `buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub buses: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits statistics over `loads`. Constant coordinates get std 1.
    pub fn fit<'a>(buses: &[usize], loads: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let k = buses.len();
        let mut n = 0usize;
        let mut sum = vec![0.0; k];
        let rows: Vec<&[f64]> = loads.into_iter().collect();
        for row in &rows {
            for (j, &b) in buses.iter().enumerate() {
                sum[j] += row[b];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidInput(
                "cannot normalize: training split is empty".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; k];
        for row in &rows {
            for (j, &b) in buses.iter().enumerate() {
                let d = row[b] - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(NormStats {
            buses: buses.to_vec(),
            mean,
            std,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.buses.len()
    }

    /// Network input for a full per-bus load vector.
    pub fn normalize(&self, p_d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.buses.len()];
        self.normalize_into(p_d, &mut out);
        out
    }

    pub fn normalize_into(&self, p_d: &[f64], out: &mut [f64]) {
        for (j, &b) in self.buses.iter().enumerate() {
            out[j] = (p_d[b] - self.mean[j]) / self.std[j];
        }
    }

    /// Loads at `buses` for a normalized input vector.
    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// First samples go to training, the last `n / (train_per_test + 1)`
    /// to testing. Draws are i.i.d., so a contiguous split is unbiased.
    pub fn contiguous(n: usize, train_per_test: usize) -> Self {
        let n_test = if train_per_test == 0 { n } else { n / (train_per_test + 1) };
        let n_train = n - n_test;
        Split {
            train: (0..n_train).collect(),
            test: (n_train..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub case_hash: String,
    pub sampler: SamplerConfig,
    pub n_buses: usize,
    pub n_generators: usize,
    pub slack_generator: usize,
    pub slack_angle: f64,
    pub stats: Option<NormStats>,
    pub split: Split,
    pub dropped: Vec<DroppedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(DatasetHeader),
    Sample(Sample),
}

/// Options for [`generate`] besides the sampler itself.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub train_per_test: usize,
    pub slack_angle: f64,
    pub solver: SolverOptions,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            train_per_test: 10,
            slack_angle: 0.0,
            solver: SolverOptions::default(),
        }
    }
}

/// Samples, labels, splits and normalizes a dataset.
pub fn generate(network: &Network, cfg: &SamplerConfig, opts: &GenerateOptions) -> Result<Dataset> {
    let case = &network.case;
    let loads = sample_loads(case, cfg)?;
    let outcome = label(network, &loads, opts.slack_angle, &opts.solver)?;
    let split = Split::contiguous(outcome.samples.len(), opts.train_per_test);
    let mut ds = Dataset {
        header: DatasetHeader {
            version: FORMAT_VERSION,
            case_hash: case.content_hash(),
            sampler: *cfg,
            n_buses: case.n_buses(),
            n_generators: case.n_generators(),
            slack_generator: case.slack_generator(),
            slack_angle: opts.slack_angle,
            stats: None,
            split,
            dropped: outcome.dropped,
        },
        samples: outcome.samples,
    };
    if !ds.header.split.train.is_empty() {
        ds.normalize(&case.load_buses())?;
    }
    Ok(ds)
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.header.split.train.iter().map(move |&i| &self.samples[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> {
        self.header.split.test.iter().map(move |&i| &self.samples[i])
    }

    /// Fits normalization statistics for the loads at `buses` on the
    /// training split and stores them in the header.
    pub fn normalize(&mut self, buses: &[usize]) -> Result<&NormStats> {
        let stats = NormStats::fit(buses, self.train().map(|s| s.p_d.as_slice()))?;
        Ok(self.header.stats.insert(stats))
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.header
            .stats
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("dataset is not normalized".into()))
    }

    pub fn write_jsonl(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        let io = |e| Error::io("<dataset>", e);
        serde_json::to_writer(&mut w, &Record::Header(self.header.clone()))?;
        w.write_all(b"\n").map_err(io)?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, &RecordRef::Sample(s))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(input: impl Read) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut header = None;
        let mut samples = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Syntax {
                line: n + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            match (rec, header.is_some()) {
                (Record::Header(h), false) => header = Some(h),
                (Record::Sample(s), true) => samples.push(s),
                (Record::Header(_), true) => {
                    return Err(Error::InvalidInput(format!(
                        "line {}: second header record",
                        n + 1
                    )))
                }
                (Record::Sample(_), false) => {
                    return Err(Error::InvalidInput(
                        "dataset must start with a header record".into(),
                    ))
                }
            }
        }
        let header =
            header.ok_or_else(|| Error::InvalidInput("dataset has no header record".into()))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported dataset version {}",
                header.version
            )));
        }
        let ds = Dataset { header, samples };
        ds.check_split()?;
        Ok(ds)
    }

    fn check_split(&self) -> Result<()> {
        let n = self.samples.len();
        let split = &self.header.split;
        if split.train.iter().chain(&split.test).any(|&i| i >= n) {
            return Err(Error::InvalidInput(
                "split references a sample that does not exist".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(f)
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RecordRef<'a> {
    Sample(&'a Sample),
}

/// Writes samples as a little-endian f64 matrix: magic, four u64 counts
/// (rows, buses, alphas, generators), then per row the draw index (u64),
/// `p_d`, `alpha`, `p_g_full` and `objective`.
pub fn write_blob(samples: &[Sample], out: impl Write) -> Result<()> {
    let io = |e| Error::io("<blob>", e);
    let mut w = BufWriter::new(out);
    let (n_bus, n_alpha, n_gen) = samples
        .first()
        .map(|s| (s.p_d.len(), s.alpha.len(), s.p_g_full.len()))
        .unwrap_or((0, 0, 0));
    w.write_all(BLOB_MAGIC).map_err(io)?;
    for v in [samples.len(), n_bus, n_alpha, n_gen] {
        w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
    }
    for s in samples {
        if (s.p_d.len(), s.alpha.len(), s.p_g_full.len()) != (n_bus, n_alpha, n_gen) {
            return Err(Error::InvalidInput("samples have ragged dimensions".into()));
        }
        w.write_all(&(s.draw as u64).to_le_bytes()).map_err(io)?;
        for v in s.p_d.iter().chain(&s.alpha).chain(&s.p_g_full) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&s.objective.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_blob(mut input: impl Read) -> Result<Vec<Sample>> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::io("<blob>", e))?;
    if &magic != BLOB_MAGIC {
        return Err(Error::InvalidInput("not a dataset blob".into()));
    }
    let rows = read_word(&mut input)? as usize;
    let n_bus = read_word(&mut input)? as usize;
    let n_alpha = read_word(&mut input)? as usize;
    let n_gen = read_word(&mut input)? as usize;
    let floats = |len: usize, input: &mut dyn Read| -> Result<Vec<f64>> {
        (0..len)
            .map(|_| read_word(input).map(f64::from_bits))
            .collect()
    };
    let mut samples = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let draw = read_word(&mut input)? as usize;
        let p_d = floats(n_bus, &mut input)?;
        let alpha = floats(n_alpha, &mut input)?;
        let p_g_full = floats(n_gen, &mut input)?;
        let objective = floats(1, &mut input)?[0];
        samples.push(Sample {
            draw,
            p_d,
            alpha,
            p_g_full,
            objective,
        });
    }
    Ok(samples)
}

fn read_word(input: &mut dyn Read) -> Result<u64> {
    let mut word = [0u8; 8];
    input
        .read_exact(&mut word)
        .map_err(|e| Error::io("<blob>", e))?;
    Ok(u64::from_le_bytes(word))
}
