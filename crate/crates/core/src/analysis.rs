//! Sizing arithmetic for ReLU networks approximating a load to generation
//! mapping.
//!
//! A ReLU network of depth `N_hid` and width at most `M` is piecewise
//! linear with at most `(2M)^N_hid` segments. For a mapping with Lipschitz
//! constant `L` on a domain of diameter `d`, some such mapping is always
//! approximated no better than `L d / (4 (2M)^N_hid)`. These are worst-case
//! planning figures: they say how small a network cannot be, not how well a
//! trained network will do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::grid_model::GridCase;
use crate::{Error, Result};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

fn at_least_one(name: &str, v: u64) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be at least 1")))
    }
}

/// `(2m)^n` as a float; exact while it fits in 53 bits, `inf` on overflow.
fn segments_f64(m: u64, n_hid: u32) -> f64 {
    (2.0 * m as f64).powi(n_hid as i32)
}

/// Lower bound on the worst-case approximation error,
/// `lipschitz * diameter / (4 (2m)^n_hid)`. Falls back to log space when
/// the segment count overflows.
pub fn worst_case_bound(lipschitz: f64, diameter: f64, m: u64, n_hid: u32) -> Result<f64> {
    positive("Lipschitz constant", lipschitz)?;
    positive("diameter", diameter)?;
    at_least_one("width", m)?;
    at_least_one("depth", n_hid as u64)?;
    let seg = segments_f64(m, n_hid);
    let direct = lipschitz * diameter / (4.0 * seg);
    if seg.is_finite() && direct.is_normal() {
        return Ok(direct);
    }
    let log = lipschitz.ln() + diameter.ln() - 4f64.ln() - log_max_segments(m, n_hid);
    Ok(log.exp())
}

/// Maximum number of linear pieces of a depth-`n_hid`, width-`m` ReLU
/// network on a line: `(2m)^n_hid`. Saturates at `f64::INFINITY`.
pub fn max_segments(m: u64, n_hid: u32) -> Result<f64> {
    at_least_one("width", m)?;
    at_least_one("depth", n_hid as u64)?;
    Ok(segments_f64(m, n_hid))
}

/// Natural log of [`max_segments`], finite for any depth.
pub fn log_max_segments(m: u64, n_hid: u32) -> f64 {
    n_hid as f64 * (2.0 * m as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    pub lipschitz: f64,
    pub diameter: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub n_hid: u32,
    pub m: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub query: CapacityQuery,
    /// `L d / (4 eps)`; a network needs `(2M)^N_hid` at least this large.
    pub threshold: f64,
    pub rows: Vec<CapacityRow>,
}

impl std::fmt::Display for CapacityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let q = &self.query;
        writeln!(
            f,
            "Lipschitz {}  diameter {}  epsilon {}  threshold (2M)^N_hid >= {}",
            q.lipschitz, q.diameter, q.epsilon, self.threshold
        )?;
        writeln!(f, "{:>6} {:>12}", "N_hid", "min M")?;
        for r in &self.rows {
            writeln!(f, "{:>6} {:>12}", r.n_hid, r.m)?;
        }
        Ok(())
    }
}

fn meets(m: u64, n_hid: u32, threshold: f64) -> bool {
    let s = segments_f64(m, n_hid);
    if s.is_finite() {
        s >= threshold
    } else {
        log_max_segments(m, n_hid) >= threshold.ln()
    }
}

/// Smallest width meeting `(2M)^n_hid >= threshold`.
fn min_width(threshold: f64, n_hid: u32) -> u64 {
    let guess = (threshold.powf(1.0 / n_hid as f64) / 2.0).ceil();
    let mut m = if guess.is_finite() && guess >= 1.0 {
        guess as u64
    } else {
        1
    };
    // The float guess can be off by one either way; settle it exactly.
    while !meets(m, n_hid, threshold) {
        m += 1;
    }
    while m > 1 && meets(m - 1, n_hid, threshold) {
        m -= 1;
    }
    m
}

/// Minimal width for each depth `1..=max_depth` such that the worst-case
/// bound stays within `epsilon`. The table stops at the first depth where
/// width 1 suffices, since every deeper network then qualifies too.
pub fn min_capacity(query: CapacityQuery, max_depth: u32) -> Result<CapacityReport> {
    positive("Lipschitz constant", query.lipschitz)?;
    positive("diameter", query.diameter)?;
    positive("epsilon", query.epsilon)?;
    at_least_one("maximum depth", max_depth as u64)?;
    let threshold = query.lipschitz * query.diameter / (4.0 * query.epsilon);
    let mut rows = Vec::new();
    for n_hid in 1..=max_depth {
        let m = min_width(threshold, n_hid);
        rows.push(CapacityRow { n_hid, m });
        if m == 1 {
            break;
        }
    }
    Ok(CapacityReport {
        query,
        threshold,
        rows,
    })
}

fn check_chain(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 3 || layer_sizes.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "layer chain {layer_sizes:?} needs an input, at least one hidden and an output width"
        )));
    }
    Ok(())
}

/// Arithmetic-operation count of one prediction as stated for this family
/// of networks: `K_in K_1 + sum_{i<N_hid} K_i K_{i+1} + K_out N_hid`.
///
/// The last term is the published expression, not the multiply-accumulate
/// count of the output layer (`K_{N_hid} K_out`); see [`mac_count`] for the
/// exact count.
pub fn op_count(layer_sizes: &[usize]) -> Result<u64> {
    check_chain(layer_sizes)?;
    let n_hid = layer_sizes.len() - 2;
    let hidden = &layer_sizes[1..=n_hid];
    let k_in = layer_sizes[0] as u64;
    let k_out = *layer_sizes.last().expect("non-empty") as u64;
    let between: u64 = hidden.windows(2).map(|w| (w[0] * w[1]) as u64).sum();
    Ok(k_in * hidden[0] as u64 + between + k_out * n_hid as u64)
}

/// Multiply-accumulates of one forward pass (activations excluded).
pub fn mac_count(layer_sizes: &[usize]) -> Result<u64> {
    check_chain(layer_sizes)?;
    Ok(layer_sizes.windows(2).map(|w| (w[0] * w[1]) as u64).sum())
}

/// Diagonal of the box of loads reachable when every load bus varies
/// within `[low, high]` times its default value.
pub fn load_domain_diameter(case: &GridCase, range_low: f64, range_high: f64) -> f64 {
    let width = range_high - range_low;
    case.buses
        .iter()
        .map(|b| (width * b.load_mw).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzOptions {
    /// Maximum number of pairs examined; all pairs are used when there are
    /// fewer.
    pub pair_budget: u64,
    pub seed: u64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        LipschitzOptions {
            pair_budget: 1_000_000,
            seed: 0,
        }
    }
}

const PAIR_CHUNK: u64 = 4096;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Largest observed `|y1 - y2| / |x1 - x2|` (Euclidean norms) over sampled
/// pairs; a lower estimate of the Lipschitz constant. Pairs with identical
/// inputs are skipped.
///
/// Sampled pair `k` comes from ChaCha stream `k / 4096`, so a larger budget
/// examines a superset of pairs and the estimate never decreases.
pub fn estimate_lipschitz(x: &[Vec<f64>], y: &[Vec<f64>], opts: &LipschitzOptions) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("inputs and outputs differ in length".into()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Err(Error::InvalidInput(
            "Lipschitz estimation needs at least two samples".into(),
        ));
    }
    let ratio = |i: usize, j: usize| {
        let dx = dist(&x[i], &x[j]);
        if dx > 0.0 {
            dist(&y[i], &y[j]) / dx
        } else {
            0.0
        }
    };
    let total = n * (n - 1) / 2;
    if total <= opts.pair_budget {
        return Ok((0..x.len())
            .into_par_iter()
            .map(|i| ((i + 1)..x.len()).map(|j| ratio(i, j)).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max));
    }
    let chunks = opts.pair_budget.div_ceil(PAIR_CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c);
            let len = PAIR_CHUNK.min(opts.pair_budget - c * PAIR_CHUNK);
            (0..len)
                .map(|_| {
                    let i = rng.gen_range(0..x.len());
                    let j = rng.gen_range(0..x.len());
                    ratio(i, j)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max))
}

/// [`estimate_lipschitz`] on a dataset's training split: loads (MW) at the
/// network input buses against the scaling factors.
pub fn estimate_lipschitz_dataset(ds: &Dataset, opts: &LipschitzOptions) -> Result<f64> {
    let buses = match &ds.header.stats {
        Some(s) => s.buses.clone(),
        None => (0..ds.header.n_buses).collect(),
    };
    let x: Vec<Vec<f64>> = ds
        .train()
        .map(|s| buses.iter().map(|&b| s.p_d[b]).collect())
        .collect();
    let y: Vec<Vec<f64>> = ds.train().map(|s| s.alpha.clone()).collect();
    estimate_lipschitz(&x, &y, opts)
}
