use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dataset::{slack_by_balance_parts, Dataset, NormStats};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnMetric {
    /// Euclidean distance between raw per-bus loads (MW).
    #[default]
    Raw,
    /// Euclidean distance between normalized network inputs.
    Normalized,
}

/// Averages the non-slack generation of the `k` training loads closest to
/// the query. Equal distances are broken by the lower sample index.
#[derive(Debug, Clone)]
pub struct KnnModel {
    pub k: usize,
    pub metric: KnnMetric,
    features: Vec<Vec<f64>>,
    /// MW of each predicted generator, per training sample.
    labels: Vec<Vec<f64>>,
    stats: Option<NormStats>,
    predicted_generators: Vec<usize>,
    slack_generator: usize,
    n_generators: usize,
    pub(crate) slack_angle: f64,
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KnnModel {
    /// Stores the training split of `dataset`.
    pub fn fit(dataset: &Dataset, k: usize, metric: KnnMetric) -> Result<Self> {
        let train: Vec<_> = dataset.train().collect();
        if k == 0 || k > train.len() {
            return Err(Error::InvalidInput(format!(
                "K = {k} must be between 1 and the training size {}",
                train.len()
            )));
        }
        let slack = dataset.header.slack_generator;
        let n_generators = dataset.header.n_generators;
        let predicted: Vec<usize> = (0..n_generators).filter(|&g| g != slack).collect();
        let stats = match metric {
            KnnMetric::Raw => None,
            KnnMetric::Normalized => Some(dataset.stats()?.clone()),
        };
        let features = train
            .iter()
            .map(|s| match &stats {
                Some(st) => st.normalize(&s.p_d),
                None => s.p_d.clone(),
            })
            .collect();
        let labels = train
            .iter()
            .map(|s| predicted.iter().map(|&g| s.p_g_full[g]).collect())
            .collect();
        Ok(KnnModel {
            k,
            metric,
            features,
            labels,
            stats,
            predicted_generators: predicted,
            slack_generator: slack,
            n_generators,
            slack_angle: dataset.header.slack_angle,
        })
    }

    pub fn n_generators(&self) -> usize {
        self.n_generators
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn feature(&self, p_d: &[f64]) -> Vec<f64> {
        match &self.stats {
            Some(st) => st.normalize(p_d),
            None => p_d.to_vec(),
        }
    }

    /// Training indices of the `k` nearest samples, nearest first.
    pub fn neighbors(&self, p_d: &[f64]) -> Vec<usize> {
        let q = self.feature(p_d);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(self.k + 1);
        for (index, f) in self.features.iter().enumerate() {
            let dist: f64 = f.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            let cand = Candidate { dist, index };
            if heap.len() < self.k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(cand);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| c.index).collect()
    }

    /// Mean neighbor generation for the predicted generators, slack by
    /// balance.
    pub fn predict_generation(&self, p_d: &[f64]) -> Vec<f64> {
        let nb = self.neighbors(p_d);
        let mut mean = vec![0.0; self.predicted_generators.len()];
        for &i in &nb {
            for (m, v) in mean.iter_mut().zip(&self.labels[i]) {
                *m += v;
            }
        }
        let mut p_g = vec![0.0; self.n_generators];
        for (j, &g) in self.predicted_generators.iter().enumerate() {
            p_g[g] = mean[j] / nb.len() as f64;
        }
        p_g[self.slack_generator] = slack_by_balance_parts(self.slack_generator, p_d, &p_g);
        p_g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenerateOptions, SamplerConfig};
    use crate::grid_model::fixtures::triangle;
    use crate::grid_model::Network;

    fn dataset(n: usize) -> Dataset {
        let net = Network::new(triangle()).unwrap();
        generate(
            &net,
            &SamplerConfig {
                n_samples: n,
                seed: 3,
                ..SamplerConfig::default()
            },
            &GenerateOptions {
                train_per_test: 1000,
                ..GenerateOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn k1_on_a_training_load_returns_its_label() {
        let ds = dataset(30);
        let knn = KnnModel::fit(&ds, 1, KnnMetric::Raw).unwrap();
        let s = &ds.samples[7];
        assert_eq!(knn.neighbors(&s.p_d), vec![7]);
        let p = knn.predict_generation(&s.p_d);
        assert_eq!(p[1], s.p_g_full[1]);
    }

    #[test]
    fn k_all_returns_mean_label() {
        let ds = dataset(20);
        let knn = KnnModel::fit(&ds, 20, KnnMetric::Normalized).unwrap();
        let sum: f64 = ds.samples.iter().map(|s| s.p_g_full[1]).sum();
        let p = knn.predict_generation(&[0.0, 10.0, 10.0]);
        assert!((p[1] - sum / 20.0).abs() < 1e-12);
        assert!((p[0] + p[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut ds = dataset(6);
        for s in &mut ds.samples {
            s.p_d = vec![0.0, 50.0, 150.0];
        }
        let knn = KnnModel::fit(&ds, 3, KnnMetric::Raw).unwrap();
        assert_eq!(knn.neighbors(&[0.0, 50.0, 150.0]), vec![0, 1, 2]);
    }

    #[test]
    fn k_bounds() {
        let ds = dataset(5);
        assert!(KnnModel::fit(&ds, 0, KnnMetric::Raw).is_err());
        assert!(KnnModel::fit(&ds, 6, KnnMetric::Raw).is_err());
    }
}
