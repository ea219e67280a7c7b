//! Mixture-weight matrices `w̃` as the number of target supports grows.
//!
//! For each seed one pool of `max(shots)` supports per class is drawn, and
//! the budget `k` uses the first `k` of each class, so supports are nested
//! across budgets.

use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Task};
use super::io::{fmt_real, Table};
use crate::numkit::Matrix;
use crate::priors::{build_priors, compute_class_stats, SupportSet};
use crate::synthgen::{generate_pair, Shots};
use crate::{par, Error, Result};

/// `B × C` weights for one (seed, shots) pair; column `c` is the mixture of
/// class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub seed: u64,
    pub shots: usize,
    pub weights: Matrix,
}

impl WeightMap {
    /// Mean of `w̃_cc` over classes.
    pub fn diagonal_mass(&self) -> f64 {
        let k = self.weights.rows().min(self.weights.cols());
        (0..k).map(|c| self.weights[(c, c)]).sum::<f64>() / self.weights.cols() as f64
    }
}

#[derive(Clone, Debug)]
pub struct HeatmapReport {
    pub config_hash: String,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Seed-major, then shots.
    pub maps: Vec<WeightMap>,
}

impl HeatmapReport {
    pub fn map(&self, seed: u64, shots: usize) -> Option<&WeightMap> {
        self.maps.iter().find(|m| m.seed == seed && m.shots == shots)
    }

    /// Diagonal mass per seed, in `shots` order.
    pub fn traces(&self) -> Vec<(u64, Vec<f64>)> {
        self.seeds
            .iter()
            .map(|&s| (s, self.shots.iter().map(|&k| self.map(s, k).map_or(f64::NAN, WeightMap::diagonal_mass)).collect()))
            .collect()
    }

    /// Seeds whose diagonal mass never decreases as shots grow.
    pub fn monotone_seeds(&self) -> usize {
        self.traces().iter().filter(|(_, t)| t.windows(2).all(|w| w[1] >= w[0])).count()
    }

    pub fn mean_diagonal_mass(&self, shots: usize) -> f64 {
        let v: Vec<f64> = self.maps.iter().filter(|m| m.shots == shots).map(WeightMap::diagonal_mass).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Long-format weights: one row per `(seed, shots, base, class)`.
    pub fn weights_table(&self) -> Table {
        let mut t = Table::new(&self.config_hash, &["seed", "shots", "base", "class", "weight"]);
        for m in &self.maps {
            for b in 0..m.weights.rows() {
                for c in 0..m.weights.cols() {
                    t.push(vec![
                        m.seed.to_string(),
                        m.shots.to_string(),
                        b.to_string(),
                        c.to_string(),
                        fmt_real(m.weights[(b, c)]),
                    ]);
                }
            }
        }
        t
    }

    /// One `B × C` matrix per file, rows are base classes.
    pub fn matrix_table(&self, m: &WeightMap) -> Table {
        let cols: Vec<String> = (0..m.weights.cols()).map(|c| format!("class_{c}")).collect();
        let mut names = vec!["base"];
        names.extend(cols.iter().map(String::as_str));
        let mut t = Table::new(&self.config_hash, &names);
        for b in 0..m.weights.rows() {
            let mut row = vec![b.to_string()];
            row.extend(m.weights.row(b).iter().map(|v| fmt_real(*v)));
            t.push(row);
        }
        t
    }

    pub fn diagonal_table(&self) -> Table {
        let mut t = Table::new(&self.config_hash, &["seed", "shots", "diagonal_mass"]);
        for m in &self.maps {
            t.push(vec![m.seed.to_string(), m.shots.to_string(), fmt_real(m.diagonal_mass())]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for m in &self.maps {
            let rel = PathBuf::from("matrices").join(format!("s{}_k{}.csv", m.seed, m.shots));
            self.matrix_table(m).write(&dir.join(&rel))?;
            out.push(rel);
        }
        for (name, t) in [("weights.csv", self.weights_table()), ("diagonal.csv", self.diagonal_table())] {
            t.write(&dir.join(name))?;
            out.push(PathBuf::from(name));
        }
        Ok(out)
    }
}

/// The first `k` supports of every class.
fn first_per_class(s: &SupportSet, k: usize) -> Result<SupportSet> {
    let mut idx: Vec<usize> = s.class_indices().into_iter().flat_map(|v| v.into_iter().take(k)).collect();
    idx.sort_unstable();
    SupportSet::new(
        s.features.select_rows(&idx),
        idx.iter().map(|&i| s.labels[i]).collect(),
        s.num_classes,
    )
}

fn seed_maps(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<WeightMap>> {
    let pool = *cfg.heatmap.shots.last().expect("validated nonempty");
    let mut gen = cfg.generator_at(cfg.heatmap.level);
    gen.shots = Shots::Fixed(pool);
    let pair = generate_pair(&gen, seed)?;
    let stats = compute_class_stats(&pair.source.features, &pair.source.labels)?;
    let protos: Vec<Matrix> = (0..pair.source.num_classes).map(|c| pair.source.class_features(c)).collect();
    cfg.heatmap
        .shots
        .iter()
        .map(|&k| {
            let sup = first_per_class(&pair.target_train_supports, k)?;
            let priors = build_priors(&stats, &protos, &sup, &cfg.prior)?;
            let b = stats.len();
            let weights = Matrix::from_fn(b, priors.len(), |r, c| priors[c].weights[r]);
            Ok(WeightMap { seed, shots: k, weights })
        })
        .collect()
}

/// Builds the weight matrices for every seed and shot budget.
pub fn run_heatmap(cfg: &ExperimentConfig) -> Result<HeatmapReport> {
    if cfg.task != Task::Heatmap {
        return Err(Error::Config("heatmap needs task = \"heatmap\"".into()));
    }
    cfg.validate()?;
    let maps = par::try_map(cfg.seeds.len(), |i| seed_maps(cfg, cfg.seeds[i]))?;
    Ok(HeatmapReport {
        config_hash: cfg.hash()?,
        shots: cfg.heatmap.shots.clone(),
        seeds: cfg.seeds.clone(),
        maps: maps.into_iter().flatten().collect(),
    })
}
