//! Class-adaptive mixture priors built by hierarchical OT.
//!
//! One entropic OT problem couples base classes (rows) with all target
//! supports (columns) under the soft-min cost. The mass each base class
//! sends to the supports of target class `c`, normalized over base classes,
//! gives the mixture weights `w̃_{·c}`. Each prior is then
//! `Σ_b w̃_bc N(μ_b, κ Σ_b + r I)`, represented for the DRO layer by a fixed
//! weighted atom set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numkit::{lse_unchecked, GaussianParams, Matrix, SeededRng};
use crate::sinkhorn::{build_cost_matrix, solve_entropic_ot, OtProblem, TransportPlan};
use crate::{Error, Result};

const SIMPLEX_ROUNDING: f64 = 1e-14;

/// Mean, covariance and sample count of one base class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: usize,
    pub mean: Vec<f64>,
    /// Unbiased estimate; the zero matrix for single-sample classes.
    pub covariance: Matrix,
    pub count: usize,
}

/// Per-class statistics for labels `0..=max(labels)`.
pub fn compute_class_stats(features: &Matrix, labels: &[usize]) -> Result<Vec<ClassStats>> {
    if features.rows() != labels.len() {
        return Err(Error::dim(format!("{} rows with {} labels", features.rows(), labels.len())));
    }
    let Some(&max) = labels.iter().max() else {
        return Err(Error::invalid("no samples"));
    };
    let d = features.cols();
    let groups = group_by_label(labels, max + 1);
    groups
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            if idx.is_empty() {
                return Err(Error::EmptyClassAggregation(c));
            }
            let m = idx.len() as f64;
            let mut mean = vec![0.0; d];
            for &i in idx {
                for (a, x) in mean.iter_mut().zip(features.row(i)) {
                    *a += x;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut cov = Matrix::zeros(d, d);
            if idx.len() >= 2 {
                for &i in idx {
                    let r = features.row(i);
                    for p in 0..d {
                        let dp = r[p] - mean[p];
                        for q in 0..=p {
                            cov[(p, q)] += dp * (r[q] - mean[q]);
                        }
                    }
                }
                for p in 0..d {
                    for q in 0..=p {
                        let v = cov[(p, q)] / (m - 1.0);
                        cov[(p, q)] = v;
                        cov[(q, p)] = v;
                    }
                }
            }
            Ok(ClassStats {
                class_id: c,
                mean,
                covariance: cov,
                count: idx.len(),
            })
        })
        .collect()
}

pub(crate) fn group_by_label(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l < classes {
            groups[l].push(i);
        }
    }
    groups
}

/// Labeled feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl SupportSet {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim(format!("{} rows with {} labels", features.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(SupportSet {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices per class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        group_by_label(&self.labels, self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }

    /// Features of class `c`.
    pub fn class_features(&self, c: usize) -> Matrix {
        let idx: Vec<usize> = self.class_indices().swap_remove(c);
        self.features.select_rows(&idx)
    }

    /// Errors unless every class has at least one row.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&n| n == 0) {
            Some(c) => Err(Error::EmptyClassAggregation(c)),
            None => Ok(()),
        }
    }
}

/// How component atoms are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Atomization {
    /// Randomly shifted Halton points (nested across budgets).
    #[default]
    Quasi,
    /// Plain i.i.d. Gaussian draws.
    Random,
    /// Midpoint product rule on normal quantiles; deterministic, not nested.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub eps_sample: f64,
    pub eps_class: f64,
    pub inflation: f64,
    /// Added to every component covariance.
    pub ridge: f64,
    pub atoms_per_component: usize,
    pub atomization: Atomization,
    pub seed: u64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    /// Optional base-class marginal (uniform when absent).
    pub row_marginal: Option<Vec<f64>>,
    /// Optional support marginal (uniform when absent).
    pub col_marginal: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            eps_sample: 1.0,
            eps_class: 0.8,
            inflation: 3.0,
            ridge: 1e-6,
            atoms_per_component: 64,
            atomization: Atomization::Quasi,
            seed: 0,
            sinkhorn_tol: crate::sinkhorn::DEFAULT_TOL,
            sinkhorn_max_iters: crate::sinkhorn::DEFAULT_MAX_ITERS,
            row_marginal: None,
            col_marginal: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sample > 0.0) || !(self.eps_class > 0.0) {
            return Err(Error::invalid("prior epsilons must be > 0"));
        }
        if !(self.inflation > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::invalid("inflation must be > 0 and ridge >= 0"));
        }
        if self.atoms_per_component == 0 {
            return Err(Error::invalid("atoms_per_component must be >= 1"));
        }
        Ok(())
    }
}

/// The Gaussian components `N(μ_b, κ Σ_b + r I)` and their atoms.
///
/// Atoms of component `b` come from stream `b` of the configured seed, so
/// every class prior sees the same points and differs only in weights.
#[derive(Clone, Debug)]
pub struct AtomBank {
    pub components: Vec<GaussianParams>,
    pub atoms: Vec<Matrix>,
    pub seed: u64,
}

impl AtomBank {
    pub fn new(base_stats: &[ClassStats], cfg: &PriorConfig) -> Result<Self> {
        cfg.validate()?;
        let components = base_stats
            .iter()
            .map(|s| {
                let mut cov = s.covariance.scale(cfg.inflation);
                cov.add_diagonal(cfg.ridge);
                GaussianParams::new(s.mean.clone(), cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_components(components, cfg)
    }

    pub fn from_components(components: Vec<GaussianParams>, cfg: &PriorConfig) -> Result<Self> {
        let atoms = components
            .iter()
            .enumerate()
            .map(|(b, g)| {
                let mut rng = SeededRng::new(cfg.seed, b as u64);
                match cfg.atomization {
                    Atomization::Quasi => g.quasi_sample(cfg.atoms_per_component, &mut rng),
                    Atomization::Random => g.sample(cfg.atoms_per_component, &mut rng),
                    Atomization::Grid => g.grid_sample(cfg.atoms_per_component),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AtomBank {
            components,
            atoms,
            seed: cfg.seed,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }
}

/// A class prior: mixture weights, components, and its weighted atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub class_id: usize,
    /// `w̃_{·c}`; empty for an empirical prior.
    pub weights: Vec<f64>,
    /// One entry per weight; empty for an empirical prior.
    pub components: Vec<GaussianParams>,
    pub atoms: Matrix,
    /// Normalized: `LSE = 0`.
    pub atom_log_weights: Vec<f64>,
    pub atom_seed: u64,
}

impl MixturePrior {
    /// Assembles the prior from weights and a shared atom bank. Components with
    /// zero weight contribute no atoms.
    pub fn from_bank(class_id: usize, weights: Vec<f64>, bank: &AtomBank) -> Result<Self> {
        if weights.len() != bank.num_components() {
            return Err(Error::dim(format!(
                "{} weights for {} components",
                weights.len(),
                bank.num_components()
            )));
        }
        let mut parts = Vec::new();
        let mut logw = Vec::new();
        for (b, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                let a = &bank.atoms[b];
                let lw = w.ln() - (a.rows() as f64).ln();
                logw.extend(std::iter::repeat_n(lw, a.rows()));
                parts.push(a);
            }
        }
        if parts.is_empty() {
            return Err(Error::ZeroMass(class_id));
        }
        let atoms = Matrix::vstack(&parts)?;
        let z = lse_unchecked(&logw);
        logw.iter_mut().for_each(|v| *v -= z);
        Ok(MixturePrior {
            class_id,
            weights,
            components: bank.components.clone(),
            atoms,
            atom_log_weights: logw,
            atom_seed: bank.seed,
        })
    }

    /// Uniform atoms on the given points, with no mixture structure.
    pub fn empirical(class_id: usize, points: Matrix) -> Result<Self> {
        let n = points.rows();
        if n == 0 {
            return Err(Error::invalid("empirical prior needs at least one point"));
        }
        Ok(MixturePrior {
            class_id,
            weights: Vec::new(),
            components: Vec::new(),
            atoms: points,
            atom_log_weights: vec![-(n as f64).ln(); n],
            atom_seed: 0,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.rows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Column-mass aggregation of the plan over supports labeled `class_id`,
/// normalized over base classes.
pub fn mixture_weights(plan: &TransportPlan, labels: &[usize], class_id: usize) -> Result<Vec<f64>> {
    aggregate_columns(&plan.plan, labels, class_id)
}

pub(crate) fn aggregate_columns(plan: &Matrix, labels: &[usize], class_id: usize) -> Result<Vec<f64>> {
    if plan.cols() != labels.len() {
        return Err(Error::dim(format!("plan has {} columns, {} labels", plan.cols(), labels.len())));
    }
    let cols: Vec<usize> = (0..labels.len()).filter(|&n| labels[n] == class_id).collect();
    if cols.is_empty() {
        return Err(Error::EmptyClassAggregation(class_id));
    }
    let mut w: Vec<f64> = (0..plan.rows()).map(|b| cols.iter().map(|&n| plan[(b, n)]).sum()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroMass(class_id));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Solves the joint class-level OT between base classes and supports.
pub fn class_level_plan(base_prototypes: &[Matrix], supports: &SupportSet, cfg: &PriorConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let cost = build_cost_matrix(&supports.features, base_prototypes, cfg.eps_sample)?;
    let (nb, nn) = (cost.rows(), cost.cols());
    let a = cfg.row_marginal.clone().unwrap_or_else(|| vec![1.0 / nb as f64; nb]);
    let b = cfg.col_marginal.clone().unwrap_or_else(|| vec![1.0 / nn as f64; nn]);
    let problem = OtProblem::new(cost, a, b, cfg.eps_class)?;
    solve_entropic_ot(&problem, cfg.sinkhorn_tol, cfg.sinkhorn_max_iters)
}

/// Builds one prior per target class.
pub fn build_priors(
    base_stats: &[ClassStats],
    base_prototypes: &[Matrix],
    supports: &SupportSet,
    cfg: &PriorConfig,
) -> Result<Vec<MixturePrior>> {
    if base_stats.len() != base_prototypes.len() {
        return Err(Error::dim(format!(
            "{} base statistics with {} prototype sets",
            base_stats.len(),
            base_prototypes.len()
        )));
    }
    supports.require_all_classes()?;
    let plan = class_level_plan(base_prototypes, supports, cfg)?;
    let bank = AtomBank::new(base_stats, cfg)?;
    (0..supports.num_classes)
        .map(|c| {
            let w = mixture_weights(&plan, &supports.labels, c)?;
            MixturePrior::from_bank(c, w, &bank)
        })
        .collect()
}

/// `(1 − η) w + η target`, renormalized only to absorb rounding.
pub fn update_weights_damped(w: &[f64], target: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    if w.len() != target.len() {
        return Err(Error::dim(format!("weights of length {} and {}", w.len(), target.len())));
    }
    let mut out: Vec<f64> = w.iter().zip(target).map(|(a, t)| (1.0 - eta) * a + eta * t).collect();
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_ROUNDING {
        out.iter_mut().for_each(|v| *v /= s);
    }
    Ok(out)
}
