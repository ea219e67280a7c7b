//! Robust logits under growing atom budgets.
//!
//! Priors are fixed mixtures over a few Gaussian components (by default one
//! component per class); only the number of atoms per component changes. The default grid atomization is a
//! deterministic product rule whose error shrinks by a regular factor as
//! every axis is refined, so consecutive-budget gaps isolate the
//! discretization error of the dual.

use serde::{Deserialize, Serialize};

use super::io::{fmt_real, Table};
use crate::dro::{robust_logits, DroConfig};
use crate::models::LinearHead;
use crate::numkit::{random_orthogonal, GaussianParams, Matrix, SeededRng};
use crate::priors::{AtomBank, Atomization, MixturePrior, PriorConfig};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub dim: usize,
    pub num_base: usize,
    pub num_classes: usize,
    pub num_queries: usize,
    /// Increasing atom budgets per component; the last is the reference.
    pub budgets: Vec<usize>,
    /// Dirichlet concentration of the class mixture weights; `0` gives class
    /// `c` the single component `c mod B`.
    pub mixture_concentration: f64,
    /// Standard deviation of the component means.
    pub mean_spread: f64,
    /// Standard deviation of the random head weights.
    pub score_scale: f64,
    pub atomization: Atomization,
    pub dro: DroConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            dim: 1,
            num_base: 5,
            num_classes: 5,
            num_queries: 10,
            budgets: vec![32, 128, 512, 2048],
            mixture_concentration: 0.0,
            mean_spread: 0.0,
            score_scale: 1.0,
            atomization: Atomization::Grid,
            dro: DroConfig {
                epsilon: 0.2,
                rho: 0.1,
                newton_iters: 60,
                ..DroConfig::default()
            },
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.len() < 2 || self.budgets.windows(2).any(|w| w[1] <= w[0]) || self.budgets[0] == 0 {
            return Err(Error::Config("consistency budgets must be positive and strictly increasing".into()));
        }
        if !(self.mixture_concentration >= 0.0) {
            return Err(Error::Config("mixture_concentration must be >= 0".into()));
        }
        if self.dim == 0 || self.num_base == 0 || self.num_classes == 0 || self.num_queries == 0 {
            return Err(Error::Config("consistency sizes must be positive".into()));
        }
        self.dro.validate()
    }
}

/// Values of one `(query, class)` pair at every budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCurve {
    pub query: usize,
    pub class: usize,
    pub values: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `λ*` hit the lower clamp, so the value is the largest atom score.
    pub at_lower_bound: Vec<bool>,
}

impl PairCurve {
    /// `|V(A_k) − V(A_{k+1})|` for consecutive budgets.
    pub fn consecutive_gaps(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[0] - w[1]).abs()).collect()
    }

    pub fn gaps_non_increasing(&self) -> bool {
        self.consecutive_gaps().windows(2).all(|g| g[1] <= g[0])
    }

    /// `|V(A_k) − V_ref|` against the last budget.
    pub fn value_errors(&self) -> Vec<f64> {
        let r = *self.values.last().expect("at least two budgets");
        self.values.iter().map(|v| (v - r).abs()).collect()
    }

    pub fn lambda_errors(&self) -> Vec<f64> {
        let r = *self.lambdas.last().expect("at least two budgets");
        self.lambdas.iter().map(|v| (v - r).abs()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub budgets: Vec<usize>,
    pub curves: Vec<PairCurve>,
}

impl ConsistencyReport {
    pub fn monotone_fraction(&self) -> f64 {
        self.curves.iter().filter(|c| c.gaps_non_increasing()).count() as f64 / self.curves.len() as f64
    }

    /// Pairs whose dual solution sits on the lower clamp at some budget.
    pub fn boundary_pairs(&self) -> usize {
        self.curves.iter().filter(|c| c.at_lower_bound.iter().any(|b| *b)).count()
    }

    /// One row per `(query, class, budget)`: the value and `λ*`, their
    /// distance to the largest budget, and the gap to the next budget.
    pub fn table(&self, hash: &str) -> Table {
        let mut t = Table::new(
            hash,
            &["query", "class", "budget", "value", "lambda", "at_lower_bound", "value_error", "lambda_error", "next_gap"],
        );
        for c in &self.curves {
            let (ve, le, ng) = (c.value_errors(), c.lambda_errors(), c.consecutive_gaps());
            for (k, &b) in self.budgets.iter().enumerate() {
                t.push(vec![
                    c.query.to_string(),
                    c.class.to_string(),
                    b.to_string(),
                    fmt_real(c.values[k]),
                    fmt_real(c.lambdas[k]),
                    c.at_lower_bound[k].to_string(),
                    fmt_real(ve[k]),
                    fmt_real(le[k]),
                    ng.get(k).map_or(String::new(), |g| fmt_real(*g)),
                ]);
            }
        }
        t
    }
}

pub fn run_consistency(cfg: &ConsistencyConfig, seed: u64) -> Result<ConsistencyReport> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed, 0x636f_6e73);
    let (d, b, k) = (cfg.dim, cfg.num_base, cfg.num_classes);
    let components = (0..b)
        .map(|_| {
            let mean: Vec<f64> = (0..d).map(|_| cfg.mean_spread * rng.standard_normal()).collect();
            let q = random_orthogonal(d, &mut rng);
            let eig: Vec<f64> = (0..d).map(|_| 0.2 + 0.8 * rng.uniform()).collect();
            let cov = Matrix::from_fn(d, d, |i, j| (0..d).map(|m| q[(i, m)] * eig[m] * q[(j, m)]).sum());
            GaussianParams::new(mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = (0..k)
        .map(|c| {
            if cfg.mixture_concentration > 0.0 {
                rng.dirichlet(b, cfg.mixture_concentration)
            } else {
                let mut w = vec![0.0; b];
                w[c % b] = 1.0;
                Ok(w)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let head = LinearHead::new(
        Matrix::from_fn(k, d, |_, _| cfg.score_scale * rng.standard_normal()),
        (0..k).map(|_| 0.1 * rng.standard_normal()).collect(),
    )?;
    // Queries are drawn from the components themselves, so every tilt sits
    // where the atoms are.
    let mut queries = Matrix::zeros(cfg.num_queries, d);
    for i in 0..cfg.num_queries {
        let g = &components[rng.below(b)];
        queries.row_mut(i).copy_from_slice(g.sample(1, &mut rng)?.row(0));
    }
    let per_budget = cfg
        .budgets
        .iter()
        .map(|&a| {
            let pc = PriorConfig {
                atoms_per_component: a,
                atomization: cfg.atomization,
                seed,
                ..PriorConfig::default()
            };
            let bank = AtomBank::from_components(components.clone(), &pc)?;
            let priors = weights
                .iter()
                .enumerate()
                .map(|(c, w)| MixturePrior::from_bank(c, w.clone(), &bank))
                .collect::<Result<Vec<_>>>()?;
            par::try_map(cfg.num_queries, |i| robust_logits(&priors, queries.row(i), &head, &cfg.dro))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curves = Vec::with_capacity(cfg.num_queries * k);
    for i in 0..cfg.num_queries {
        for c in 0..k {
            curves.push(PairCurve {
                query: i,
                class: c,
                values: per_budget.iter().map(|r| r[i].0[c]).collect(),
                lambdas: per_budget.iter().map(|r| r[i].1[c].lambda_star).collect(),
                at_lower_bound: per_budget.iter().map(|r| r[i].1[c].at_lower_bound).collect(),
            });
        }
    }
    Ok(ConsistencyReport {
        budgets: cfg.budgets.clone(),
        curves,
    })
}
