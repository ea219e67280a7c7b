//! Damped prior-weight iteration and its convergence in the robust value.
//!
//! The instance: `B` Gaussian base components, support locations at fixed
//! random bins split between the tracked class and the rest, and a bin
//! marginal. One step solves the entropic OT between the current weights (as
//! the base marginal) and the bin marginal, aggregates the tracked class's
//! column mass per base component, and applies the linear aggregator
//! `R_s = (1 − s) I + (s/B) 11ᵀ` before normalizing:
//!
//! `T(w) = Norm(R_s Π(w) r_c)`.
//!
//! The population marginal is an `N = population_size` empirical draw from a
//! Dirichlet bin distribution; smaller `N` give the noisy maps `T̂` whose
//! fixed points set the noise floor.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{fmt_real, Table};

use crate::dro::{solve_dual_with_scores, tilt_log_weights, DroConfig};
use crate::numkit::{dot, sq_dist, GaussianParams, Matrix, SeededRng};
use crate::priors::{update_weights_damped, AtomBank, MixturePrior, PriorConfig};
use crate::sinkhorn::{solve_entropic_ot, OtProblem};
use crate::{par, Error, Result};

const FD_STEP: f64 = 1e-6;
const FIXED_POINT_TOL: f64 = 1e-14;
const FIXED_POINT_MAX_ITERS: usize = 5000;
const PRE_FLOOR: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionConfig {
    pub num_base: usize,
    pub dim: usize,
    /// Half the bins belong to the tracked class.
    pub num_bins: usize,
    /// Entropic weight of the weight-level OT.
    pub tau: f64,
    /// `s` in the aggregator `R_s`.
    pub shrink: f64,
    pub population_size: usize,
    pub steps: usize,
    pub etas: Vec<f64>,
    pub floor_sizes: Vec<usize>,
    pub floor_replicates: usize,
    pub floor_steps: usize,
    pub atoms_per_component: usize,
    pub component_variance: f64,
    pub dro: DroConfig,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            num_base: 4,
            dim: 2,
            num_bins: 12,
            tau: 3.0,
            shrink: 0.5,
            population_size: 100_000,
            steps: 200,
            etas: vec![1.0, 0.5],
            floor_sizes: vec![16, 64, 256, 1024],
            floor_replicates: 100,
            floor_steps: 80,
            atoms_per_component: 64,
            component_variance: 0.25,
            dro: DroConfig {
                epsilon: 0.5,
                newton_iters: 60,
                ..DroConfig::default()
            },
            sinkhorn_tol: 1e-13,
            sinkhorn_max_iters: 20_000,
        }
    }
}

impl ContractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_base < 2 || self.dim < 1 || self.num_bins < 2 {
            return Err(Error::Config("contraction needs num_base >= 2, dim >= 1, num_bins >= 2".into()));
        }
        if !(self.tau > 0.0) || !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::Config("contraction needs tau > 0 and shrink in (0, 1]".into()));
        }
        if self.etas.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) || self.etas.is_empty() {
            return Err(Error::Config("contraction etas must lie in (0, 1]".into()));
        }
        if self.population_size == 0 || self.floor_sizes.contains(&0) || self.floor_replicates == 0 {
            return Err(Error::Config("contraction sample sizes must be positive".into()));
        }
        self.dro.validate()
    }
}

/// The constructed instance with a fixed score function and query.
pub struct ContractionInstance {
    cost: Matrix,
    tracked: Vec<bool>,
    bank: AtomBank,
    query: Vec<f64>,
    theta: Vec<f64>,
    cfg: ContractionConfig,
    /// Bin distribution the population marginal is drawn from.
    pub bin_probs: Vec<f64>,
    /// The surrogate-population bin marginal.
    pub population: Vec<f64>,
}

impl ContractionInstance {
    pub fn new(cfg: &ContractionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed, 0x636f_6e74);
        let (b, d, m) = (cfg.num_base, cfg.dim, cfg.num_bins);
        let means = Matrix::from_fn(b, d, |_, _| 1.5 * rng.standard_normal());
        let bins = Matrix::from_fn(m, d, |_, _| 1.5 * rng.standard_normal());
        let cost = Matrix::from_fn(b, m, |i, j| sq_dist(means.row(i), bins.row(j)));
        let tracked = (0..m).map(|j| j < m / 2).collect();
        let bin_probs = rng.dirichlet(m, 5.0)?;
        let population = empirical(&bin_probs, cfg.population_size, &mut rng);
        let components = (0..b)
            .map(|i| {
                GaussianParams::new(means.row(i).to_vec(), Matrix::identity(d).scale(cfg.component_variance))
            })
            .collect::<Result<Vec<_>>>()?;
        let pc = PriorConfig {
            atoms_per_component: cfg.atoms_per_component,
            seed,
            ..PriorConfig::default()
        };
        let bank = AtomBank::from_components(components, &pc)?;
        let query: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let theta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        Ok(ContractionInstance {
            cost,
            tracked,
            bank,
            query,
            theta,
            cfg: cfg.clone(),
            bin_probs,
            population,
        })
    }

    /// `T(w)` under the bin marginal `marginal`.
    pub fn map(&self, w: &[f64], marginal: &[f64]) -> Result<Vec<f64>> {
        let p = OtProblem::new(self.cost.clone(), w.to_vec(), marginal.to_vec(), self.cfg.tau)?;
        let plan = solve_entropic_ot(&p, self.cfg.sinkhorn_tol, self.cfg.sinkhorn_max_iters)?.plan;
        let agg: Vec<f64> = (0..plan.rows())
            .map(|i| (0..plan.cols()).filter(|&j| self.tracked[j]).map(|j| plan[(i, j)]).sum())
            .collect();
        let total: f64 = agg.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroMass(0));
        }
        let s = self.cfg.shrink;
        let b = w.len() as f64;
        Ok(agg.iter().map(|a| (1.0 - s) * a / total + s / b).collect())
    }

    /// Robust value of the fixed score at the fixed query under weights `w`.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let prior = MixturePrior::from_bank(0, w.to_vec(), &self.bank)?;
        let lw = tilt_log_weights(&prior.atoms, &prior.atom_log_weights, &self.query, self.cfg.dro.epsilon)?;
        let f: Vec<f64> = prior.atoms.row_iter().map(|y| dot(&self.theta, y)).collect();
        Ok(solve_dual_with_scores(&lw, &f, &self.cfg.dro)?.value)
    }

    /// Fixed point of the undamped map, iterated to machine precision.
    pub fn fixed_point(&self, marginal: &[f64]) -> Result<Vec<f64>> {
        let mut w = vec![1.0 / self.cfg.num_base as f64; self.cfg.num_base];
        for _ in 0..FIXED_POINT_MAX_ITERS {
            let next = self.map(&w, marginal)?;
            let moved: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
            w = next;
            if moved < FIXED_POINT_TOL {
                return Ok(w);
            }
        }
        Err(Error::NotConverged {
            iterations: FIXED_POINT_MAX_ITERS,
            violation: f64::NAN,
        })
    }

    /// Spectral norm of the central-difference Jacobian of `T` restricted to
    /// the tangent space of the simplex.
    pub fn jacobian_norm(&self, w: &[f64], marginal: &[f64]) -> Result<f64> {
        let b = w.len();
        let basis = tangent_basis(b);
        let mut jac = Matrix::zeros(b, basis.len());
        for (k, dir) in basis.iter().enumerate() {
            let plus: Vec<f64> = w.iter().zip(dir).map(|(a, v)| a + FD_STEP * v).collect();
            let minus: Vec<f64> = w.iter().zip(dir).map(|(a, v)| a - FD_STEP * v).collect();
            let (tp, tm) = (self.map(&plus, marginal)?, self.map(&minus, marginal)?);
            for i in 0..b {
                jac[(i, k)] = (tp[i] - tm[i]) / (2.0 * FD_STEP);
            }
        }
        // Express the image in the same orthonormal tangent basis.
        let proj = Matrix::from_fn(basis.len(), basis.len(), |r, k| {
            (0..b).map(|i| basis[r][i] * jac[(i, k)]).sum()
        });
        Ok(spectral_norm(&proj))
    }
}

fn empirical(probs: &[f64], n: usize, rng: &mut SeededRng) -> Vec<f64> {
    rng.multinomial(n, probs).into_iter().map(|c| c as f64 / n as f64).collect()
}

/// Orthonormal basis of `{v : Σ v = 0}` (Helmert vectors).
fn tangent_basis(b: usize) -> Vec<Vec<f64>> {
    (1..b)
        .map(|k| {
            let norm = ((k * (k + 1)) as f64).sqrt();
            (0..b)
                .map(|i| match i.cmp(&k) {
                    std::cmp::Ordering::Less => 1.0 / norm,
                    std::cmp::Ordering::Equal => -(k as f64) / norm,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

fn spectral_norm(m: &Matrix) -> f64 {
    let mtm = m.transpose().matmul(m).expect("square product");
    let mut v = vec![1.0; mtm.cols()];
    let mut est = 0.0;
    for _ in 0..500 {
        let next = mtm.matvec(&v).expect("conformable");
        let n = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        v = next.into_iter().map(|x| x / n).collect();
        est = n;
    }
    est.sqrt()
}

/// One damped trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub eta: f64,
    pub gaps: Vec<f64>,
    /// `−slope` of `log Δ_t` against `t` over the segment with `Δ_t > 1e-11`.
    pub fitted_rate: f64,
    /// `Δ_t` grew tenfold within 20 steps somewhere along the trace.
    pub diverged: bool,
}

/// Mean terminal gap at one support size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub support_size: usize,
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub jacobian_norm: f64,
    pub fixed_point: Vec<f64>,
    pub reference_value: f64,
    pub traces: Vec<ContractionTrace>,
    pub floors: Vec<NoiseFloor>,
    /// Least-squares slope of `log floor` against `log N`.
    pub floor_slope: f64,
}

impl ContractionReport {
    pub fn contractive(&self) -> bool {
        self.jacobian_norm < 1.0
    }

    /// `(eta, t, gap, bound)`, where `bound = Δ_0 (1 − η(1 − ‖DT‖))^t` is the
    /// linearized envelope.
    pub fn trace_table(&self, hash: &str) -> Table {
        let mut t = Table::new(hash, &["eta", "t", "gap", "bound"]);
        for tr in &self.traces {
            let q = 1.0 - tr.eta * (1.0 - self.jacobian_norm);
            for (k, g) in tr.gaps.iter().enumerate() {
                t.push(vec![
                    tr.eta.to_string(),
                    k.to_string(),
                    fmt_real(*g),
                    fmt_real(tr.gaps[0] * q.powi(k as i32)),
                ]);
            }
        }
        t
    }

    pub fn floor_table(&self, hash: &str) -> Table {
        let mut t = Table::new(hash, &["support_size", "floor"]);
        for f in &self.floors {
            t.push(vec![f.support_size.to_string(), fmt_real(f.floor)]);
        }
        t
    }

    pub fn summary_table(&self, hash: &str) -> Table {
        let mut t = Table::new(hash, &["eta", "fitted_rate", "diverged", "jacobian_norm", "floor_slope"]);
        for tr in &self.traces {
            t.push(vec![
                tr.eta.to_string(),
                fmt_real(tr.fitted_rate),
                tr.diverged.to_string(),
                fmt_real(self.jacobian_norm),
                fmt_real(self.floor_slope),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
        let files = [
            ("trace.csv", self.trace_table(hash)),
            ("floors.csv", self.floor_table(hash)),
            ("summary.csv", self.summary_table(hash)),
        ];
        let mut out = Vec::new();
        for (name, t) in files {
            t.write(&dir.join(name))?;
            out.push(PathBuf::from(name));
        }
        Ok(out)
    }
}

fn trajectory(inst: &ContractionInstance, marginal: &[f64], eta: f64, steps: usize, v_ref: f64) -> Result<Vec<f64>> {
    let mut w = vec![1.0 / inst.cfg.num_base as f64; inst.cfg.num_base];
    // Start away from the uniform point so the first gap is not accidentally small.
    w[0] += 0.5;
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let mut gaps = Vec::with_capacity(steps + 1);
    gaps.push((inst.value(&w)? - v_ref).abs());
    for _ in 0..steps {
        w = update_weights_damped(&w, &inst.map(&w, marginal)?, eta)?;
        gaps.push((inst.value(&w)? - v_ref).abs());
    }
    Ok(gaps)
}

fn fit_rate(gaps: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .enumerate()
        .take_while(|(_, g)| **g > PRE_FLOOR)
        .map(|(t, g)| (t as f64, g.ln()))
        .collect();
    -ls_slope(&pts)
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn diverged(gaps: &[f64]) -> bool {
    gaps.windows(21).any(|w| w[20] > 10.0 * w[0] && w[0] > 0.0)
}

pub fn run_contraction(cfg: &ContractionConfig, seed: u64) -> Result<ContractionReport> {
    let inst = ContractionInstance::new(cfg, seed)?;
    let w_star = inst.fixed_point(&inst.population)?;
    let v_ref = inst.value(&w_star)?;
    let jacobian_norm = inst.jacobian_norm(&w_star, &inst.population)?;
    let traces = cfg
        .etas
        .iter()
        .map(|&eta| {
            let gaps = trajectory(&inst, &inst.population, eta, cfg.steps, v_ref)?;
            Ok(ContractionTrace {
                eta,
                fitted_rate: fit_rate(&gaps),
                diverged: diverged(&gaps),
                gaps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let floors = cfg
        .floor_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let gaps = par::try_map(cfg.floor_replicates, |r| {
                let mut rng = SeededRng::new(seed, 0x666c_0000 + (k * cfg.floor_replicates + r) as u64);
                let marginal = empirical(&inst.population, n, &mut rng);
                let g = trajectory(&inst, &marginal, 1.0, cfg.floor_steps, v_ref)?;
                Ok(*g.last().expect("at least one gap"))
            })?;
            Ok(NoiseFloor {
                support_size: n,
                floor: gaps.iter().sum::<f64>() / gaps.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = floors.iter().map(|f| ((f.support_size as f64).ln(), f.floor.ln())).collect();
    Ok(ContractionReport {
        jacobian_norm,
        fixed_point: w_star,
        reference_value: v_ref,
        traces,
        floor_slope: ls_slope(&pts),
        floors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_basis_is_orthonormal() {
        let b = tangent_basis(4);
        for i in 0..3 {
            assert!(b[i].iter().sum::<f64>().abs() < 1e-15);
            for j in 0..3 {
                let d = dot(&b[i], &b[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|t| (t as f64, 3.0 - 0.5 * t as f64)).collect();
        assert!((ls_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn map_stays_on_simplex() {
        let cfg = ContractionConfig::default();
        let inst = ContractionInstance::new(&cfg, 3).unwrap();
        let t = inst.map(&[0.1, 0.2, 0.3, 0.4], &inst.population).unwrap();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.iter().all(|v| *v >= cfg.shrink / 4.0 - 1e-15));
    }

    #[test]
    fn small_run_decays_and_tables_match() {
        let cfg = ContractionConfig {
            population_size: 2000,
            steps: 40,
            floor_sizes: vec![16, 64],
            floor_replicates: 4,
            floor_steps: 10,
            ..ContractionConfig::default()
        };
        let r = run_contraction(&cfg, 1).unwrap();
        assert!(r.contractive());
        for tr in &r.traces {
            assert!(!tr.diverged);
            assert!(tr.gaps[40] < 1e-3 * tr.gaps[0]);
        }
        assert_eq!(r.trace_table("h").len(), 2 * 41);
        assert_eq!(r, run_contraction(&cfg, 1).unwrap());
    }

    #[test]
    fn divergence_flag() {
        let mut g = vec![1.0; 30];
        assert!(!diverged(&g));
        g[25] = 20.0;
        assert!(diverged(&g));
    }
}
