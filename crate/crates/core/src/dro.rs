//! Sinkhorn-DRO robust logits.
//!
//! For a reference measure `ν` (a weighted atom set), a query `x` and a score
//! `f(y)`, the Gibbs tilt is `q_j ∝ ν_j exp(−‖x − y_j‖²/ε)` and the robust
//! value is the one-dimensional convex dual
//!
//! ```text
//! V = min_{λ ≥ 0} φ(λ),   φ(λ) = λρ + λε log Σ_j q_j exp(f_j / (λε)).
//! ```
//!
//! With `p_λ ∝ q exp(f/(λε))`:
//!
//! ```text
//! φ'(λ)  = ρ − ε KL(p_λ ‖ q)
//! φ''(λ) = Var_{p_λ}(f) / (λ³ ε)
//! ```
//!
//! Constant scores put the minimizer at `λ = 0` with `V` equal to the
//! constant. Otherwise `φ` is strictly convex and the minimizer is found by
//! Newton steps in `log λ`, safeguarded by a sign bracket and geometric
//! bisection on `[lambda_min, lambda_max]`.

use serde::{Deserialize, Serialize};

use crate::numkit::{lse_unchecked, sq_dist, Matrix};
use crate::priors::MixturePrior;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub newton_iters: usize,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Relative spread below which scores count as constant.
    pub flat_tol: f64,
    /// Convergence threshold on `|φ'|`, scaled by `1 + ρ`.
    pub grad_tol: f64,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig {
            rho: 1.0,
            epsilon: 0.1,
            newton_iters: 8,
            lambda_init: 1.0,
            lambda_min: 1e-6,
            lambda_max: 1e4,
            flat_tol: 1e-12,
            grad_tol: 1e-8,
        }
    }
}

impl DroConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "rho and epsilon must be > 0 (rho {}, epsilon {})",
                self.rho, self.epsilon
            )));
        }
        if !(0.0 < self.lambda_min && self.lambda_min < self.lambda_init && self.lambda_init < self.lambda_max) {
            return Err(Error::invalid(format!(
                "need 0 < lambda_min < lambda_init < lambda_max, got {} / {} / {}",
                self.lambda_min, self.lambda_init, self.lambda_max
            )));
        }
        if !(self.flat_tol >= 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::invalid("flat_tol must be >= 0 and grad_tol > 0"));
        }
        Ok(())
    }
}

/// Tilted reference weights for one query, plus the scores of its atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsPosterior {
    pub atom_scores: Vec<f64>,
    /// `log q_j`, normalized to `LSE = 0`.
    pub tilt_log_weights: Vec<f64>,
}

impl GibbsPosterior {
    pub fn with_scores(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.tilt_log_weights.len() {
            return Err(Error::dim(format!(
                "{} scores for {} atoms",
                scores.len(),
                self.tilt_log_weights.len()
            )));
        }
        self.atom_scores = scores;
        Ok(self)
    }
}

/// Gibbs tilt of `prior` toward `x`. Scores are left zero.
pub fn gibbs_tilt(prior: &MixturePrior, x: &[f64], epsilon: f64) -> Result<GibbsPosterior> {
    let lw = tilt_log_weights(&prior.atoms, &prior.atom_log_weights, x, epsilon)?;
    Ok(GibbsPosterior {
        atom_scores: vec![0.0; lw.len()],
        tilt_log_weights: lw,
    })
}

/// `log ν_j − ‖x − y_j‖²/ε`, normalized.
pub fn tilt_log_weights(atoms: &Matrix, atom_log_weights: &[f64], x: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if atoms.rows() == 0 {
        return Err(Error::invalid("prior has no atoms"));
    }
    if atoms.cols() != x.len() || atom_log_weights.len() != atoms.rows() {
        return Err(Error::dim(format!(
            "query of dimension {} against {}x{} atoms with {} weights",
            x.len(),
            atoms.rows(),
            atoms.cols(),
            atom_log_weights.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut lw: Vec<f64> = atoms
        .row_iter()
        .zip(atom_log_weights)
        .map(|(y, w)| w - sq_dist(x, y) / epsilon)
        .collect();
    let z = lse_unchecked(&lw);
    if !z.is_finite() {
        return Err(Error::NonFinite("gibbs normalizer".into()));
    }
    lw.iter_mut().for_each(|v| *v -= z);
    Ok(lw)
}

/// `(φ, φ', φ'')` at `lambda`.
pub fn dual_objective(q: &GibbsPosterior, lambda: f64, cfg: &DroConfig) -> Result<(f64, f64, f64)> {
    if !(lambda >= cfg.lambda_min) {
        return Err(Error::invalid(format!("lambda {lambda} below lambda_min {}", cfg.lambda_min)));
    }
    check_lengths(&q.tilt_log_weights, &q.atom_scores)?;
    let e = Eval::at(&q.tilt_log_weights, &q.atom_scores, f_max(&q.tilt_log_weights, &q.atom_scores), lambda, cfg);
    Ok((e.phi, e.dphi, e.d2phi))
}

fn check_lengths(lw: &[f64], f: &[f64]) -> Result<()> {
    if lw.len() != f.len() || lw.is_empty() {
        return Err(Error::dim(format!("{} log weights with {} scores", lw.len(), f.len())));
    }
    Ok(())
}

/// Largest score among atoms carrying mass.
fn f_max(lw: &[f64], f: &[f64]) -> f64 {
    lw.iter()
        .zip(f)
        .filter(|(w, _)| w.is_finite())
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One evaluation of the dual and its softmax moments.
struct Eval {
    lambda: f64,
    phi: f64,
    dphi: f64,
    d2phi: f64,
    p: Vec<f64>,
}

impl Eval {
    fn at(lw: &[f64], f: &[f64], fmax: f64, lambda: f64, cfg: &DroConfig) -> Eval {
        let s = lambda * cfg.epsilon;
        let mut logits: Vec<f64> = lw.iter().zip(f).map(|(w, v)| w + (v - fmax) / s).collect();
        let lse = lse_unchecked(&logits);
        let mut kl = -lse;
        let mut mean = 0.0;
        for (l, v) in logits.iter_mut().zip(f) {
            let p = (*l - lse).exp();
            if p > 0.0 {
                kl += p * (v - fmax) / s;
                mean += p * v;
            }
            *l = p;
        }
        let p = logits;
        let var: f64 = p.iter().zip(f).map(|(p, v)| if *p > 0.0 { p * (v - mean) * (v - mean) } else { 0.0 }).sum();
        Eval {
            lambda,
            phi: lambda * cfg.rho + fmax + s * lse,
            dphi: cfg.rho - cfg.epsilon * kl.max(0.0),
            d2phi: var / (lambda * lambda * s),
            p,
        }
    }
}

/// Minimizer of the dual and the posterior it induces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolveResult {
    /// `V = φ(λ*)`.
    pub value: f64,
    pub lambda_star: f64,
    /// `p_j ∝ q_j exp(f_j/(λ*ε))`; equals `q` in the degenerate case.
    pub posterior: Vec<f64>,
    pub dphi: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Constant scores, `λ* = 0`.
    pub degenerate: bool,
    /// `φ' ≥ 0` already at `lambda_min`.
    pub at_lower_bound: bool,
    /// `φ' ≤ 0` still at `lambda_max`.
    pub at_upper_bound: bool,
}

impl DualSolveResult {
    /// True when the envelope gradient is exact: degenerate or an interior,
    /// converged minimizer.
    pub fn envelope_exact(&self) -> bool {
        self.degenerate || (self.converged && !self.at_lower_bound && !self.at_upper_bound)
    }
}

pub fn solve_dual(q: &GibbsPosterior, cfg: &DroConfig) -> Result<DualSolveResult> {
    solve_dual_with_scores(&q.tilt_log_weights, &q.atom_scores, cfg)
}

/// [`solve_dual`] on borrowed log weights and scores.
pub fn solve_dual_with_scores(lw: &[f64], f: &[f64], cfg: &DroConfig) -> Result<DualSolveResult> {
    check_lengths(lw, f)?;
    if let Some(j) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score of atom {j}")));
    }
    let fmax = f_max(lw, f);
    let fmin = lw
        .iter()
        .zip(f)
        .filter(|(w, _)| w.is_finite())
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if fmax - fmin <= cfg.flat_tol * scale {
        return Ok(DualSolveResult {
            value: fmax,
            lambda_star: 0.0,
            posterior: lw.iter().map(|w| w.exp()).collect(),
            dphi: cfg.rho,
            iterations: 0,
            converged: true,
            degenerate: true,
            at_lower_bound: false,
            at_upper_bound: false,
        });
    }

    let tol = cfg.grad_tol * (1.0 + cfg.rho.abs());
    let eval = |lambda: f64| -> Result<Eval> {
        let e = Eval::at(lw, f, fmax, lambda, cfg);
        if !e.phi.is_finite() || !e.dphi.is_finite() {
            return Err(Error::NonFinite(format!("dual objective at lambda {lambda}")));
        }
        Ok(e)
    };
    let finish = |e: Eval, iterations: usize, converged: bool, lower: bool, upper: bool| DualSolveResult {
        value: e.phi,
        lambda_star: e.lambda,
        posterior: e.p,
        dphi: e.dphi,
        iterations,
        converged,
        degenerate: false,
        at_lower_bound: lower,
        at_upper_bound: upper,
    };

    let lo_eval = eval(cfg.lambda_min)?;
    if lo_eval.dphi >= 0.0 {
        return Ok(finish(lo_eval, 0, true, true, false));
    }
    let hi_eval = eval(cfg.lambda_max)?;
    if hi_eval.dphi <= 0.0 {
        return Ok(finish(hi_eval, 0, true, false, true));
    }

    // Second-order warm start: φ ≈ λρ + E_q f + Var_q f / (2λε).
    let (mut lo, mut hi) = (cfg.lambda_min, cfg.lambda_max);
    let q: Vec<f64> = lw.iter().map(|w| w.exp()).collect();
    let mq: f64 = q.iter().zip(f).map(|(a, b)| a * b).sum();
    let vq: f64 = q.iter().zip(f).map(|(a, b)| a * (b - mq) * (b - mq)).sum();
    let mut lambda = (vq / (2.0 * cfg.epsilon * cfg.rho)).sqrt();
    if !lambda.is_finite() || lambda <= lo || lambda >= hi {
        lambda = cfg.lambda_init.clamp(lo, hi);
    }
    let mut cur = eval(lambda)?;
    let narrow = |e: &Eval, lo: &mut f64, hi: &mut f64| {
        if e.dphi < 0.0 {
            *lo = lo.max(e.lambda);
        } else {
            *hi = hi.min(e.lambda);
        }
    };
    narrow(&cur, &mut lo, &mut hi);
    let mut best_dphi = cur.dphi.abs();
    let mut best: Option<Eval> = None;
    let mut iterations = 0;
    while iterations < cfg.newton_iters && cur.dphi.abs() > tol {
        iterations += 1;
        // Newton on log KL(u) = log(ρ/ε) with u = log λ; KL = (ρ − φ')/ε and
        // dKL/du = −λφ''/ε. log KL is close to linear in u for large λ.
        let kl = (cfg.rho - cur.dphi) / cfg.epsilon;
        let cand = if kl > 0.0 {
            let step = (kl.ln() - (cfg.rho / cfg.epsilon).ln()) * cfg.epsilon * kl / (cur.lambda * cur.d2phi);
            (cur.lambda.ln() + step.clamp(-MAX_LOG_STEP, MAX_LOG_STEP)).exp()
        } else {
            f64::NAN
        };
        let mut next = None;
        if cand.is_finite() && cand > lo && cand < hi {
            let e = eval(cand)?;
            narrow(&e, &mut lo, &mut hi);
            if e.dphi.abs() < cur.dphi.abs() {
                next = Some(e);
            }
        }
        let e = match next {
            Some(e) => e,
            None => {
                let e = eval(fallback(cur.lambda, lo, hi, cfg))?;
                narrow(&e, &mut lo, &mut hi);
                e
            }
        };
        let prev = std::mem::replace(&mut cur, e);
        if prev.dphi.abs() <= best_dphi && cur.dphi.abs() > prev.dphi.abs() {
            best_dphi = prev.dphi.abs();
            best = Some(prev);
        }
    }
    if let Some(b) = best.filter(|b| b.dphi.abs() < cur.dphi.abs()) {
        cur = b;
    }
    let converged = cur.dphi.abs() <= tol;
    Ok(finish(cur, iterations, converged, false, false))
}

/// Trust region for one Newton step in `log λ`. Plateaus of φ' (few atoms
/// carrying the tilt) otherwise send the step several decades past λ*.
const MAX_LOG_STEP: f64 = 3.0;

/// Geometric bisection of the bracket, or a 4x expansion from the current
/// point while one side is still the domain clamp.
fn fallback(lambda: f64, lo: f64, hi: f64, cfg: &DroConfig) -> f64 {
    let mid = (lo * hi).sqrt();
    if hi >= cfg.lambda_max && lambda <= lo {
        (4.0 * lambda).min(mid)
    } else if lo <= cfg.lambda_min && lambda >= hi {
        (lambda / 4.0).max(mid)
    } else {
        mid
    }
}

/// Score of every atom under class `class`.
pub trait AtomScorer {
    fn atom_scores(&self, class: usize, atoms: &Matrix) -> Vec<f64>;
}

impl<F> AtomScorer for F
where
    F: Fn(usize, &Matrix) -> Vec<f64>,
{
    fn atom_scores(&self, class: usize, atoms: &Matrix) -> Vec<f64> {
        self(class, atoms)
    }
}

/// Robust logit of every class for one query; classes are solved
/// independently.
pub fn robust_logits(
    priors: &[MixturePrior],
    x: &[f64],
    scorer: &impl AtomScorer,
    cfg: &DroConfig,
) -> Result<(Vec<f64>, Vec<DualSolveResult>)> {
    let mut values = Vec::with_capacity(priors.len());
    let mut results = Vec::with_capacity(priors.len());
    for (c, prior) in priors.iter().enumerate() {
        let r = (|| {
            let q = gibbs_tilt(prior, x, cfg.epsilon)?.with_scores(scorer.atom_scores(c, &prior.atoms))?;
            solve_dual(&q, cfg)
        })()
        .map_err(|e| e.in_class(c))?;
        values.push(r.value);
        results.push(r);
    }
    Ok((values, results))
}

/// Argmax with ties to the lowest index.
pub fn decide(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Envelope gradient `Σ_j p_j ∇f_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeGradient {
    pub grad: Vec<f64>,
    /// False at a λ boundary or after an unconverged solve.
    pub exact: bool,
}

/// `atom_score_grads` has one row per atom.
pub fn robust_logit_grad(result: &DualSolveResult, atom_score_grads: &Matrix) -> Result<EnvelopeGradient> {
    if atom_score_grads.rows() != result.posterior.len() {
        return Err(Error::dim(format!(
            "{} gradient rows for {} atoms",
            atom_score_grads.rows(),
            result.posterior.len()
        )));
    }
    Ok(EnvelopeGradient {
        grad: posterior_mean(&result.posterior, atom_score_grads),
        exact: result.envelope_exact(),
    })
}

/// `Σ_j p_j y_j` over the rows of `rows`.
pub fn posterior_mean(p: &[f64], rows: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; rows.cols()];
    for (w, r) in p.iter().zip(rows.row_iter()) {
        if *w > 0.0 {
            for (o, v) in out.iter_mut().zip(r) {
                *o += w * v;
            }
        }
    }
    out
}

/// Sum of per-class dual values, a diagnostic for the joint objective.
pub fn joint_dual_value(results: &[DualSolveResult]) -> f64 {
    results.iter().map(|r| r.value).sum()
}
