//! Entropic optimal transport in the log domain and the soft-min
//! sample-to-class cost.
//!
//! The solver alternates exact updates of the dual potentials `f` (rows) and
//! `g` (columns):
//!
//! ```text
//! f_b = ε log α_b − ε LSE_n((g_n − C_bn)/ε)
//! g_n = ε log β_n − ε LSE_b((f_b − C_bn)/ε)
//! T_bn = exp((f_b + g_n − C_bn)/ε)
//! ```
//!
//! so `−C/ε` is never exponentiated on its own and small ε cannot overflow.
//! Near-permutation plans make the sweeps crawl; those are finished with
//! Newton steps on the semi-dual (see [`solve_entropic_ot`]).

use serde::{Deserialize, Serialize};

use crate::numkit::{lse_unchecked, sq_dist, Matrix};
use crate::{par, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 1000;

const MARGINAL_SUM_TOL: f64 = 1e-12;

/// Cost matrix, marginals and entropic weight of one OT problem.
#[derive(Clone, Debug)]
pub struct OtProblem {
    cost: Matrix,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    epsilon: f64,
}

impl OtProblem {
    pub fn new(cost: Matrix, row_marginal: Vec<f64>, col_marginal: Vec<f64>, epsilon: f64) -> Result<Self> {
        if row_marginal.len() != cost.rows() || col_marginal.len() != cost.cols() {
            return Err(Error::dim(format!(
                "marginals of length {}/{} for a {}x{} cost",
                row_marginal.len(),
                col_marginal.len(),
                cost.rows(),
                cost.cols()
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("entropic weight must be > 0, got {epsilon}")));
        }
        check_probability(&row_marginal, "row marginal")?;
        check_probability(&col_marginal, "column marginal")?;
        Ok(OtProblem {
            cost,
            row_marginal,
            col_marginal,
            epsilon,
        })
    }

    /// Problem with uniform marginals `1/B` and `1/N`.
    pub fn uniform(cost: Matrix, epsilon: f64) -> Result<Self> {
        let (b, n) = (cost.rows(), cost.cols());
        if b == 0 || n == 0 {
            return Err(Error::dim("empty cost matrix"));
        }
        Self::new(cost, vec![1.0 / b as f64; b], vec![1.0 / n as f64; n], epsilon)
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

fn check_probability(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Coupling returned by [`solve_entropic_ot`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub iterations_used: usize,
    /// Larger of the two L1 marginal gaps.
    pub marginal_violation: f64,
}

impl TransportPlan {
    /// `⟨C,T⟩ + ε Σ T log T` (with `0 log 0 = 0`).
    pub fn primal_objective(&self, cost: &Matrix, epsilon: f64) -> f64 {
        self.plan
            .as_slice()
            .iter()
            .zip(cost.as_slice())
            .map(|(t, c)| if *t > 0.0 { t * c + epsilon * t * t.ln() } else { 0.0 })
            .sum()
    }
}

/// Solves `min_{T≥0} ⟨C,T⟩ − ε H(T)` subject to `T1 = α`, `Tᵀ1 = β`.
///
/// Stops as soon as both L1 marginal gaps are `≤ tol`; otherwise fails with
/// [`Error::NotConverged`] carrying the last violation.
pub fn solve_entropic_ot(p: &OtProblem, tol: f64, max_iters: usize) -> Result<TransportPlan> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    let (plan, converged) = iterate(p, tol, max_iters);
    if converged {
        Ok(plan)
    } else {
        Err(Error::NotConverged {
            iterations: plan.iterations_used,
            violation: plan.marginal_violation,
        })
    }
}

/// Runs at most `max_iters` iterations, stopping early once the gap is `≤ tol`.
///
/// Plain Sinkhorn sweeps come first. When the plan is close to a permutation
/// the sweeps stall (the residual has to travel through entries of size
/// `exp(−ΔC/ε)`), so once progress over a window drops below half, the
/// remaining budget goes to damped Newton steps on the semi-dual in the
/// smaller of the two potentials. Both phases share the same fixed point.
fn iterate(p: &OtProblem, tol: f64, max_iters: usize) -> (TransportPlan, bool) {
    let (nb, nn) = (p.cost.rows(), p.cost.cols());
    let eps = p.epsilon;
    let log_a: Vec<f64> = p.row_marginal.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = p.col_marginal.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; nb];
    let mut g = vec![0.0; nn];
    let mut plan = assemble(&p.cost, &f, &g, eps);
    let mut violation = f64::INFINITY;
    let mut used = 0;
    let mut window_start = f64::INFINITY;

    while used < max_iters {
        used += 1;
        update_rows(&p.cost, &log_a, &g, eps, &mut f);
        update_cols(&p.cost, &log_b, &f, eps, &mut g);
        plan = assemble(&p.cost, &f, &g, eps);
        violation = marginal_gap(&plan, &p.row_marginal, &p.col_marginal);
        if violation <= tol || !violation.is_finite() {
            break;
        }
        if used % STALL_WINDOW == 0 {
            if violation > 0.5 * window_start {
                break;
            }
            window_start = violation;
        }
    }

    if violation > tol && violation.is_finite() && used < max_iters {
        let budget = max_iters - used;
        let (steps, v) = if nb <= nn {
            newton_polish(&p.cost, &log_a, &log_b, eps, &mut f, &mut g, tol, budget)
        } else {
            let ct = p.cost.transpose();
            newton_polish(&ct, &log_b, &log_a, eps, &mut g, &mut f, tol, budget)
        };
        used += steps;
        plan = assemble(&p.cost, &f, &g, eps);
        violation = v.max(marginal_gap(&plan, &p.row_marginal, &p.col_marginal));
    }

    let converged = violation <= tol;
    (
        TransportPlan {
            plan,
            iterations_used: used,
            marginal_violation: violation,
        },
        converged,
    )
}

const STALL_WINDOW: usize = 25;

fn update_rows(cost: &Matrix, log_a: &[f64], g: &[f64], eps: f64, f: &mut [f64]) {
    let mut scratch = vec![0.0; cost.cols()];
    for (b, fb) in f.iter_mut().enumerate() {
        if log_a[b] == f64::NEG_INFINITY {
            *fb = f64::NEG_INFINITY;
            continue;
        }
        for (s, (gn, c)) in scratch.iter_mut().zip(g.iter().zip(cost.row(b))) {
            *s = (gn - c) / eps;
        }
        *fb = eps * (log_a[b] - lse_unchecked(&scratch));
    }
}

fn update_cols(cost: &Matrix, log_b: &[f64], f: &[f64], eps: f64, g: &mut [f64]) {
    let mut scratch = vec![0.0; cost.rows()];
    for (n, gn) in g.iter_mut().enumerate() {
        if log_b[n] == f64::NEG_INFINITY {
            *gn = f64::NEG_INFINITY;
            continue;
        }
        for (b, s) in scratch.iter_mut().enumerate() {
            *s = (f[b] - cost[(b, n)]) / eps;
        }
        *gn = eps * (log_b[n] - lse_unchecked(&scratch));
    }
}

/// Newton ascent on `F(f) = ⟨f, α⟩ + ⟨g(f), β⟩` with `g(f)` the exact
/// column update, so column marginals hold at every step. Returns the number
/// of steps and the final row-marginal L1 gap.
#[allow(clippy::too_many_arguments)]
fn newton_polish(
    cost: &Matrix,
    log_a: &[f64],
    log_b: &[f64],
    eps: f64,
    f: &mut Vec<f64>,
    g: &mut Vec<f64>,
    tol: f64,
    budget: usize,
) -> (usize, f64) {
    let active: Vec<usize> = (0..f.len()).filter(|&b| log_a[b].is_finite()).collect();
    let alpha: Vec<f64> = log_a.iter().map(|v| v.exp()).collect();
    let beta: Vec<f64> = log_b.iter().map(|v| v.exp()).collect();
    let semi_dual = |f: &[f64], g: &[f64]| -> f64 {
        let fa: f64 = active.iter().map(|&b| alpha[b] * f[b]).sum();
        let gb: f64 = (0..g.len()).filter(|&n| beta[n] > 0.0).map(|n| beta[n] * g[n]).sum();
        fa + gb
    };

    update_cols(cost, log_b, f, eps, g);
    let mut plan = assemble(cost, f, g, eps);
    let mut value = semi_dual(f, g);
    let mut gap = row_gap(&plan, &alpha);
    let mut steps = 0;
    while steps < budget && gap > tol {
        steps += 1;
        let rows = plan.row_sums();
        let k = active.len();
        // −Hessian restricted to active rows, plus a rank-one term that pins
        // the constant direction the semi-dual is invariant to.
        let mean_r = active.iter().map(|&b| rows[b]).sum::<f64>() / k as f64;
        let mut h = Matrix::from_fn(k, k, |i, j| {
            let (bi, bj) = (active[i], active[j]);
            let mut v = 0.0;
            for n in 0..plan.cols() {
                if beta[n] > 0.0 {
                    v -= plan[(bi, n)] * plan[(bj, n)] / beta[n];
                }
            }
            if i == j {
                v += rows[bi];
            }
            (v + mean_r) / eps
        });
        for i in 0..k {
            for j in 0..i {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let grad: Vec<f64> = active.iter().map(|&b| alpha[b] - rows[b]).collect();
        let Ok(ch) = crate::numkit::cholesky_psd(&h, 1e-14 * mean_r / eps) else {
            break;
        };
        let Ok(dir) = ch.solve(&grad) else { break };
        let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut f_new = f.clone();
            for (i, &b) in active.iter().enumerate() {
                f_new[b] += t * dir[i];
            }
            let mut g_new = g.clone();
            update_cols(cost, log_b, &f_new, eps, &mut g_new);
            let v_new = semi_dual(&f_new, &g_new);
            let plan_new = assemble(cost, &f_new, &g_new, eps);
            let gap_new = row_gap(&plan_new, &alpha);
            if v_new >= value + 1e-4 * t * slope || gap_new < gap {
                *f = f_new;
                *g = g_new;
                plan = plan_new;
                value = v_new;
                gap = gap_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (steps, gap)
}

fn row_gap(plan: &Matrix, alpha: &[f64]) -> f64 {
    plan.row_sums().iter().zip(alpha).map(|(s, a)| (s - a).abs()).sum()
}

fn assemble(cost: &Matrix, f: &[f64], g: &[f64], eps: f64) -> Matrix {
    Matrix::from_fn(cost.rows(), cost.cols(), |b, n| {
        if f[b] == f64::NEG_INFINITY || g[n] == f64::NEG_INFINITY {
            0.0
        } else {
            ((f[b] + g[n] - cost[(b, n)]) / eps).exp()
        }
    })
}

fn marginal_gap(plan: &Matrix, a: &[f64], b: &[f64]) -> f64 {
    let rows: f64 = plan.row_sums().iter().zip(a).map(|(s, t)| (s - t).abs()).sum();
    let cols: f64 = plan.col_sums().iter().zip(b).map(|(s, t)| (s - t).abs()).sum();
    rows.max(cols)
}

/// Soft-min of squared Euclidean costs from `query` to each prototype row:
/// `−ε_s log Σ_i exp(−‖query − p_i‖² / ε_s)`.
pub fn softmin_cost(query: &[f64], prototypes: &Matrix, eps_sample: f64) -> Result<f64> {
    if prototypes.rows() == 0 {
        return Err(Error::invalid("empty prototype set"));
    }
    if prototypes.cols() != query.len() {
        return Err(Error::dim(format!(
            "query of dimension {} against prototypes of dimension {}",
            query.len(),
            prototypes.cols()
        )));
    }
    if !(eps_sample > 0.0) {
        return Err(Error::invalid(format!("eps_sample must be > 0, got {eps_sample}")));
    }
    let terms: Vec<f64> = prototypes.row_iter().map(|p| -sq_dist(query, p) / eps_sample).collect();
    Ok(-eps_sample * lse_unchecked(&terms))
}

/// `B×N` matrix whose entry `(b, n)` is the soft-min cost of support `n` to
/// the prototypes of base class `b`.
pub fn build_cost_matrix(supports: &Matrix, base_prototypes: &[Matrix], eps_sample: f64) -> Result<Matrix> {
    let nb = base_prototypes.len();
    let nn = supports.rows();
    if nb == 0 || nn == 0 {
        return Err(Error::dim("cost matrix needs at least one base class and one support"));
    }
    if let Some(bad) = base_prototypes.iter().position(|m| m.cols() != supports.cols()) {
        return Err(Error::dim(format!(
            "base class {bad} prototypes have dimension {}, supports have {}",
            base_prototypes[bad].cols(),
            supports.cols()
        )));
    }
    let entries = par::try_map(nb * nn, |k| {
        let (b, n) = (k / nn, k % nn);
        softmin_cost(supports.row(n), &base_prototypes[b], eps_sample)
    })?;
    Matrix::new(nb, nn, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;
    use proptest::prelude::*;

    fn l1(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum()
    }

    fn outer(a: &[f64], b: &[f64]) -> Matrix {
        Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    fn random_problem(rng: &mut SeededRng, nb: usize, nn: usize, eps: f64) -> OtProblem {
        let cost = Matrix::from_fn(nb, nn, |_, _| rng.uniform());
        let a = rng.dirichlet(nb, 2.0).unwrap();
        let b = rng.dirichlet(nn, 2.0).unwrap();
        let fix = |mut v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        OtProblem::new(cost, fix(a), fix(b), eps).unwrap()
    }

    #[test]
    fn constant_cost_gives_outer_product() {
        let a = vec![0.2, 0.3, 0.5];
        let b = vec![0.6, 0.4];
        let p = OtProblem::new(Matrix::from_fn(3, 2, |_, _| 4.2), a.clone(), b.clone(), 0.3).unwrap();
        let t = solve_entropic_ot(&p, 1e-10, 100).unwrap();
        assert!(l1(&t.plan, &outer(&a, &b)) < 1e-8);
    }

    #[test]
    fn two_by_two_concentrates_on_diagonal() {
        // Symmetric 2x2 with uniform marginals: T = [[p, 1/2−p], [1/2−p, p]]
        // and p/(1/2−p) = e^{1/ε}.
        let cost = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let t = solve_entropic_ot(&OtProblem::uniform(cost, 0.1).unwrap(), 1e-12, 1000).unwrap();
        let e = (10.0f64).exp();
        let want = e / (2.0 * (1.0 + e));
        assert!(t.plan[(0, 0)] >= 0.49 && t.plan[(1, 1)] >= 0.49);
        assert!((t.plan[(0, 0)] - want).abs() < 1e-10);
    }

    #[test]
    fn near_permutation_plan_converges() {
        let cost = Matrix::from_rows(&[[-1.5, 7.0], [9.0, -1.0]]).unwrap();
        let t = solve_entropic_ot(&OtProblem::uniform(cost.clone(), 0.8).unwrap(), 1e-10, 1000).unwrap();
        assert!(t.iterations_used < 200);
        // Fixed point check: T = diag(u) K diag(v) has cross ratio K12 K21 / (K11 K22).
        let cross = (t.plan[(0, 1)] * t.plan[(1, 0)]) / (t.plan[(0, 0)] * t.plan[(1, 1)]);
        let want = (-(7.0 + 9.0 + 1.5 + 1.0) / 0.8f64).exp();
        assert!((cross / want - 1.0).abs() < 1e-6);

        let wide = Matrix::from_fn(3, 9, |b, n| if n % 3 == b { 0.0 } else { 30.0 + n as f64 });
        let t = solve_entropic_ot(&OtProblem::uniform(wide.clone(), 0.5).unwrap(), 1e-9, 1000).unwrap();
        assert!(t.marginal_violation <= 1e-9);
        let t = solve_entropic_ot(&OtProblem::uniform(wide.transpose(), 0.5).unwrap(), 1e-9, 1000).unwrap();
        assert!(t.marginal_violation <= 1e-9);
    }

    #[test]
    fn huge_epsilon_tends_to_independence() {
        let mut rng = SeededRng::new(4, 0);
        let p = random_problem(&mut rng, 5, 7, 1e6);
        let t = solve_entropic_ot(&p, 1e-10, 1000).unwrap();
        assert!(l1(&t.plan, &outer(p.row_marginal(), p.col_marginal())) < 1e-4);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let c = Matrix::zeros(2, 2);
        assert!(OtProblem::uniform(c.clone(), 0.0).is_err());
        assert!(OtProblem::uniform(c.clone(), -1.0).is_err());
        assert!(OtProblem::new(c.clone(), vec![0.5, 0.6], vec![0.5, 0.5], 1.0).is_err());
        assert!(OtProblem::new(c, vec![1.0], vec![0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn non_convergence_reports_violation() {
        let mut rng = SeededRng::new(9, 0);
        let p = random_problem(&mut rng, 6, 6, 0.01);
        match solve_entropic_ot(&p, 1e-14, 1) {
            Err(Error::NotConverged { iterations: 1, violation }) => assert!(violation > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_mass_rows_stay_empty() {
        let cost = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        let p = OtProblem::new(cost, vec![0.5, 0.5, 0.0], vec![0.5, 0.5], 0.2).unwrap();
        let t = solve_entropic_ot(&p, 1e-9, 1000).unwrap();
        assert_eq!(t.plan.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn softmin_examples() {
        let protos = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let q = [0.0, 0.0];
        assert!((softmin_cost(&q, &protos, 0.7).unwrap() - 5.0).abs() < 1e-12);

        let protos = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap();
        let hard = 1.0;
        assert!((softmin_cost(&q, &protos, 1e-8).unwrap() - hard).abs() < 1e-6);

        let protos = Matrix::from_rows(&[[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [-50.0, 0.0]]).unwrap();
        let eps = 2.0;
        let v = softmin_cost(&q, &protos, eps).unwrap();
        assert!(v <= 0.0 && v >= -eps * 4f64.ln());

        assert!(softmin_cost(&q, &Matrix::zeros(0, 2), 1.0).is_err());
        assert!(softmin_cost(&q, &Matrix::zeros(1, 3), 1.0).is_err());
    }

    #[test]
    fn cost_matrix_examples() {
        let supports = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let base = vec![Matrix::from_rows(&[[1.0, 1.0], [2.0, 0.0]]).unwrap()];
        let c = build_cost_matrix(&supports, &base, 0.5).unwrap();
        assert_eq!((c.rows(), c.cols()), (1, 1));
        assert_eq!(c[(0, 0)], softmin_cost(supports.row(0), &base[0], 0.5).unwrap());

        // Supports sit on one prototype of each class: the hard-min row minimum
        // is at the matching column.
        let base: Vec<Matrix> = (0..3)
            .map(|b| Matrix::from_rows(&[[5.0 * b as f64, 0.0], [5.0 * b as f64, 1.0]]).unwrap())
            .collect();
        let supports = Matrix::from_rows(&[[10.0, 1.0], [0.0, 0.0], [5.0, 1.0]]).unwrap();
        let c = build_cost_matrix(&supports, &base, 1e-8).unwrap();
        let matching = [1, 2, 0];
        for b in 0..3 {
            let row = c.row(b);
            let argmin = (0..3).min_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(argmin, matching[b]);
        }

        // Permuting supports permutes columns.
        let perm = [2, 0, 1];
        let cp = build_cost_matrix(&supports.select_rows(&perm), &base, 0.3).unwrap();
        let c0 = build_cost_matrix(&supports, &base, 0.3).unwrap();
        for b in 0..3 {
            for (j, &pj) in perm.iter().enumerate() {
                assert_eq!(cp[(b, j)], c0[(b, pj)]);
            }
        }

        assert!(build_cost_matrix(&supports, &[Matrix::zeros(1, 3)], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plans_feasible_and_nonnegative(nb in 1usize..=30, nn in 1usize..=30, eps in 0.05f64..5.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed, 0);
            let p = random_problem(&mut rng, nb, nn, eps);
            let t = solve_entropic_ot(&p, 1e-6, 1000).unwrap();
            prop_assert!(t.plan.as_slice().iter().all(|v| *v >= 0.0));
            prop_assert!(t.marginal_violation <= 1e-6);
        }

        #[test]
        fn shift_invariance(nb in 1usize..=12, nn in 1usize..=12, eps in 0.05f64..5.0, shift in -10.0f64..10.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed, 1);
            let p = random_problem(&mut rng, nb, nn, eps);
            let shifted = p.cost().as_slice().iter().map(|c| c + shift).collect();
            let q = OtProblem::new(
                Matrix::new(nb, nn, shifted).unwrap(),
                p.row_marginal().to_vec(),
                p.col_marginal().to_vec(),
                eps,
            ).unwrap();
            let a = solve_entropic_ot(&p, 1e-12, 20_000).unwrap();
            let b = solve_entropic_ot(&q, 1e-12, 20_000).unwrap();
            prop_assert!(l1(&a.plan, &b.plan) <= 1e-8);
        }

        #[test]
        fn objective_self_consistent(nb in 2usize..=15, nn in 2usize..=15, eps in 0.05f64..5.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed, 2);
            let p = random_problem(&mut rng, nb, nn, eps);
            let t = solve_entropic_ot(&p, 1e-9, 1000).unwrap();
            let (long, _) = iterate(&p, 0.0, 10 * t.iterations_used);
            let o1 = t.primal_objective(p.cost(), eps);
            let o2 = long.primal_objective(p.cost(), eps);
            prop_assert!((o1 - o2).abs() <= 1e-6);
        }

        #[test]
        fn softmin_below_hard_min(m in 1usize..10, eps in 0.01f64..10.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed, 3);
            let protos = Matrix::from_fn(m, 3, |_, _| 4.0 * rng.uniform() - 2.0);
            let q: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
            let hard = protos.row_iter().map(|p| sq_dist(&q, p)).fold(f64::INFINITY, f64::min);
            prop_assert!(softmin_cost(&q, &protos, eps).unwrap() <= hard + 1e-12);
        }
    }
}
