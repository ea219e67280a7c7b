//! Per-sample losses and their gradients in the flat parameter layout of
//! [`LinearHead::params`].

use crate::dro::{posterior_mean, solve_dual_with_scores, tilt_log_weights, DroConfig};
use crate::numkit::{lse_unchecked, Matrix};
use crate::priors::MixturePrior;
use crate::{par, Error, Result};

use super::head::{param_offsets, LinearHead};

/// Softmax cross-entropy over (robust) logits.
///
/// Returns `−V_{c*} + log Σ_c exp V_c` and its gradient `softmax(V) − e_{c*}`.
pub fn ce_over_robust_logits(v: &[f64], true_class: usize) -> (f64, Vec<f64>) {
    let lse = lse_unchecked(v);
    let mut grad: Vec<f64> = v.iter().map(|x| (x - lse).exp()).collect();
    grad[true_class] -= 1.0;
    (lse - v[true_class], grad)
}

/// Huber loss of residual `r` and its derivative in `r`:
/// `r²/(2β)` for `|r| < β`, else `|r| − β/2`.
pub fn huber(r: f64, beta: f64) -> (f64, f64) {
    if r.abs() < beta {
        (0.5 * r * r / beta, r / beta)
    } else {
        (r.abs() - 0.5 * beta, r.signum())
    }
}

/// Anything the training loop can minimize by minibatches.
pub trait Objective: Sync {
    /// Per-step state derived from the current head (e.g. atom scores).
    type Cache: Sync;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn prepare(&self, head: &LinearHead) -> Result<Self::Cache>;

    /// Loss of sample `i` and its gradient.
    fn loss_grad(&self, head: &LinearHead, cache: &Self::Cache, i: usize) -> Result<(f64, Vec<f64>)>;
}

/// Mean loss and gradient over `idx`, reduced in index order.
pub fn batch_loss_grad<O: Objective>(obj: &O, head: &LinearHead, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
    let cache = obj.prepare(head)?;
    let parts = par::try_map(idx.len(), |k| obj.loss_grad(head, &cache, idx[k]))?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; head.num_params()];
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = idx.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean loss and gradient over every sample.
pub fn full_loss_grad<O: Objective>(obj: &O, head: &LinearHead) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..obj.len()).collect();
    batch_loss_grad(obj, head, &idx)
}

/// Supervision signal of a plain objective.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Classes(&'a [usize]),
    Values { z: &'a [f64], huber_beta: f64 },
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Classes(c) => c.len(),
            Target::Values { z, .. } => z.len(),
        }
    }
}

/// Loss of a linear head at one input; adds `scale · ∇` into `grad`.
fn point_loss(head: &LinearHead, target: Target<'_>, i: usize, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let (k, d) = (head.outputs(), head.dim());
    match target {
        Target::Classes(labels) => {
            let (loss, g) = ce_over_robust_logits(&head.logits(x), labels[i]);
            for (c, gc) in g.iter().enumerate() {
                let (w, b) = param_offsets(k, d, c);
                for (p, xv) in grad[w..w + d].iter_mut().zip(x) {
                    *p += scale * gc * xv;
                }
                grad[b] += scale * gc;
            }
            loss
        }
        Target::Values { z, huber_beta } => {
            let (loss, dr) = huber(z[i] - head.predict_value(x), huber_beta);
            let (w, b) = param_offsets(k, d, 0);
            for (p, xv) in grad[w..w + d].iter_mut().zip(x) {
                *p -= scale * dr * xv;
            }
            grad[b] -= scale * dr;
            loss
        }
    }
}

/// Cross-entropy or Huber on fixed inputs, optionally averaged over `M`
/// additive perturbations per sample.
pub struct Supervised<'a> {
    pub x: &'a Matrix,
    pub target: Target<'a>,
    /// One `n × d` noise matrix per draw; empty means no augmentation.
    pub noise: &'a [Matrix],
}

impl<'a> Supervised<'a> {
    pub fn new(x: &'a Matrix, target: Target<'a>) -> Result<Self> {
        Self::with_noise(x, target, &[])
    }

    pub fn with_noise(x: &'a Matrix, target: Target<'a>, noise: &'a [Matrix]) -> Result<Self> {
        if x.rows() != target.len() {
            return Err(Error::dim(format!("{} inputs with {} targets", x.rows(), target.len())));
        }
        if let Some(m) = noise.iter().find(|m| m.rows() != x.rows() || m.cols() != x.cols()) {
            return Err(Error::dim(format!(
                "noise draw {}x{} for {}x{} inputs",
                m.rows(),
                m.cols(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(Supervised { x, target, noise })
    }
}

impl Objective for Supervised<'_> {
    type Cache = ();

    fn len(&self) -> usize {
        self.x.rows()
    }

    fn prepare(&self, _: &LinearHead) -> Result<()> {
        Ok(())
    }

    fn loss_grad(&self, head: &LinearHead, _: &(), i: usize) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; head.num_params()];
        let x = self.x.row(i);
        if self.noise.is_empty() {
            let loss = point_loss(head, self.target, i, x, 1.0, &mut grad);
            return Ok((loss, grad));
        }
        let s = 1.0 / self.noise.len() as f64;
        let mut loss = 0.0;
        let mut xp = vec![0.0; x.len()];
        for eta in self.noise {
            for ((p, a), e) in xp.iter_mut().zip(x).zip(eta.row(i)) {
                *p = a + e;
            }
            loss += s * point_loss(head, self.target, i, &xp, s, &mut grad);
        }
        Ok((loss, grad))
    }
}

/// Tilt log weights of every prior at every row of `x`, indexed `[i][c]`.
pub fn precompute_tilts(x: &Matrix, priors: &[MixturePrior], epsilon: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    par::try_map(x.rows(), |i| {
        priors
            .iter()
            .map(|p| tilt_log_weights(&p.atoms, &p.atom_log_weights, x.row(i), epsilon))
            .collect()
    })
}

/// Cross-entropy over robust logits `V_c(x)`.
pub struct RobustCe<'a> {
    pub priors: &'a [MixturePrior],
    pub labels: &'a [usize],
    /// From [`precompute_tilts`]; the tilt does not depend on the head.
    pub tilts: Vec<Vec<Vec<f64>>>,
    pub dro: DroConfig,
}

impl<'a> RobustCe<'a> {
    pub fn new(x: &Matrix, labels: &'a [usize], priors: &'a [MixturePrior], dro: &DroConfig) -> Result<Self> {
        dro.validate()?;
        if x.rows() != labels.len() {
            return Err(Error::dim(format!("{} inputs with {} labels", x.rows(), labels.len())));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= priors.len()) {
            return Err(Error::invalid(format!("label {c} has no prior ({} priors)", priors.len())));
        }
        Ok(RobustCe {
            priors,
            labels,
            tilts: precompute_tilts(x, priors, dro.epsilon)?,
            dro: dro.clone(),
        })
    }

    /// Robust logits of sample `i` and the posterior mean atom per class.
    pub fn logits(&self, scores: &[Vec<f64>], i: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut v = Vec::with_capacity(self.priors.len());
        let mut means = Vec::with_capacity(self.priors.len());
        for (c, prior) in self.priors.iter().enumerate() {
            let r = solve_dual_with_scores(&self.tilts[i][c], &scores[c], &self.dro).map_err(|e| e.in_class(c))?;
            v.push(r.value);
            means.push(posterior_mean(&r.posterior, &prior.atoms));
        }
        Ok((v, means))
    }
}

impl Objective for RobustCe<'_> {
    /// Atom scores per class.
    type Cache = Vec<Vec<f64>>;

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn prepare(&self, head: &LinearHead) -> Result<Vec<Vec<f64>>> {
        if head.outputs() != self.priors.len() {
            return Err(Error::dim(format!("{} outputs for {} priors", head.outputs(), self.priors.len())));
        }
        Ok(self.priors.iter().enumerate().map(|(c, p)| head.scores(c, &p.atoms)).collect())
    }

    fn loss_grad(&self, head: &LinearHead, cache: &Vec<Vec<f64>>, i: usize) -> Result<(f64, Vec<f64>)> {
        let (v, means) = self.logits(cache, i)?;
        let (loss, g) = ce_over_robust_logits(&v, self.labels[i]);
        let (k, d) = (head.outputs(), head.dim());
        let mut grad = vec![0.0; head.num_params()];
        for (c, gc) in g.iter().enumerate() {
            let (w, b) = param_offsets(k, d, c);
            for (p, m) in grad[w..w + d].iter_mut().zip(&means[c]) {
                *p = gc * m;
            }
            grad[b] = *gc;
        }
        Ok((loss, grad))
    }
}

/// Huber regression plus the prior penalty
/// `w · T · log E_{y∼Q(x)} exp(Huber(z − f(y))/T)`, where `Q(x)` is the Gibbs
/// tilt of the prior of the sample's latent class.
pub struct RobustHuber<'a> {
    pub x: &'a Matrix,
    pub z: &'a [f64],
    pub classes: &'a [usize],
    pub priors: &'a [MixturePrior],
    /// `tilts[i]` is over the atoms of `priors[classes[i]]`.
    pub tilts: Vec<Vec<f64>>,
    pub huber_beta: f64,
    pub weight: f64,
    pub temperature: f64,
}

impl<'a> RobustHuber<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &'a Matrix,
        z: &'a [f64],
        classes: &'a [usize],
        priors: &'a [MixturePrior],
        epsilon: f64,
        huber_beta: f64,
        weight: f64,
        temperature: f64,
    ) -> Result<Self> {
        if x.rows() != z.len() || z.len() != classes.len() {
            return Err(Error::dim(format!(
                "{} inputs, {} responses, {} classes",
                x.rows(),
                z.len(),
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= priors.len()) {
            return Err(Error::invalid(format!("latent class {c} has no prior")));
        }
        if !(temperature > 0.0) || !(weight >= 0.0) || !(huber_beta > 0.0) {
            return Err(Error::invalid("penalty temperature and Huber beta must be positive, weight nonnegative"));
        }
        let tilts = par::try_map(x.rows(), |i| {
            let p = &priors[classes[i]];
            tilt_log_weights(&p.atoms, &p.atom_log_weights, x.row(i), epsilon)
        })?;
        Ok(RobustHuber {
            x,
            z,
            classes,
            priors,
            tilts,
            huber_beta,
            weight,
            temperature,
        })
    }
}

impl Objective for RobustHuber<'_> {
    /// Predictions at the atoms of every prior.
    type Cache = Vec<Vec<f64>>;

    fn len(&self) -> usize {
        self.z.len()
    }

    fn prepare(&self, head: &LinearHead) -> Result<Vec<Vec<f64>>> {
        Ok(self.priors.iter().map(|p| head.scores(0, &p.atoms)).collect())
    }

    fn loss_grad(&self, head: &LinearHead, cache: &Vec<Vec<f64>>, i: usize) -> Result<(f64, Vec<f64>)> {
        let d = head.dim();
        let x = self.x.row(i);
        let zi = self.z[i];
        let (mut loss, dr) = huber(zi - head.predict_value(x), self.huber_beta);
        let mut grad = vec![0.0; head.num_params()];
        for (p, xv) in grad[..d].iter_mut().zip(x) {
            *p = -dr * xv;
        }
        grad[d] = -dr;
        if self.weight == 0.0 {
            return Ok((loss, grad));
        }

        let c = self.classes[i];
        let atoms = &self.priors[c].atoms;
        let t = self.temperature;
        let mut derivs = Vec::with_capacity(atoms.rows());
        let mut logits: Vec<f64> = self.tilts[i]
            .iter()
            .zip(&cache[c])
            .map(|(lw, fy)| {
                let (h, dh) = huber(zi - fy, self.huber_beta);
                derivs.push(dh);
                lw + h / t
            })
            .collect();
        let lse = lse_unchecked(&logits);
        if !lse.is_finite() {
            return Err(Error::NonFinite(format!("prior penalty of sample {i}")));
        }
        loss += self.weight * t * lse;
        for l in logits.iter_mut() {
            *l = (*l - lse).exp();
        }
        for ((pi, dh), y) in logits.iter().zip(&derivs).zip(atoms.row_iter()) {
            if *pi > 0.0 {
                let s = -self.weight * pi * dh;
                for (p, yv) in grad[..d].iter_mut().zip(y) {
                    *p += s * yv;
                }
                grad[d] += s;
            }
        }
        Ok((loss, grad))
    }
}
