use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Matrix, SeededRng};
use crate::{Error, Result};

/// Number of ridge escalations tried after the unregularized attempt.
pub const MAX_RIDGE_ESCALATIONS: usize = 8;

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular factor `L` with `L Lᵀ = m + ridge·I`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    pub factor: Matrix,
    pub ridge: f64,
}

impl Cholesky {
    /// Solves `(m + ridge·I) x = b` by forward and back substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = &self.factor;
        let n = l.rows();
        if b.len() != n {
            return Err(Error::dim(format!("rhs of length {} for a {n}x{n} factor", b.len())));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let s = super::dot(&l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }
}

/// Ridge used to start escalation for a covariance: `1e-8 · trace / d`,
/// falling back to `1e-8` for a zero matrix.
pub fn default_ridge(m: &Matrix) -> f64 {
    let d = m.rows().max(1) as f64;
    let r = 1e-8 * m.trace() / d;
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1e-8
    }
}

/// Cholesky factorization with ridge repair.
///
/// Tries `δ = 0`, then `ridge, 10·ridge, …` for at most
/// [`MAX_RIDGE_ESCALATIONS`] attempts. A non-positive `ridge` disables repair.
pub fn cholesky_psd(m: &Matrix, ridge: f64) -> Result<Cholesky> {
    if !m.is_square() {
        return Err(Error::dim(format!("cholesky of a {}x{} matrix", m.rows(), m.cols())));
    }
    let scale = m.max_abs().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..m.rows() {
        for j in 0..i {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(asym));
    }

    if let Some(l) = try_cholesky(m, 0.0) {
        return Ok(Cholesky { factor: l, ridge: 0.0 });
    }
    let mut delta = ridge;
    if ridge > 0.0 {
        for _ in 0..MAX_RIDGE_ESCALATIONS {
            if let Some(l) = try_cholesky(m, delta) {
                return Ok(Cholesky { factor: l, ridge: delta });
            }
            delta *= 10.0;
        }
        delta /= 10.0;
    }
    Err(Error::NotPsdRepairable {
        attempts: if ridge > 0.0 { MAX_RIDGE_ESCALATIONS } else { 0 },
        last_ridge: delta,
    })
}

fn try_cholesky(m: &Matrix, delta: f64) -> Option<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)] + delta;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            // Symmetrize on the fly using the lower triangle.
            let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// A multivariate normal with its cached (possibly ridged) Cholesky factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub chol: Matrix,
    /// Ridge that was needed to factor `covariance`.
    pub ridge: f64,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        if covariance.rows() != mean.len() || !covariance.is_square() {
            return Err(Error::dim(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                covariance.rows(),
                covariance.cols()
            )));
        }
        let ch = cholesky_psd(&covariance, default_ridge(&covariance))?;
        Ok(GaussianParams {
            mean,
            covariance,
            chol: ch.factor,
            ridge: ch.ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn transform(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let lrow = &self.chol.row(i)[..=i];
            out[i] = self.mean[i] + super::dot(lrow, &z[..=i]);
        }
    }

    /// `n` i.i.d. draws `mean + L z`.
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::invalid("gaussian_sample needs n >= 1"));
        }
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        let mut z = vec![0.0; d];
        for r in 0..n {
            z.iter_mut().for_each(|v| *v = rng.standard_normal());
            self.transform(&z, out.row_mut(r));
        }
        Ok(out)
    }

    /// `n` quasi-random draws: a randomly shifted Halton sequence pushed
    /// through the inverse normal CDF and the Cholesky factor. The first `n`
    /// points of a longer call are identical, so point sets are nested.
    pub fn quasi_sample(&self, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::invalid("quasi_sample needs n >= 1"));
        }
        let d = self.dim();
        let z = shifted_halton_normals(n, d, rng);
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            self.transform(z.row(r), out.row_mut(r));
        }
        Ok(out)
    }
}

impl GaussianParams {
    /// `n` deterministic points: the midpoint product rule on standard
    /// normal quantiles, `n` split into per-axis counts as evenly as its
    /// prime factors allow, pushed through the Cholesky factor.
    pub fn grid_sample(&self, n: usize) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::invalid("grid_sample needs n >= 1"));
        }
        let d = self.dim();
        let sides = grid_sides(n, d);
        let normal = Normal::standard();
        let nodes: Vec<Vec<f64>> = sides
            .iter()
            .map(|&m| (0..m).map(|i| normal.inverse_cdf((i as f64 + 0.5) / m as f64)).collect())
            .collect();
        let mut out = Matrix::zeros(n, d);
        let mut z = vec![0.0; d];
        for r in 0..n {
            let mut rem = r;
            for k in 0..d {
                z[k] = nodes[k][rem % sides[k]];
                rem /= sides[k];
            }
            self.transform(&z, out.row_mut(r));
        }
        Ok(out)
    }
}

/// Per-axis counts with product `n`: prime factors, largest first, each
/// assigned to the axis with the smallest current count.
fn grid_sides(n: usize, d: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut m = n;
    let mut p = 2;
    while p * p <= m {
        while m.is_multiple_of(p) {
            factors.push(p);
            m /= p;
        }
        p += 1;
    }
    if m > 1 {
        factors.push(m);
    }
    let mut sides = vec![1usize; d];
    for f in factors.into_iter().rev() {
        let k = (0..d).min_by_key(|&k| sides[k]).expect("d >= 1");
        sides[k] *= f;
    }
    sides
}

/// Free-function form of [`GaussianParams::sample`].
pub fn gaussian_sample(g: &GaussianParams, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
    g.sample(n, rng)
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes.iter().take_while(|p| *p * *p <= c).all(|p| !c.is_multiple_of(*p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn shifted_halton_normals(n: usize, d: usize, rng: &mut SeededRng) -> Matrix {
    let primes = first_primes(d);
    let shift: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
    let normal = Normal::standard();
    Matrix::from_fn(n, d, |i, k| {
        let u = (radical_inverse(i as u64 + 1, primes[k]) + shift[k]).fract();
        normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
    })
}

/// Givens rotation by `plane_angle_deg` in a uniformly random coordinate
/// plane `(i, j)`, `i < j`, identity elsewhere.
pub fn random_rotation(d: usize, plane_angle_deg: f64, rng: &mut SeededRng) -> Result<Matrix> {
    if d < 2 {
        return Err(Error::invalid(format!("rotation needs d >= 2, got {d}")));
    }
    let a = rng.below(d);
    let mut b = rng.below(d - 1);
    if b >= a {
        b += 1;
    }
    let (i, j) = (a.min(b), a.max(b));
    let theta = plane_angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let mut r = Matrix::identity(d);
    r[(i, i)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    r[(j, j)] = c;
    Ok(r)
}

/// Haar-ish random orthogonal matrix with determinant +1 (Gram-Schmidt on a
/// Gaussian matrix).
pub fn random_orthogonal(d: usize, rng: &mut SeededRng) -> Matrix {
    loop {
        let g = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        let mut q = Matrix::zeros(d, d);
        let mut ok = true;
        for j in 0..d {
            let mut v = g.column(j);
            for k in 0..j {
                let qk = q.column(k);
                let p = super::dot(&v, &qk);
                v.iter_mut().zip(&qk).for_each(|(a, b)| *a -= p * b);
            }
            let nv = super::norm(&v);
            if nv < 1e-10 {
                ok = false;
                break;
            }
            for i in 0..d {
                q[(i, j)] = v[i] / nv;
            }
        }
        if !ok {
            continue;
        }
        if q.determinant().map(|v| v < 0.0).unwrap_or(false) {
            for i in 0..d {
                q[(i, 0)] = -q[(i, 0)];
            }
        }
        return q;
    }
}
