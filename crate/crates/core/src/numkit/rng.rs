use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::{Error, Result};

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Identical pairs yield bit-identical sequences. Parallel work derives
/// independent children with [`SeededRng::derive`] instead of sharing one
/// generator.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by this stream's identity and `tag`. Does not
    /// consume any draws from `self`.
    pub fn derive(&self, tag: u64) -> SeededRng {
        let base = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d_4c95_7f2d)));
        SeededRng::new(base, tag)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(format!("gamma({shape}): {e}")))?;
        Ok(g.sample(self))
    }

    /// Symmetric Dirichlet draw of dimension `k`, via normalized gammas.
    pub fn dirichlet(&mut self, k: usize, concentration: f64) -> Result<Vec<f64>> {
        if k == 0 || !(concentration > 0.0) {
            return Err(Error::invalid(format!(
                "dirichlet needs k >= 1 and concentration > 0 (got {k}, {concentration})"
            )));
        }
        loop {
            let g: Vec<f64> = (0..k).map(|_| self.gamma(concentration)).collect::<Result<_>>()?;
            let total: f64 = g.iter().sum();
            // Tiny concentrations can underflow every gamma draw.
            if total > 0.0 && total.is_finite() {
                return Ok(g.into_iter().map(|v| v / total).collect());
            }
        }
    }

    /// Index drawn from a probability vector.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform() * probs.iter().sum::<f64>();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// Counts of `n` categorical draws.
    pub fn multinomial(&mut self, n: usize, probs: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; probs.len()];
        for _ in 0..n {
            counts[self.categorical(probs)] += 1;
        }
        counts
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(self);
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
