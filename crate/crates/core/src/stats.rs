//! Small numeric helpers: deterministic seeding, running statistics and
//! least-squares fits used by the estimator modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Substream seed for (master seed, trajectory index, step index).
///
/// Every Monte Carlo draw is keyed this way, so results do not depend on
/// worker scheduling or the number of threads.
pub fn substream_seed(master: u64, trajectory: u64, step: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ trajectory) ^ step)
}

/// RNG for a single substream.
pub fn rng_for(master: u64, trajectory: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, trajectory, step))
}

/// Welford accumulator for mean and standard error.
#[derive(Debug, Clone, Default)]
pub struct RunningStat {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n as f64 - 1.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean and standard error of a slice, accumulated in index order so the
/// result is bit-identical regardless of how the values were produced.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let mut s = RunningStat::new();
    for &v in values {
        s.push(v);
    }
    (s.mean(), s.std_error())
}

/// Ordinary least squares y = a*x + b; returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (0.0, ys.first().copied().unwrap_or(0.0), 1.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}
