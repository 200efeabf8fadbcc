use crate::error::{Error, Result};

/// Default enumeration cutoff.
pub const DEFAULT_N_MAX: usize = 20;
/// Largest tail mass `pair_distribution` accepts beyond its cutoff.
pub const TRUNCATION_LIMIT: f64 = 1e-10;
/// Tail mass targeted by the engine when it picks its own cutoff.
pub(crate) const ENGINE_TAIL: f64 = 1e-17;
const MAX_CUTOFF: usize = 4096;

/// Finite probability vector over photon number `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberDist {
    probs: Vec<f64>,
}

impl PhotonNumberDist {
    /// Wraps a probability vector; entries must lie in [0, 1] and sum to 1 within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("probs", "empty distribution"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("probs", "entries must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain("probs", format!("sum is {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_unnormalized(mut probs: Vec<f64>) -> Self {
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Self { probs }
    }

    pub fn point_mass(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// E[n (n-1) ... (n-k+1)].
    pub fn factorial_moment(&self, k: u32) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let falling: f64 = (0..k).map(|j| n as f64 - j as f64).product();
                p * falling
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.factorial_moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.factorial_moment(2) + m - m * m
    }

    /// Photon-number g² = E[n(n-1)] / E[n]²; `None` for the vacuum.
    pub fn g2(&self) -> Option<f64> {
        let m = self.mean();
        (m > 0.0).then(|| self.factorial_moment(2) / (m * m))
    }

    /// Distribution of the sum of two independent photon numbers.
    pub fn convolve(&self, other: &PhotonNumberDist) -> PhotonNumberDist {
        let mut out = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, a) in self.probs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.probs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        PhotonNumberDist { probs: out }
    }

    /// Total-variation distance, padding the shorter vector with zeros.
    pub fn total_variation(&self, other: &PhotonNumberDist) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        0.5 * (0..len).map(|n| (self.prob(n) - other.prob(n)).abs()).sum::<f64>()
    }
}

/// log P(n = 0) of a negative binomial with the given mean and mode count
/// (`modes = ∞` is Poisson).
pub(crate) fn ln_vacuum(mean: f64, modes: f64) -> f64 {
    if modes.is_infinite() {
        -mean
    } else {
        -modes * (mean / modes).ln_1p()
    }
}

/// Iterates negative-binomial probabilities p₀, p₁, … for mean `mean` and `modes` modes.
pub(crate) fn negbin_terms(mean: f64, modes: f64) -> impl Iterator<Item = f64> {
    let p0 = ln_vacuum(mean, modes).exp();
    let ratio = if modes.is_infinite() {
        mean
    } else {
        mean / (modes + mean)
    };
    let mut n = 0usize;
    let mut p = p0;
    std::iter::from_fn(move || {
        let current = p;
        let growth = if modes.is_infinite() {
            ratio / (n + 1) as f64
        } else {
            ratio * (modes + n as f64) / (n + 1) as f64
        };
        p *= growth;
        n += 1;
        Some(current)
    })
}

/// Smallest cutoff ≥ `DEFAULT_N_MAX` leaving a tail below `tail`.
pub(crate) fn cutoff_for(mean: f64, modes: f64, tail: f64) -> usize {
    if mean == 0.0 {
        return DEFAULT_N_MAX;
    }
    let mut acc = 0.0;
    for (n, p) in negbin_terms(mean, modes).enumerate().take(MAX_CUTOFF) {
        acc += p;
        if n >= DEFAULT_N_MAX && 1.0 - acc < tail {
            return n;
        }
    }
    MAX_CUTOFF
}

/// Negative-binomial law with real mode count `modes` (∞ = Poisson) truncated at `n_max`.
pub fn negative_binomial(mean: f64, modes: f64, n_max: usize) -> Result<PhotonNumberDist> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::domain("mu", "mean must be finite and >= 0"));
    }
    if !(modes >= 1.0) {
        return Err(Error::domain("K", "mode count must be >= 1"));
    }
    if mean == 0.0 {
        let mut probs = vec![0.0; n_max + 1];
        probs[0] = 1.0;
        return Ok(PhotonNumberDist { probs });
    }
    let probs: Vec<f64> = negbin_terms(mean, modes).take(n_max + 1).collect();
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    if tail > TRUNCATION_LIMIT {
        return Err(Error::Truncation {
            n_max,
            tail,
            limit: TRUNCATION_LIMIT,
        });
    }
    Ok(PhotonNumberDist::from_unnormalized(probs))
}

/// Pair-number law of the source: negative binomial with `k` Schmidt modes.
///
/// `k = 1` is thermal, `k → ∞` approaches Poisson. Variance is μ(1 + μ/K).
pub fn pair_distribution(mu: f64, k: u32, n_max: usize) -> Result<PhotonNumberDist> {
    if k == 0 {
        return Err(Error::domain("K", "mode count must be >= 1"));
    }
    negative_binomial(mu, f64::from(k), n_max)
}

/// Binomial loss channel: each photon survives independently with probability `eta`.
pub fn thin(dist: &PhotonNumberDist, eta: f64) -> Result<PhotonNumberDist> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain("eta", "must lie in [0, 1]"));
    }
    let n_max = dist.n_max();
    let mut out = vec![0.0; n_max + 1];
    // row[m] = C(n, m) η^m (1-η)^(n-m), built up one photon at a time.
    let mut row = vec![0.0; n_max + 1];
    row[0] = 1.0;
    for (n, &p) in dist.probs.iter().enumerate() {
        if n > 0 {
            for m in (1..=n).rev() {
                row[m] = row[m] * (1.0 - eta) + row[m - 1] * eta;
            }
            row[0] *= 1.0 - eta;
        }
        if p != 0.0 {
            for m in 0..=n {
                out[m] += p * row[m];
            }
        }
    }
    Ok(PhotonNumberDist { probs: out })
}
