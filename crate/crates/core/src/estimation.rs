//! Measurement sampling: p̂ = n₀/n_m with n₀ ~ B(n_m, p), optionally through
//! its normal approximation so the cost does not grow with n_m.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Both n_m·p and n_m·(1 − p) must exceed this for `Auto` to go normal.
pub const NORMAL_APPROX_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    ExactBinomial,
    NormalApprox,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPolicy {
    pub n_m: u64,
    pub mode: SamplingMode,
}

impl SamplingPolicy {
    pub fn new(n_m: u64, mode: SamplingMode) -> Result<Self> {
        if n_m == 0 {
            return Err(Error::contract("n_m must be at least 1"));
        }
        Ok(SamplingPolicy { n_m, mode })
    }

    pub fn auto(n_m: u64) -> Result<Self> {
        Self::new(n_m, SamplingMode::Auto)
    }

    /// Whether a draw at probability `p` would use the normal approximation.
    pub fn uses_normal(&self, p: f64) -> bool {
        match self.mode {
            SamplingMode::ExactBinomial => false,
            SamplingMode::NormalApprox => true,
            SamplingMode::Auto => {
                let n = self.n_m as f64;
                n * p > NORMAL_APPROX_THRESHOLD && n * (1.0 - p) > NORMAL_APPROX_THRESHOLD
            }
        }
    }
}

/// Random stream for one task: ChaCha keyed by the master seed, with the
/// task id selecting the stream. Results do not depend on scheduling.
pub fn task_stream(master_seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(task);
    rng
}

/// Child task id for hierarchical tasks (pair → fold, bar → search, ...).
pub fn subtask(parent: u64, child: u64) -> u64 {
    // splitmix64 finaliser over the combined ids
    let mut z = parent
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(child)
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the number of |0⟩ outcomes among `policy.n_m` shots.
pub fn sample_count<R: Rng + ?Sized>(p: f64, policy: &SamplingPolicy, rng: &mut R) -> Result<u64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) || p.is_nan() {
        return Err(Error::contract(format!("probability {p} outside [0, 1]")));
    }
    let p = p.clamp(0.0, 1.0);
    let n = policy.n_m;
    if p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    if policy.uses_normal(p) {
        let nf = n as f64;
        let z: f64 = StandardNormal.sample(rng);
        let draw = (nf * p + (nf * p * (1.0 - p)).sqrt() * z).round();
        Ok(draw.clamp(0.0, nf) as u64)
    } else {
        let dist = Binomial::new(n, p).map_err(|e| Error::contract(e.to_string()))?;
        Ok(dist.sample(rng))
    }
}

/// p̂ = n₀ / n_m
pub fn sample_p_hat<R: Rng + ?Sized>(p: f64, policy: &SamplingPolicy, rng: &mut R) -> Result<f64> {
    Ok(sample_count(p, policy, rng)? as f64 / policy.n_m as f64)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}
