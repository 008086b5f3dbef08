//! Finite-support offspring distributions: generating functions, survival and
//! extinction probabilities, and the size-biasing transform that defines the
//! spine's reproduction law.
//!
//! Everything here is a pure function of immutable inputs; distributions can be
//! shared across threads freely after construction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Largest admissible offspring count. Keeps exact convolution oracles at
/// desk scale.
pub const MAX_OFFSPRING: u32 = 64;

/// Constructor tolerance on `sum(p_k) - 1`. Inputs inside this band are
/// accepted and renormalized; the stored pmf then sums to 1 within 1e-12.
pub const PMF_SUM_TOL: f64 = 1e-9;

const FIXED_POINT_MAX_ITERS: u32 = 1_000_000;

/// A validated finite offspring law `{p_k}` with cached mean `m > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    /// Sorted `(k, p_k)` atoms with `p_k > 0`.
    pmf: Vec<(u32, f64)>,
    /// `m = sum(k * p_k)`, strictly positive.
    mean: f64,
    /// Cumulative masses aligned with `pmf`; last entry is exactly 1.
    cdf: Vec<f64>,
}

impl OffspringDistribution {
    /// Validates and builds an offspring law from `(k, p_k)` entries.
    ///
    /// Rejects empty input, duplicate `k`, `k > 64`, negative probabilities,
    /// masses whose sum is off 1 by more than 1e-9, and zero-mean laws.
    /// Zero-probability entries are dropped; the rest are renormalized.
    pub fn new(entries: &[(u32, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDistribution("empty pmf".into()));
        }
        let mut sorted: Vec<(u32, f64)> = entries.to_vec();
        sorted.sort_by_key(|&(k, _)| k);
        for pair in sorted.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate offspring count k = {}",
                    pair[0].0
                )));
            }
        }
        for &(k, p) in &sorted {
            if k > MAX_OFFSPRING {
                return Err(Error::InvalidDistribution(format!(
                    "offspring count k = {k} exceeds the supported maximum {MAX_OFFSPRING}"
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability of k = {k} is {p}, must be a finite non-negative number"
                )));
            }
        }
        let total = compensated_sum(sorted.iter().map(|&(_, p)| p));
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, outside 1 ± {PMF_SUM_TOL:e}"
            )));
        }
        let mut pmf: Vec<(u32, f64)> = sorted
            .into_iter()
            .filter(|&(_, p)| p > 0.0)
            .map(|(k, p)| (k, p / total))
            .collect();
        // Push the rounding residual into the heaviest atom so the stored
        // masses sum to 1 within 1e-12 regardless of the input's slack.
        let residual = 1.0 - compensated_sum(pmf.iter().map(|&(_, p)| p));
        if let Some(heaviest) = pmf
            .iter_mut()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            heaviest.1 += residual;
        }
        let mean = compensated_sum(pmf.iter().map(|&(k, p)| f64::from(k) * p));
        if mean <= 0.0 {
            return Err(Error::InvalidDistribution(
                "mean offspring number is zero; the normalized process is undefined".into(),
            ));
        }
        let cdf = build_cdf(&pmf);
        Ok(Self { pmf, mean, cdf })
    }

    /// The atoms `(k, p_k)`, sorted by `k`, all with positive mass.
    pub fn pmf(&self) -> &[(u32, f64)] {
        &self.pmf
    }

    /// Mean offspring number `m`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `P(L = k)`.
    pub fn prob(&self, k: u32) -> f64 {
        self.pmf
            .iter()
            .find(|&&(kk, _)| kk == k)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Largest offspring count with positive mass.
    pub fn max_offspring(&self) -> u32 {
        self.pmf.last().map_or(0, |&(k, _)| k)
    }

    /// Probability generating function `f(s) = sum(p_k s^k)` for `s` in [0, 1].
    pub fn pgf_eval(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!(
                "pgf argument s = {s} outside [0, 1]"
            )));
        }
        Ok(self.pgf_unchecked(s))
    }

    fn pgf_unchecked(&self, s: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for &(k, p) in &self.pmf {
            acc.add(p * s.powi(k as i32));
        }
        acc.value().clamp(0.0, 1.0)
    }

    /// `P(X_n > 0) = 1 - f^(n)(0)` for the Galton–Watson process driven by
    /// this law: survival probability through generation `n`.
    pub fn survival_after_n(&self, n: u32) -> f64 {
        let mut s = 0.0;
        for _ in 0..n {
            s = self.pgf_unchecked(s);
        }
        1.0 - s
    }

    /// Extinction probability `q*`: the smallest fixed point of the pgf on
    /// [0, 1], computed by monotone iteration from 0.
    ///
    /// Critical and subcritical laws (other than the deterministic
    /// single-child law) short-circuit to 1 rather than iterating, since the
    /// iteration converges only algebraically at criticality.
    pub fn extinction_probability(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!(
                "extinction tolerance must be positive, got {tol}"
            )));
        }
        if self.prob(1) == 1.0 {
            // f(s) = s: every point is fixed, the smallest is 0.
            return Ok(0.0);
        }
        if self.mean <= 1.0 {
            return Ok(1.0);
        }
        let mut x = 0.0_f64;
        for _ in 0..FIXED_POINT_MAX_ITERS {
            let fx = self.pgf_unchecked(x);
            if (fx - x).abs() <= tol {
                return Ok(fx);
            }
            x = fx;
        }
        Err(Error::NonConvergence {
            max_iters: FIXED_POINT_MAX_ITERS,
            residual: (self.pgf_unchecked(x) - x).abs(),
        })
    }

    /// The size-biased law `p̂_k = k p_k / m`, the spine's reproduction law.
    /// It never has mass at `k = 0`.
    pub fn size_bias(&self) -> SizeBiasedDistribution {
        let mut pmf: Vec<(u32, f64)> = self
            .pmf
            .iter()
            .filter(|&&(k, _)| k >= 1)
            .map(|&(k, p)| (k, f64::from(k) * p / self.mean))
            .collect();
        let residual = 1.0 - compensated_sum(pmf.iter().map(|&(_, p)| p));
        if let Some(heaviest) = pmf.iter_mut().max_by(|a, b| a.1.total_cmp(&b.1)) {
            heaviest.1 += residual;
        }
        let mean = compensated_sum(pmf.iter().map(|&(k, p)| f64::from(k) * p));
        let cdf = build_cdf(&pmf);
        SizeBiasedDistribution { pmf, mean, cdf }
    }

    /// Draws one offspring count. Consumes exactly one `f64` from the stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_cdf(&self.pmf, &self.cdf, rng)
    }
}

/// Size-biased reproduction law `p̂_k = k p_k / m`; mass only on `k >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBiasedDistribution {
    pmf: Vec<(u32, f64)>,
    /// `sum(k p̂_k) = E[L^2] / m` of the source law.
    mean: f64,
    cdf: Vec<f64>,
}

impl SizeBiasedDistribution {
    pub fn pmf(&self) -> &[(u32, f64)] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn prob(&self, k: u32) -> f64 {
        self.pmf
            .iter()
            .find(|&&(kk, _)| kk == k)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Draws one spine offspring count (always >= 1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_cdf(&self.pmf, &self.cdf, rng)
    }
}

fn build_cdf(pmf: &[(u32, f64)]) -> Vec<f64> {
    let mut acc = CompensatedSum::new();
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|&(_, p)| {
            acc.add(p);
            acc.value()
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

fn sample_cdf<R: Rng + ?Sized>(pmf: &[(u32, f64)], cdf: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let idx = cdf.partition_point(|&c| c <= u);
    pmf[idx.min(pmf.len() - 1)].0
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn binary(p: f64) -> OffspringDistribution {
        OffspringDistribution::new(&[(0, 1.0 - p), (2, p)]).unwrap()
    }

    #[test]
    fn binary_law_mean() {
        let d = binary(0.6);
        assert!((d.mean() - 1.2).abs() < 1e-15);
        assert_eq!(d.pmf().len(), 2);
    }

    #[test]
    fn deterministic_single_child_is_valid() {
        let d = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        assert_eq!(d.mean(), 1.0);
    }

    #[test]
    fn rejects_bad_sums_and_negative_mass() {
        assert!(OffspringDistribution::new(&[(0, 0.5), (2, 0.6)]).is_err());
        assert!(OffspringDistribution::new(&[(0, -0.1), (2, 1.1)]).is_err());
        assert!(OffspringDistribution::new(&[]).is_err());
        assert!(OffspringDistribution::new(&[(0, 0.5), (0, 0.5)]).is_err());
        assert!(OffspringDistribution::new(&[(65, 1.0)]).is_err());
        // zero-mean law: all mass at k = 0
        assert!(OffspringDistribution::new(&[(0, 1.0)]).is_err());
    }

    #[test]
    fn pgf_values() {
        let d = binary(0.6);
        assert!((d.pgf_eval(0.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((d.pgf_eval(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.pgf_eval(0.4).unwrap() - 0.496).abs() < 1e-15);
        assert!(d.pgf_eval(-0.1).is_err());
        assert!(d.pgf_eval(1.1).is_err());
    }

    #[test]
    fn survival_probabilities() {
        let d = binary(0.6);
        assert_eq!(d.survival_after_n(0), 1.0);
        assert!((d.survival_after_n(1) - 0.6).abs() < 1e-15);
        assert!((d.survival_after_n(2) - 0.504).abs() < 1e-15);
        let no_death = OffspringDistribution::new(&[(2, 1.0)]).unwrap();
        assert_eq!(no_death.survival_after_n(10), 1.0);
    }

    #[test]
    fn extinction_probability_cases() {
        let d = binary(0.6);
        let q = d.extinction_probability(1e-12).unwrap();
        assert!((q - 2.0 / 3.0).abs() < 1e-10, "q = {q}");
        let no_death = OffspringDistribution::new(&[(2, 1.0)]).unwrap();
        assert_eq!(no_death.extinction_probability(1e-12).unwrap(), 0.0);
        let critical = binary(0.5);
        assert_eq!(critical.extinction_probability(1e-12).unwrap(), 1.0);
        let single = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        assert_eq!(single.extinction_probability(1e-12).unwrap(), 0.0);
        assert!(d.extinction_probability(0.0).is_err());
    }

    #[test]
    fn size_bias_examples() {
        let d = binary(0.6);
        let sb = d.size_bias();
        assert_eq!(sb.pmf(), &[(2, 1.0)]);

        let mixed = OffspringDistribution::new(&[(0, 0.25), (1, 0.25), (2, 0.5)]).unwrap();
        let sb = mixed.size_bias();
        assert!((sb.prob(1) - 0.2).abs() < 1e-12);
        assert!((sb.prob(2) - 0.8).abs() < 1e-12);
        assert_eq!(sb.prob(0), 0.0);
        // mean of the size-biased law is E[L^2] / m
        let second_moment = 0.25 * 1.0 + 0.5 * 4.0;
        assert!((sb.mean() - second_moment / 1.25).abs() < 1e-12);

        let single = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        assert_eq!(single.size_bias().pmf(), &[(1, 1.0)]);
    }

    #[test]
    fn sampling_respects_support() {
        use rand::SeedableRng;
        let d = binary(0.6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut seen0 = false;
        let mut seen2 = false;
        for _ in 0..1000 {
            match d.sample(&mut rng) {
                0 => seen0 = true,
                2 => seen2 = true,
                other => panic!("impossible offspring count {other}"),
            }
        }
        assert!(seen0 && seen2);
    }
}
