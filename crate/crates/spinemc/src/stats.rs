//! Monte Carlo estimation with stated rigor: means with standard errors and
//! normal-approximation confidence intervals, two-sided identity verdicts,
//! supermartingale trend verdicts, and the uniform-integrability tail profile.
//!
//! The tail profile is a falsification tool: finitely many samples can refute
//! UI-style decay but never prove it, and every emitted verdict says so.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// 95% normal quantile used for confidence intervals.
pub const Z_CI95: f64 = 1.96;

/// Agreement threshold for two-sided comparisons, in combined standard errors.
pub const Z_AGREEMENT: f64 = 3.0;

/// Monte Carlo mean with standard error and a 95% confidence interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Bessel-corrected sample standard deviation over `sqrt(n)`.
    pub stderr: f64,
    pub n_samples: usize,
    /// `mean ± 1.96 stderr`.
    pub ci95: (f64, f64),
}

impl McEstimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }
}

/// Mean, standard error and CI of a sample array. Needs at least 2 samples.
pub fn mc_estimate(samples: &[f64]) -> Result<McEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { need: 2, got: n });
    }
    let mean = compensated_sum(samples.iter().copied()) / n as f64;
    let ss = compensated_sum(samples.iter().map(|&x| (x - mean) * (x - mean)));
    let variance = ss / (n - 1) as f64;
    let stderr = (variance / n as f64).sqrt();
    Ok(McEstimate {
        mean,
        stderr,
        n_samples: n,
        ci95: (mean - Z_CI95 * stderr, mean + Z_CI95 * stderr),
    })
}

/// What an estimate is compared against: an exact value or another estimate.
#[derive(Debug, Clone, Copy)]
pub enum ComparisonTarget {
    Exact(f64),
    Estimate(McEstimate),
}

impl From<f64> for ComparisonTarget {
    fn from(x: f64) -> Self {
        ComparisonTarget::Exact(x)
    }
}

impl From<McEstimate> for ComparisonTarget {
    fn from(e: McEstimate) -> Self {
        ComparisonTarget::Estimate(e)
    }
}

/// Outcome of a two-sided comparison.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoSidedVerdict {
    pub pass: bool,
    pub z_score: f64,
    pub diff: f64,
    pub combined_stderr: f64,
}

/// Passes when `|a.mean - b|` is within 3 combined standard errors; the
/// combined error is `sqrt(se_a^2 + se_b^2)` (zero for an exact target).
pub fn compare_two_sided(a: &McEstimate, b: impl Into<ComparisonTarget>) -> TwoSidedVerdict {
    let (b_mean, b_se) = match b.into() {
        ComparisonTarget::Exact(x) => (x, 0.0),
        ComparisonTarget::Estimate(e) => (e.mean, e.stderr),
    };
    let diff = a.mean - b_mean;
    let combined = (a.stderr * a.stderr + b_se * b_se).sqrt();
    let z_score = if combined > 0.0 {
        diff.abs() / combined
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    TwoSidedVerdict {
        pass: diff.abs() <= Z_AGREEMENT * combined,
        z_score,
        diff,
        combined_stderr: combined,
    }
}

/// Monotonicity verdict for a supermartingale-mean sequence of
/// `(value, stderr)` points. Exact sequences (stderr 0) must be non-increasing
/// outright; Monte Carlo sequences get a one-sided 3-stderr slack.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrendVerdict {
    pub pass: bool,
    /// Largest upward step beyond the allowed slack (0 when passing).
    pub worst_excess: f64,
    pub first_violation: Option<usize>,
}

pub fn supermartingale_trend(points: &[(f64, f64)]) -> TrendVerdict {
    let mut worst_excess = 0.0_f64;
    let mut first_violation = None;
    for (i, pair) in points.windows(2).enumerate() {
        let (prev, se_prev) = pair[0];
        let (next, se_next) = pair[1];
        let slack = Z_AGREEMENT * (se_prev * se_prev + se_next * se_next).sqrt();
        let excess = next - prev - slack;
        if excess > 0.0 {
            if first_violation.is_none() {
                first_violation = Some(i + 1);
            }
            worst_excess = worst_excess.max(excess);
        }
    }
    TrendVerdict {
        pass: first_violation.is_none(),
        worst_excess,
        first_violation,
    }
}

/// A labelled sample family, e.g. draws of `1/Z_n` at one time index.
#[derive(Debug, Clone)]
pub struct UiFamily {
    pub label: String,
    pub samples: Vec<f64>,
}

impl UiFamily {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            samples,
        }
    }
}

/// One profile row: tail expectations `E[V; V > K]` per threshold for one
/// family.
#[derive(Debug, Clone, Serialize)]
pub struct UiTailRow {
    pub label: String,
    pub n_samples: usize,
    pub mean: f64,
    pub tail: Vec<f64>,
}

/// Tail-expectation profile over a collection of sample families, with the
/// per-threshold supremum row and the decay verdict.
#[derive(Debug, Clone, Serialize)]
pub struct UiTailProfile {
    pub thresholds: Vec<f64>,
    pub rows: Vec<UiTailRow>,
    /// Per-threshold supremum of the rows' tail expectations.
    pub sup_tail: Vec<f64>,
    pub decay_tolerance: f64,
    /// True when the supremum row has decayed below tolerance at the largest
    /// threshold. A diagnostic, not a proof.
    pub ui_consistent: bool,
}

impl UiTailProfile {
    pub fn verdict_label(&self) -> &'static str {
        if self.ui_consistent {
            "UI-consistent (diagnostic only: finite samples cannot prove uniform integrability)"
        } else {
            "UI-suspect (tail expectations have not decayed below tolerance)"
        }
    }
}

/// Estimates `E[V; V > K]` per family and threshold and flags whether the
/// supremum row decays below `decay_tolerance` at the largest threshold.
pub fn ui_tail_profile(
    families: &[UiFamily],
    thresholds: &[f64],
    decay_tolerance: f64,
) -> Result<UiTailProfile> {
    if families.is_empty() {
        return Err(Error::Domain("no sample families given".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Domain("no thresholds given".into()));
    }
    for pair in thresholds.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Domain(format!(
                "thresholds must be strictly increasing, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    if !(thresholds[0] > 0.0) {
        return Err(Error::Domain("thresholds must be positive".into()));
    }
    let mut rows = Vec::with_capacity(families.len());
    let mut sup_tail = vec![0.0_f64; thresholds.len()];
    for family in families {
        if family.samples.is_empty() {
            return Err(Error::NotEnoughSamples { need: 1, got: 0 });
        }
        let n = family.samples.len() as f64;
        let mean = compensated_sum(family.samples.iter().copied()) / n;
        let tail: Vec<f64> = thresholds
            .iter()
            .map(|&k| {
                let mut acc = CompensatedSum::new();
                for &v in &family.samples {
                    if v > k {
                        acc.add(v);
                    }
                }
                acc.value() / n
            })
            .collect();
        for (sup, &t) in sup_tail.iter_mut().zip(tail.iter()) {
            *sup = sup.max(t);
        }
        rows.push(UiTailRow {
            label: family.label.clone(),
            n_samples: family.samples.len(),
            mean,
            tail,
        });
    }
    let ui_consistent = *sup_tail.last().unwrap() <= decay_tolerance;
    Ok(UiTailProfile {
        thresholds: thresholds.to_vec(),
        rows,
        sup_tail,
        decay_tolerance,
        ui_consistent,
    })
}
