//! Exact finite-horizon laws of the population size under P and Q, computed
//! by iterated convolution, and exact checks of the measure-change identities:
//!
//! * `Q(X_n = j) = (j / m^n) P(X_n = j)` — the reweighting that defines Q on
//!   generation-`n` events, cross-checked against an independent spine-recursion
//!   route ([`check_change_of_measure`]);
//! * `Q[1/Z_n] = P(X_n > 0)` — the survival identity ([`exact_q_inverse_z`],
//!   asserted against the pgf route);
//! * `Q[1/Z_{n+s} | X_n = k] = (m^n / k) P(X_s > 0 from k ancestors)` — the
//!   conditional supermartingale formula ([`check_supermartingale_identity`]).
//!
//! "Exact" means closed-form double precision, not symbolic: atoms below
//! 1e-16 are pruned, the pruned mass is tracked, and a law whose pruned mass
//! exceeds 1e-12 is refused rather than reported.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::offspring::{OffspringDistribution, SizeBiasedDistribution};

/// Deepest generation the convolution oracle will compute.
pub const EXACT_MAX_N: u32 = 8;

/// Largest projected support the oracle will accept.
pub const EXACT_MAX_SUPPORT: u64 = 1_000_000;

/// Identity-check tolerance (supermartingale formula, `Q[1/Z]` vs pgf).
pub const IDENTITY_TOL: f64 = 1e-10;

/// Atom-by-atom tolerance for the change-of-measure check.
pub const MEASURE_TOL: f64 = 1e-12;

/// Exact-law masses must sum to 1 within this.
pub const LAW_SUM_TOL: f64 = 1e-10;

/// Relative tolerance of the internal mean check `E[X_n] = ancestors * m^n`.
pub const MEAN_REL_TOL: f64 = 1e-9;

const PRUNE_ATOM_TOL: f64 = 1e-16;
const PRUNE_MASS_BUDGET: f64 = 1e-12;

/// Exact finite probability law of a generation size.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLaw {
    atoms: BTreeMap<u64, f64>,
}

impl ExactLaw {
    fn from_dense(dense: &[f64]) -> Self {
        let atoms = dense
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(j, &p)| (j as u64, p))
            .collect();
        Self { atoms }
    }

    /// `(j, P(X = j))` pairs in increasing `j`.
    pub fn atoms(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.atoms.iter().map(|(&j, &p)| (j, p))
    }

    pub fn prob(&self, j: u64) -> f64 {
        self.atoms.get(&j).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.atoms.values().copied())
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.atoms.iter().map(|(&j, &p)| j as f64 * p))
    }
}

fn check_support(dist: &OffspringDistribution, n: u32, ancestors: u64) -> Result<()> {
    if n > EXACT_MAX_N {
        return Err(Error::SupportExplosion {
            n,
            limit: EXACT_MAX_SUPPORT,
        });
    }
    let projected =
        u128::from(ancestors) * u128::from(dist.max_offspring().max(1)).pow(n) + 1;
    if projected > u128::from(EXACT_MAX_SUPPORT) {
        return Err(Error::SupportExplosion {
            n,
            limit: EXACT_MAX_SUPPORT,
        });
    }
    Ok(())
}

/// Convolves a dense law with the offspring pmf; atoms falling below the
/// pruning floor are zeroed and their mass is accounted to `pruned`.
fn convolve_with_pmf(
    dense: &[f64],
    pmf: &[(u32, f64)],
    pruned: &mut CompensatedSum,
) -> Vec<f64> {
    let max_k = pmf.last().map_or(0, |&(k, _)| k) as usize;
    let mut out = vec![0.0; dense.len() + max_k];
    for (i, &w) in dense.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &(k, p) in pmf {
            out[i + k as usize] += w * p;
        }
    }
    for v in out.iter_mut() {
        if *v != 0.0 && *v < PRUNE_ATOM_TOL {
            pruned.add(*v);
            *v = 0.0;
        }
    }
    out
}

/// One generation forward under P: mixture over the current size `k` of the
/// `k`-fold convolution of the offspring pmf, built incrementally in `k`.
fn next_generation_p(
    dist: &OffspringDistribution,
    law: &[f64],
    pruned: &mut CompensatedSum,
) -> Vec<f64> {
    let kmax = law.iter().rposition(|&w| w != 0.0).unwrap_or(0);
    let max_k = dist.max_offspring() as usize;
    let mut out = vec![0.0; kmax * max_k + 1];
    let mut conv = vec![1.0]; // zero ancestors: point mass at 0
    for (k, &w) in law.iter().enumerate().take(kmax + 1) {
        if k > 0 {
            conv = convolve_with_pmf(&conv, dist.pmf(), pruned);
        }
        if w == 0.0 {
            continue;
        }
        for (j, &c) in conv.iter().enumerate() {
            if c != 0.0 {
                out[j] += w * c;
            }
        }
    }
    out
}

/// One generation forward under Q in the spine decomposition: the spine
/// reproduces by the size-biased law, the other `k - 1` individuals by the
/// original pmf.
fn next_generation_spine(
    dist: &OffspringDistribution,
    size_biased: &SizeBiasedDistribution,
    law: &[f64],
    pruned: &mut CompensatedSum,
) -> Vec<f64> {
    let kmax = law.iter().rposition(|&w| w != 0.0).unwrap_or(0);
    debug_assert!(kmax >= 1, "Q-law has no mass on positive sizes");
    let max_k = dist.max_offspring() as usize;
    let sb_max = size_biased.pmf().last().map_or(1, |&(k, _)| k) as usize;
    let mut out = vec![0.0; (kmax - 1) * max_k + sb_max + 1];
    let mut conv = vec![1.0]; // ordinary individuals' convolution, k - 1 = 0
    for (k, &w) in law.iter().enumerate().take(kmax + 1).skip(1) {
        if k > 1 {
            conv = convolve_with_pmf(&conv, dist.pmf(), pruned);
        }
        if w == 0.0 {
            continue;
        }
        for (j, &c) in conv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &(kb, pb) in size_biased.pmf() {
                out[j + kb as usize] += w * c * pb;
            }
        }
    }
    out
}

/// Exact law of `X_n` under P started from `ancestors` individuals.
pub fn exact_law_p(dist: &OffspringDistribution, n: u32, ancestors: u64) -> Result<ExactLaw> {
    if ancestors < 1 {
        return Err(Error::Domain("ancestors must be at least 1".into()));
    }
    check_support(dist, n, ancestors)?;
    let mut law = vec![0.0; ancestors as usize + 1];
    law[ancestors as usize] = 1.0;
    let mut pruned = CompensatedSum::new();
    for _ in 0..n {
        law = next_generation_p(dist, &law, &mut pruned);
    }
    if pruned.value() > PRUNE_MASS_BUDGET {
        return Err(Error::PrunedMass {
            pruned: pruned.value(),
            budget: PRUNE_MASS_BUDGET,
        });
    }
    let exact = ExactLaw::from_dense(&law);
    let expected_mean = ancestors as f64 * dist.mean().powi(n as i32);
    let mean = exact.mean();
    assert!(
        (mean - expected_mean).abs() <= MEAN_REL_TOL * expected_mean.max(1.0),
        "exact law mean {mean} deviates from {expected_mean} beyond relative {MEAN_REL_TOL:e}"
    );
    Ok(exact)
}

/// Exact law of `X_n` under Q, by reweighting: `Q(X_n = j) = (j / m^n) P(X_n = j)`.
/// Never puts mass at 0; its total mass being 1 is exactly `E_P[Z_n] = 1`.
pub fn exact_law_q(dist: &OffspringDistribution, n: u32) -> Result<ExactLaw> {
    let p_law = exact_law_p(dist, n, 1)?;
    let m_n = dist.mean().powi(n as i32);
    let atoms: BTreeMap<u64, f64> = p_law
        .atoms()
        .filter(|&(j, _)| j > 0)
        .map(|(j, p)| (j, j as f64 / m_n * p))
        .collect();
    let law = ExactLaw { atoms };
    let total = law.total_mass();
    assert!(
        (total - 1.0).abs() <= LAW_SUM_TOL,
        "Q-law mass is {total}; E_P[Z_n] = 1 violated beyond {LAW_SUM_TOL:e}"
    );
    Ok(law)
}

/// `Q[1/Z_n]` computed from the exact Q-law as `sum_j (m^n / j) Q(X_n = j)`.
/// Asserted to match the pgf route `P(X_n > 0)` within [`IDENTITY_TOL`].
pub fn exact_q_inverse_z(dist: &OffspringDistribution, n: u32) -> Result<f64> {
    let q_law = exact_law_q(dist, n)?;
    let m_n = dist.mean().powi(n as i32);
    let value = compensated_sum(q_law.atoms().map(|(j, q)| m_n / j as f64 * q));
    let survival = dist.survival_after_n(n);
    assert!(
        (value - survival).abs() <= IDENTITY_TOL,
        "Q[1/Z_{n}] = {value} but P(X_{n} > 0) = {survival}; identity broken beyond {IDENTITY_TOL:e}"
    );
    Ok(value)
}

/// `Q[1/Z_{n+s} | X_n = k]` per atom `k`, assembled literally from the exact
/// joint Q-law via the Markov factorization
/// `Q(X_n = k, X_{n+s} = j) = (j / m^{n+s}) P(X_n = k) P(X_s = j | k ancestors)`.
pub fn conditional_q_inverse_z(
    dist: &OffspringDistribution,
    n: u32,
    s: u32,
) -> Result<Vec<(u64, f64)>> {
    if s < 1 {
        return Err(Error::Domain("conditioning step s must be at least 1".into()));
    }
    check_support(dist, n + s, 1)?;
    let p_n = exact_law_p(dist, n, 1)?;
    let m_ns = dist.mean().powi((n + s) as i32);
    let mut out = Vec::new();
    for (k, p_k) in p_n.atoms() {
        if k == 0 {
            continue; // Q puts no mass on extinct states
        }
        let step = exact_law_p(dist, s, k)?;
        let mut marginal = CompensatedSum::new(); // Q(X_n = k) via the joint table
        let mut weighted = CompensatedSum::new(); // E_Q[1/Z_{n+s}; X_n = k]
        for (j, p_j) in step.atoms() {
            if j == 0 {
                continue;
            }
            let joint = (j as f64 / m_ns) * p_k * p_j;
            marginal.add(joint);
            weighted.add(m_ns / j as f64 * joint);
        }
        out.push((k, weighted.value() / marginal.value()));
    }
    Ok(out)
}

/// Verifies the conditional supermartingale formula
/// `Q[1/Z_{n+s} | X_n = k] = (m^n / k)(1 - f^(s)(0)^k)` on every atom of the
/// generation-`n` Q-law, reporting the worst absolute deviation.
pub fn check_supermartingale_identity(
    dist: &OffspringDistribution,
    n: u32,
    s: u32,
) -> Result<IdentityReport> {
    let lhs = conditional_q_inverse_z(dist, n, s)?;
    let m_n = dist.mean().powi(n as i32);
    let f_s_0 = 1.0 - dist.survival_after_n(s);
    let mut max_dev = 0.0_f64;
    for &(k, lhs_k) in &lhs {
        let rhs_k = m_n / k as f64 * (1.0 - f_s_0.powi(k as i32));
        max_dev = max_dev.max((lhs_k - rhs_k).abs());
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("n".to_string(), Value::from(n));
    parameters.insert("s".to_string(), Value::from(s));
    parameters.insert("atoms".to_string(), Value::from(lhs.len()));
    Ok(IdentityReport::new(
        "supermartingale_identity",
        parameters,
        max_dev,
        IDENTITY_TOL,
    ))
}

/// Verifies `Q(X_n = j) = E_P[Z_n; X_n = j]` atom by atom, with the two sides
/// computed by genuinely different routes: the reweighted P-law versus the
/// spine-decomposition Markov recursion.
pub fn check_change_of_measure(dist: &OffspringDistribution, n: u32) -> Result<IdentityReport> {
    let reweighted = exact_law_q(dist, n)?;
    let spine_route = q_law_by_spine_recursion(dist, n)?;
    let mut max_dev: f64 = spine_route.prob(0); // must be exactly 0 under Q
    let support: std::collections::BTreeSet<u64> = reweighted
        .atoms()
        .chain(spine_route.atoms())
        .map(|(j, _)| j)
        .collect();
    for j in support {
        max_dev = max_dev.max((reweighted.prob(j) - spine_route.prob(j)).abs());
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("n".to_string(), Value::from(n));
    parameters.insert(
        "atoms".to_string(),
        Value::from(reweighted.support_size()),
    );
    Ok(IdentityReport::new(
        "change_of_measure",
        parameters,
        max_dev,
        MEASURE_TOL,
    ))
}

/// Exact law of `X_n` under Q via the spine decomposition: from size `k`, the
/// next generation is (size-biased draw) + ((k - 1)-fold pmf convolution).
/// Independent of the reweighting route, so agreement is evidence, not
/// tautology.
fn q_law_by_spine_recursion(dist: &OffspringDistribution, n: u32) -> Result<ExactLaw> {
    check_support(dist, n, 1)?;
    let size_biased = dist.size_bias();
    let mut law = vec![0.0, 1.0];
    let mut pruned = CompensatedSum::new();
    for _ in 0..n {
        law = next_generation_spine(dist, &size_biased, &law, &mut pruned);
    }
    if pruned.value() > PRUNE_MASS_BUDGET {
        return Err(Error::PrunedMass {
            pruned: pruned.value(),
            budget: PRUNE_MASS_BUDGET,
        });
    }
    Ok(ExactLaw::from_dense(&law))
}

/// Result of an exact identity check.
///
/// Serializes to `{check, parameters, max_abs_deviation, tolerance, pass}`.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub check: String,
    pub parameters: BTreeMap<String, Value>,
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    fn new(
        check: &str,
        parameters: BTreeMap<String, Value>,
        max_abs_deviation: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            check: check.to_string(),
            parameters,
            max_abs_deviation,
            tolerance,
            pass: max_abs_deviation <= tolerance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(p: f64) -> OffspringDistribution {
        OffspringDistribution::new(&[(0, 1.0 - p), (2, p)]).unwrap()
    }

    fn mixed() -> OffspringDistribution {
        OffspringDistribution::new(&[(0, 0.25), (1, 0.25), (2, 0.5)]).unwrap()
    }

    #[test]
    fn p_law_one_generation() {
        let law = exact_law_p(&binary(0.6), 1, 1).unwrap();
        assert!((law.prob(0) - 0.4).abs() < 1e-15);
        assert!((law.prob(2) - 0.6).abs() < 1e-15);
        assert_eq!(law.support_size(), 2);
    }

    #[test]
    fn p_law_two_generations() {
        let law = exact_law_p(&binary(0.6), 2, 1).unwrap();
        assert!((law.prob(0) - 0.496).abs() < 1e-14);
        assert!((law.prob(2) - 0.288).abs() < 1e-14);
        assert!((law.prob(4) - 0.216).abs() < 1e-14);
        assert!((law.mean() - 1.44).abs() < 1e-12);
    }

    #[test]
    fn p_law_zero_generations_is_point_mass() {
        let law = exact_law_p(&binary(0.6), 0, 3).unwrap();
        assert_eq!(law.prob(3), 1.0);
        assert_eq!(law.support_size(), 1);
    }

    #[test]
    fn q_law_values() {
        let law = exact_law_q(&binary(0.6), 1).unwrap();
        assert!((law.prob(2) - 1.0).abs() < 1e-14);
        assert_eq!(law.prob(0), 0.0);

        let law2 = exact_law_q(&binary(0.6), 2).unwrap();
        assert!((law2.prob(2) - 0.4).abs() < 1e-14);
        assert!((law2.prob(4) - 0.6).abs() < 1e-14);

        let single = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        let law = exact_law_q(&single, 5).unwrap();
        assert_eq!(law.prob(1), 1.0);
    }

    #[test]
    fn q_inverse_z_values() {
        let d = binary(0.6);
        assert!((exact_q_inverse_z(&d, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((exact_q_inverse_z(&d, 1).unwrap() - 0.6).abs() < 1e-15);
        assert!((exact_q_inverse_z(&d, 2).unwrap() - 0.504).abs() < 1e-14);
    }

    #[test]
    fn q_inverse_z_non_increasing_and_strictly_decreasing_with_extinction() {
        for d in [binary(0.6), binary(0.5), mixed()] {
            let mut prev = exact_q_inverse_z(&d, 0).unwrap();
            for n in 1..=6 {
                let v = exact_q_inverse_z(&d, n).unwrap();
                assert!(v <= prev + 1e-14, "increase at n = {n}");
                prev = v;
            }
            if d.prob(0) > 0.0 {
                assert!(exact_q_inverse_z(&d, 1).unwrap() < 1.0);
            }
        }
        // No extinction: a true Q-martingale, constant at 1.
        let no_death = OffspringDistribution::new(&[(2, 1.0)]).unwrap();
        for n in 0..=6 {
            assert!((exact_q_inverse_z(&no_death, n).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn supermartingale_identity_hand_value() {
        // Atom k = 2 at n = 1, s = 1: both routes give (m/2)(1 - f(0)^2) = 0.504.
        let lhs = conditional_q_inverse_z(&binary(0.6), 1, 1).unwrap();
        assert_eq!(lhs.len(), 1);
        let (k, v) = lhs[0];
        assert_eq!(k, 2);
        assert!((v - 0.504).abs() < 1e-13);
    }

    #[test]
    fn supermartingale_identity_passes() {
        for d in [binary(0.6), binary(0.5), mixed()] {
            for n in 1..=2 {
                for s in 1..=2 {
                    let report = check_supermartingale_identity(&d, n, s).unwrap();
                    assert!(
                        report.pass,
                        "failed at n = {n}, s = {s}: {:.3e}",
                        report.max_abs_deviation
                    );
                }
            }
        }
        let single = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        let lhs = conditional_q_inverse_z(&single, 2, 2).unwrap();
        assert_eq!(lhs, vec![(1, 1.0)]);
    }

    #[test]
    fn tower_property() {
        // sum_k Q(X_n = k) Q[1/Z_{n+s} | X_n = k] = Q[1/Z_{n+s}]
        for d in [binary(0.6), mixed()] {
            for (n, s) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
                let q_n = exact_law_q(&d, n).unwrap();
                let lhs = conditional_q_inverse_z(&d, n, s).unwrap();
                let total = compensated_sum(lhs.iter().map(|&(k, v)| q_n.prob(k) * v));
                let direct = exact_q_inverse_z(&d, n + s).unwrap();
                assert!(
                    (total - direct).abs() < 1e-10,
                    "tower property broken at n = {n}, s = {s}: {total} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn change_of_measure_routes_agree() {
        for d in [binary(0.6), binary(0.5), mixed()] {
            for n in 1..=4 {
                let report = check_change_of_measure(&d, n).unwrap();
                assert!(
                    report.pass,
                    "routes disagree at n = {n}: {:.3e}",
                    report.max_abs_deviation
                );
            }
        }
        let single = OffspringDistribution::new(&[(1, 1.0)]).unwrap();
        let report = check_change_of_measure(&single, 3).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_abs_deviation, 0.0);
    }

    #[test]
    fn mean_identity_restated() {
        // sum_j j P(X_n = j) = m^n, the literally checkable form of E_P[Z_n] = 1.
        for d in [binary(0.6), mixed()] {
            for n in 0..=5 {
                let law = exact_law_p(&d, n, 1).unwrap();
                let expected = d.mean().powi(n as i32);
                assert!((law.mean() - expected).abs() <= 1e-9 * expected);
            }
        }
    }

    #[test]
    fn support_refusals() {
        let d = binary(0.6);
        assert!(matches!(
            exact_law_p(&d, 9, 1),
            Err(Error::SupportExplosion { n: 9, .. })
        ));
        let wide = OffspringDistribution::new(&[(64, 1.0)]).unwrap();
        assert!(matches!(
            exact_law_p(&wide, 4, 1),
            Err(Error::SupportExplosion { n: 4, .. })
        ));
        assert!(exact_law_p(&d, 1, 0).is_err());
    }

    #[test]
    fn identity_report_serializes_to_schema() {
        let report = check_change_of_measure(&binary(0.6), 2).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for field in ["check", "parameters", "max_abs_deviation", "tolerance", "pass"] {
            assert!(json.get(field).is_some(), "missing field {field}");
        }
    }
}
