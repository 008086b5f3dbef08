//! Event-driven branching Brownian motion under P and under the spine measure,
//! the additive martingale, and the pathwise spine bound on `1/Z`.
//!
//! Branching convention: a particle branching at rate `r` is *replaced* by `L`
//! children at its position (so extinction is possible whenever `P(L=0) > 0`),
//! and the additive martingale is normalized by the population growth rate,
//!
//! ```text
//! Z_lambda(t) = sum over particles u alive at t of
//!               exp(-r(m-1)t + lambda X_u(t) - lambda^2 t / 2)
//! ```
//!
//! which makes `E_P[Z_lambda(t)] = 1`; the test suite pins this empirically.
//! Under the spine measure the spine moves with drift `lambda`, branches at
//! rate `r m` with size-biased offspring, and continues in a uniformly chosen
//! child; all other particles follow P-dynamics. The spine term is one summand
//! of `Z_lambda`, which gives the pathwise bound checked by
//! [`spine_bound_check`]:
//!
//! ```text
//! 1/Z_lambda(s) <= exp(max(r(m-1), 0) t) * exp(-lambda(xi_s - lambda s) - lambda^2 s / 2)
//! ```
//!
//! for every `s <= t`, with equality exactly when the spine is alone (and the
//! normalization is neutral).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::offspring::OffspringDistribution;
use crate::rng::stream_rng;

/// Hard cap on simultaneously alive particles.
pub const PARTICLE_CAP: usize = 1_000_000;

/// Cap on `horizon / time_step`.
pub const MAX_GRID_POINTS: usize = 100_000;

/// Slack for the pathwise bound check; covers rounding between the two
/// exponential routes, nothing more.
pub const BOUND_FP_SLACK: f64 = 1e-9;

const GRID_ALIGN_TOL: f64 = 1e-9;

/// Parameters of one branching Brownian motion run.
#[derive(Debug, Clone)]
pub struct BbmParams {
    /// Per-particle branching rate `r`.
    pub branch_rate: f64,
    /// Martingale parameter `lambda`; also the spine drift under the changed
    /// measure.
    pub lambda: f64,
    pub offspring: OffspringDistribution,
    /// Simulation end time `t`.
    pub horizon: f64,
    /// Observation grid spacing; must divide `horizon`.
    pub time_step: f64,
}

impl BbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.branch_rate > 0.0) || !self.branch_rate.is_finite() {
            return Err(Error::Domain(format!(
                "branch rate must be positive and finite, got {}",
                self.branch_rate
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::Domain("lambda must be finite".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Domain(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return Err(Error::Domain(format!(
                "time step must be positive and finite, got {}",
                self.time_step
            )));
        }
        let steps = self.horizon / self.time_step;
        if (steps - steps.round()).abs() > GRID_ALIGN_TOL * steps.max(1.0) {
            return Err(Error::Domain(format!(
                "time step {} does not evenly divide horizon {}",
                self.time_step, self.horizon
            )));
        }
        if steps.round() as usize > MAX_GRID_POINTS {
            return Err(Error::Domain(format!(
                "grid would have {} points, above the {MAX_GRID_POINTS} cap",
                steps.round()
            )));
        }
        Ok(())
    }

    /// Exponential growth rate of the mean population, `r (m - 1)`; this is
    /// the normalization rate of the additive martingale.
    pub fn growth_rate(&self) -> f64 {
        self.branch_rate * (self.offspring.mean() - 1.0)
    }

    /// Observation times `0, dt, 2dt, ..., horizon`.
    pub fn grid(&self) -> Vec<f64> {
        let steps = (self.horizon / self.time_step).round() as usize;
        (0..=steps).map(|i| i as f64 * self.time_step).collect()
    }
}

/// One particle observation on the grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ParticleObs {
    pub id: u64,
    /// Arena id of the parent; `None` for the initial particle.
    pub parent: Option<u64>,
    pub position: f64,
    pub spine: bool,
}

/// A realized path: particle observations and the additive martingale value
/// at every grid time.
#[derive(Debug, Clone)]
pub struct BbmPath {
    times: Vec<f64>,
    observations: Vec<Vec<ParticleObs>>,
    z_values: Vec<f64>,
}

impl BbmPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn observations(&self, idx: usize) -> &[ParticleObs] {
        &self.observations[idx]
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z_values
    }

    pub fn particle_count(&self, idx: usize) -> usize {
        self.observations[idx].len()
    }

    /// Index of grid time `t`, if `t` lies on the grid.
    pub fn grid_index_of(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&g| (g - t).abs() <= GRID_ALIGN_TOL * g.abs().max(1.0))
    }

    /// CSV dump: `time,particle_id,parent_id,position,is_spine`, one row per
    /// particle observation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,particle_id,parent_id,position,is_spine\n");
        for (idx, obs) in self.observations.iter().enumerate() {
            let t = self.times[idx];
            for o in obs {
                let parent = o.parent.map_or(String::new(), |p| p.to_string());
                let _ = writeln!(out, "{t},{},{parent},{},{}", o.id, o.position, o.spine);
            }
        }
        out
    }
}

/// A path simulated under the spine measure; the spine is marked in the
/// observations and is alive at every grid time by construction.
#[derive(Debug, Clone)]
pub struct SpineBbmPath {
    inner: BbmPath,
}

impl SpineBbmPath {
    pub fn path(&self) -> &BbmPath {
        &self.inner
    }

    /// Spine position `xi` at grid index `idx`.
    ///
    /// Panics if the spine marker is missing, which would violate the
    /// construction invariant.
    pub fn spine_position(&self, idx: usize) -> f64 {
        self.inner.observations[idx]
            .iter()
            .find(|o| o.spine)
            .expect("spine must be alive at every grid time")
            .position
    }

    pub fn spine_alive_at_every_time(&self) -> bool {
        self.inner
            .observations
            .iter()
            .all(|obs| obs.iter().filter(|o| o.spine).count() == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BranchEvent {
    time: f64,
    id: usize,
}

impl Eq for BranchEvent {}

impl Ord for BranchEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for BranchEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Particle {
    parent: Option<u64>,
    pos: f64,
    updated_at: f64,
    alive: bool,
    spine: bool,
}

/// Simulates a branching Brownian motion under P. Deterministic in
/// `(params, seed)`.
pub fn simulate_bbm_p(params: &BbmParams, seed: u64) -> Result<BbmPath> {
    simulate_bbm_p_with_rng(params, &mut stream_rng(seed, 0))
}

/// As [`simulate_bbm_p`] with a caller-supplied stream.
pub fn simulate_bbm_p_with_rng<R: Rng + ?Sized>(
    params: &BbmParams,
    rng: &mut R,
) -> Result<BbmPath> {
    simulate(params, rng, false)
}

/// Simulates under the spine measure: the spine diffuses with drift `lambda`,
/// branches at rate `r m` with size-biased offspring, and continues in a
/// uniformly chosen child; everything else follows P-dynamics.
pub fn simulate_bbm_spine(params: &BbmParams, seed: u64) -> Result<SpineBbmPath> {
    simulate_bbm_spine_with_rng(params, &mut stream_rng(seed, 0))
}

/// As [`simulate_bbm_spine`] with a caller-supplied stream.
pub fn simulate_bbm_spine_with_rng<R: Rng + ?Sized>(
    params: &BbmParams,
    rng: &mut R,
) -> Result<SpineBbmPath> {
    Ok(SpineBbmPath {
        inner: simulate(params, rng, true)?,
    })
}

fn simulate<R: Rng + ?Sized>(params: &BbmParams, rng: &mut R, spine_mode: bool) -> Result<BbmPath> {
    params.validate()?;
    let grid = params.grid();
    let dist = &params.offspring;
    let size_biased = dist.size_bias();
    let ordinary_clock = Exp::new(params.branch_rate).expect("validated rate");
    let spine_clock =
        Exp::new(params.branch_rate * dist.mean()).expect("validated rate and mean");

    let mut particles = vec![Particle {
        parent: None,
        pos: 0.0,
        updated_at: 0.0,
        alive: true,
        spine: spine_mode,
    }];
    let mut alive = 1usize;
    let mut events: BinaryHeap<std::cmp::Reverse<BranchEvent>> = BinaryHeap::new();
    let first_clock = if spine_mode { &spine_clock } else { &ordinary_clock };
    events.push(std::cmp::Reverse(BranchEvent {
        time: first_clock.sample(rng),
        id: 0,
    }));

    let mut observations = Vec::with_capacity(grid.len());
    let mut z_values = Vec::with_capacity(grid.len());

    for &g in &grid {
        // Flush branch events up to this grid time, in (time, id) order.
        while let Some(&std::cmp::Reverse(ev)) = events.peek() {
            if ev.time > g {
                break;
            }
            events.pop();
            let (count, parent_pos, parent_spine) = {
                let p = &mut particles[ev.id];
                debug_assert!(p.alive, "branch event for a dead particle");
                advance(p, ev.time, params.lambda, rng);
                p.alive = false;
                let count = if p.spine {
                    size_biased.sample(rng)
                } else {
                    dist.sample(rng)
                };
                (count, p.pos, p.spine)
            };
            alive -= 1;
            // The size-biased law has no mass at zero, so the spine always
            // has a successor.
            let spine_child = if parent_spine {
                Some(rng.random_range(0..count))
            } else {
                None
            };
            if alive + count as usize > PARTICLE_CAP {
                return Err(Error::ParticleOverflow {
                    cap: PARTICLE_CAP,
                    time: ev.time,
                });
            }
            for c in 0..count {
                let child_id = particles.len();
                let is_spine = spine_child == Some(c);
                particles.push(Particle {
                    parent: Some(ev.id as u64),
                    pos: parent_pos,
                    updated_at: ev.time,
                    alive: true,
                    spine: is_spine,
                });
                let clock = if is_spine { &spine_clock } else { &ordinary_clock };
                events.push(std::cmp::Reverse(BranchEvent {
                    time: ev.time + clock.sample(rng),
                    id: child_id,
                }));
                alive += 1;
            }
        }
        // Advance all survivors to the grid time and record them.
        let mut obs = Vec::with_capacity(alive);
        for (id, p) in particles.iter_mut().enumerate() {
            if !p.alive {
                continue;
            }
            advance(p, g, params.lambda, rng);
            obs.push(ParticleObs {
                id: id as u64,
                parent: p.parent,
                position: p.pos,
                spine: p.spine,
            });
        }
        z_values.push(z_sum(obs.iter().map(|o| o.position), g, params));
        observations.push(obs);
    }

    Ok(BbmPath {
        times: grid,
        observations,
        z_values,
    })
}

fn advance<R: Rng + ?Sized>(p: &mut Particle, to: f64, lambda: f64, rng: &mut R) {
    let dt = to - p.updated_at;
    if dt > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        let drift = if p.spine { lambda } else { 0.0 };
        p.pos += drift * dt + dt.sqrt() * z;
        p.updated_at = to;
    }
}

fn z_sum(positions: impl Iterator<Item = f64>, t: f64, params: &BbmParams) -> f64 {
    let norm = -params.growth_rate() * t - params.lambda * params.lambda * t / 2.0;
    let mut acc = CompensatedSum::new();
    for x in positions {
        acc.add((norm + params.lambda * x).exp());
    }
    acc.value()
}

/// `Z_lambda(t)` recomputed from the recorded positions at grid time `t`.
/// Errors if `t` is not on the observation grid.
pub fn additive_martingale(path: &BbmPath, t: f64, params: &BbmParams) -> Result<f64> {
    let idx = path
        .grid_index_of(t)
        .ok_or_else(|| Error::Domain(format!("t = {t} is not on the observation grid")))?;
    Ok(z_sum(
        path.observations(idx).iter().map(|o| o.position),
        path.times[idx],
        params,
    ))
}

/// The spine exponential `exp(-lambda (xi - lambda s) - lambda^2 s / 2)`, a
/// mean-one martingale under the spine measure.
pub fn spine_exponential(params: &BbmParams, xi: f64, s: f64) -> f64 {
    (-params.lambda * (xi - params.lambda * s) - params.lambda * params.lambda * s / 2.0).exp()
}

/// Result of the pathwise bound check on one spine path.
#[derive(Debug, Clone, Serialize)]
pub struct SpineBoundReport {
    pub checked_points: usize,
    pub violations: usize,
    /// Largest attained `1/Z` over-bound ratio; at most 1 when the bound holds.
    pub max_ratio: f64,
    /// The constant `exp(max(r(m-1), 0) t)` in front of the spine martingale.
    pub bound_constant: f64,
    /// Level whose first passage defines the non-deterministic stopping time.
    pub first_passage_level: f64,
    /// First grid time with `xi >= level`, or the horizon if never reached.
    pub stopping_time: f64,
    /// Bound ratio evaluated at the stopping time.
    pub stopping_ratio: f64,
    pub pass: bool,
}

/// Checks `1/Z_lambda(s) <= C(t) exp(-lambda(xi_s - lambda s) - lambda^2 s/2)`
/// at every grid time `s <= t` and at the first-passage stopping time of the
/// spine above `lambda t / 2` (capped at `t`). Expected violations: zero.
pub fn spine_bound_check(spine: &SpineBbmPath, params: &BbmParams) -> SpineBoundReport {
    let path = spine.path();
    let bound_constant = (params.growth_rate().max(0.0) * params.horizon).exp();
    let first_passage_level = params.lambda * params.horizon / 2.0;

    let mut violations = 0usize;
    let mut max_ratio = 0.0_f64;
    let mut stopping_idx = path.times().len() - 1;
    let mut passage_found = false;
    let mut ratios = Vec::with_capacity(path.times().len());

    for (idx, &s) in path.times().iter().enumerate() {
        let xi = spine.spine_position(idx);
        let inv_z = 1.0 / path.z_values()[idx];
        let bound = bound_constant * spine_exponential(params, xi, s);
        let ratio = inv_z / bound;
        ratios.push(ratio);
        if ratio > 1.0 + BOUND_FP_SLACK {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
        if !passage_found && xi >= first_passage_level {
            stopping_idx = idx;
            passage_found = true;
        }
    }

    SpineBoundReport {
        checked_points: path.times().len(),
        violations,
        max_ratio,
        bound_constant,
        first_passage_level,
        stopping_time: path.times()[stopping_idx],
        stopping_ratio: ratios[stopping_idx],
        pass: violations == 0,
    }
}
