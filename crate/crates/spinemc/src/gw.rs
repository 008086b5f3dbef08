//! Forward simulation of the Galton–Watson population under the original
//! measure P and under the changed measure Q via the size-biased spine
//! construction, plus extraction of the normalized process `Z_n = X_n / m^n`
//! and of the extinction time.
//!
//! Under Q one distinguished lineage (the spine) reproduces by the size-biased
//! law and is passed to a uniformly chosen child each generation, so the
//! population can never die out; everyone else reproduces by the original law.
//! The simulator realizes Q exactly, which module `oracle` verifies
//! atom-by-atom against the reweighted law.

use rand::Rng;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;
use crate::rng::stream_rng;

/// Hard cap on a single generation's size; growth past this aborts the
/// trajectory with an explicit error rather than silently truncating.
pub const POPULATION_CAP: u64 = 10_000_000;

/// Access to generation sizes shared by plain and spine trajectories;
/// provides the normalized martingale value `Z_n = X_n / m^n`.
pub trait Trajectory {
    /// Generation sizes `X_0..X_N` (index = generation).
    fn sizes(&self) -> &[u64];

    /// Mean of the driving offspring law.
    fn mean_m(&self) -> f64;

    /// Last simulated generation index.
    fn horizon(&self) -> u32 {
        (self.sizes().len() - 1) as u32
    }

    /// `Z_n = X_n / m^n`. Panics if `n` is beyond the horizon.
    fn z_value(&self, n: u32) -> f64 {
        let sizes = self.sizes();
        assert!(
            (n as usize) < sizes.len(),
            "generation {n} beyond horizon {}",
            sizes.len() - 1
        );
        sizes[n as usize] as f64 / self.mean_m().powi(n as i32)
    }
}

/// A population path under P. `X_0 = 1`, and extinction is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct GwTrajectory {
    sizes: Vec<u64>,
    mean_m: f64,
}

impl Trajectory for GwTrajectory {
    fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    fn mean_m(&self) -> f64 {
        self.mean_m
    }
}

impl GwTrajectory {
    /// Builds a trajectory from explicit sizes, enforcing `X_0 = 1` and the
    /// no-rebirth invariant.
    pub fn from_sizes(sizes: Vec<u64>, mean_m: f64) -> Result<Self> {
        if sizes.first() != Some(&1) {
            return Err(Error::Domain("trajectory must start with X_0 = 1".into()));
        }
        if !(mean_m > 0.0) {
            return Err(Error::Domain("mean m must be positive".into()));
        }
        for (n, pair) in sizes.windows(2).enumerate() {
            if pair[0] == 0 && pair[1] != 0 {
                return Err(Error::Domain(format!(
                    "rebirth after extinction at generation {}",
                    n + 1
                )));
            }
        }
        Ok(Self { sizes, mean_m })
    }

    /// First generation with `X_n = 0`, or a censored marker at the horizon.
    pub fn extinction_time(&self) -> ExtinctionTime {
        match self.sizes.iter().position(|&x| x == 0) {
            Some(gen) => ExtinctionTime::Extinct {
                generation: gen as u32,
            },
            None => ExtinctionTime::Censored {
                horizon: self.horizon(),
            },
        }
    }
}

/// A population path under Q. The spine keeps `X_n >= 1` for every `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineTrajectory {
    sizes: Vec<u64>,
    /// Which of the spine's children carried the spine on, per generation.
    spine_children: Vec<u32>,
    mean_m: f64,
}

impl Trajectory for SpineTrajectory {
    fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    fn mean_m(&self) -> f64 {
        self.mean_m
    }
}

impl SpineTrajectory {
    /// Per-generation index of the child that inherited the spine.
    pub fn spine_children(&self) -> &[u32] {
        &self.spine_children
    }
}

/// Extinction time of a trajectory: a hit generation, or censored at the
/// simulation horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtinctionTime {
    Extinct { generation: u32 },
    Censored { horizon: u32 },
}

impl ExtinctionTime {
    pub fn is_extinct(&self) -> bool {
        matches!(self, ExtinctionTime::Extinct { .. })
    }

    /// The extinction generation, if it was observed.
    pub fn generation(&self) -> Option<u32> {
        match *self {
            ExtinctionTime::Extinct { generation } => Some(generation),
            ExtinctionTime::Censored { .. } => None,
        }
    }
}

/// Simulates `X_0..X_horizon` under P: every individual independently draws
/// its offspring count from `dist`. Deterministic in `(dist, horizon, seed)`.
pub fn simulate_p(
    dist: &OffspringDistribution,
    horizon: u32,
    seed: u64,
) -> Result<GwTrajectory> {
    simulate_p_with_rng(dist, horizon, &mut stream_rng(seed, 0))
}

/// As [`simulate_p`] but drawing from a caller-supplied stream; batch runners
/// pass per-trajectory streams split from one master seed.
pub fn simulate_p_with_rng<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    horizon: u32,
    rng: &mut R,
) -> Result<GwTrajectory> {
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let mut sizes = Vec::with_capacity(horizon as usize + 1);
    sizes.push(1u64);
    let mut current = 1u64;
    for gen in 1..=horizon {
        let next = if current == 0 {
            0
        } else {
            let mut next = 0u64;
            for _ in 0..current {
                next += u64::from(dist.sample(rng));
            }
            next
        };
        if next > POPULATION_CAP {
            return Err(Error::PopulationOverflow {
                cap: POPULATION_CAP,
                generation: gen,
            });
        }
        sizes.push(next);
        current = next;
    }
    Ok(GwTrajectory {
        sizes,
        mean_m: dist.mean(),
    })
}

/// Simulates `X_0..X_horizon` under Q by the size-biased spine construction:
/// the spine individual reproduces by the size-biased law and hands the spine
/// to a uniformly chosen child; everyone else reproduces by `dist`.
pub fn simulate_q_spine(
    dist: &OffspringDistribution,
    horizon: u32,
    seed: u64,
) -> Result<SpineTrajectory> {
    simulate_q_spine_with_rng(dist, horizon, &mut stream_rng(seed, 0))
}

/// As [`simulate_q_spine`] with a caller-supplied stream.
pub fn simulate_q_spine_with_rng<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    horizon: u32,
    rng: &mut R,
) -> Result<SpineTrajectory> {
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let size_biased = dist.size_bias();
    let mut sizes = Vec::with_capacity(horizon as usize + 1);
    let mut spine_children = Vec::with_capacity(horizon as usize);
    sizes.push(1u64);
    let mut current = 1u64;
    for gen in 1..=horizon {
        let spine_offspring = size_biased.sample(rng);
        spine_children.push(rng.random_range(0..spine_offspring));
        let mut next = u64::from(spine_offspring);
        for _ in 0..current - 1 {
            next += u64::from(dist.sample(rng));
        }
        if next > POPULATION_CAP {
            return Err(Error::PopulationOverflow {
                cap: POPULATION_CAP,
                generation: gen,
            });
        }
        sizes.push(next);
        current = next;
    }
    Ok(SpineTrajectory {
        sizes,
        spine_children,
        mean_m: dist.mean(),
    })
}
