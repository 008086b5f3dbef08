//! Experiment configuration: a flat JSON file, re-validated against every
//! module's preconditions at parse time. The master seed is mandatory (from
//! the file or the command line) so no run ever draws silent entropy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bbm::BbmParams;
use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;
use crate::oracle::EXACT_MAX_N;

/// One offspring-law entry in the configuration file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PmfEntry {
    pub k: u32,
    pub p: f64,
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// The JSON report.
    Json,
    /// The `(n, quantity, estimate, stderr, exact)` table.
    Csv,
}

/// Branching-Brownian-motion section of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbmConfig {
    pub branch_rate: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub time_step: f64,
    /// Path count override; defaults to the global sample count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
}

/// The experiment configuration as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Offspring law as `{k, p}` pairs.
    pub offspring: Vec<PmfEntry>,
    /// Discrete horizon (generations) for simulation-backed checks.
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    /// Deepest generation for exact-oracle checks.
    #[serde(default = "default_exact_horizon")]
    pub exact_horizon: u32,
    /// Monte Carlo sample count.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Master seed; mandatory here or via `--seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Thresholds for the uniform-integrability tail profile.
    #[serde(default = "default_ui_thresholds")]
    pub ui_thresholds: Vec<f64>,
    /// The sup-row must fall below this at the largest threshold to be called
    /// UI-consistent.
    #[serde(default = "default_ui_decay_tolerance")]
    pub ui_decay_tolerance: f64,
    /// Allowed gap between `Q[1/Z_horizon]` and its limit `1 - q*`.
    #[serde(default = "default_convergence_tolerance")]
    pub convergence_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbm: Option<BbmConfig>,
    /// Default report destination (stdout when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ReportFormat>,
}

fn default_horizon() -> u32 {
    20
}

fn default_exact_horizon() -> u32 {
    6
}

fn default_samples() -> usize {
    100_000
}

fn default_ui_thresholds() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_ui_decay_tolerance() -> f64 {
    0.01
}

fn default_convergence_tolerance() -> f64 {
    0.02
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
}

/// A fully validated configuration, ready to drive a command.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub offspring: OffspringDistribution,
    pub horizon: u32,
    pub exact_horizon: u32,
    pub samples: usize,
    pub seed: u64,
    pub ui_thresholds: Vec<f64>,
    pub ui_decay_tolerance: f64,
    pub convergence_tolerance: f64,
    pub bbm: Option<BbmConfig>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    digest: String,
}

impl ExperimentConfig {
    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
    }

    /// Applies overrides and re-validates every downstream precondition.
    pub fn resolve(self, overrides: CliOverrides) -> Result<ResolvedConfig> {
        let entries: Vec<(u32, f64)> = self.offspring.iter().map(|e| (e.k, e.p)).collect();
        let offspring = OffspringDistribution::new(&entries)
            .map_err(|e| Error::Config(format!("offspring law: {e}")))?;
        let seed = overrides
            .seed
            .or(self.seed)
            .ok_or_else(|| Error::Config("master seed is mandatory: set `seed` or --seed".into()))?;
        let samples = overrides.samples.unwrap_or(self.samples);
        if samples < 2 {
            return Err(Error::Config(format!(
                "sample count must be at least 2, got {samples}"
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.exact_horizon > EXACT_MAX_N {
            return Err(Error::Config(format!(
                "exact_horizon {} exceeds the oracle limit {EXACT_MAX_N}",
                self.exact_horizon
            )));
        }
        if self.ui_thresholds.is_empty() {
            return Err(Error::Config("ui_thresholds must not be empty".into()));
        }
        for pair in self.ui_thresholds.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(
                    "ui_thresholds must be strictly increasing".into(),
                ));
            }
        }
        if !(self.ui_thresholds[0] > 0.0) {
            return Err(Error::Config("ui_thresholds must be positive".into()));
        }
        if !(self.ui_decay_tolerance > 0.0) {
            return Err(Error::Config("ui_decay_tolerance must be positive".into()));
        }
        if !(self.convergence_tolerance > 0.0) {
            return Err(Error::Config("convergence_tolerance must be positive".into()));
        }
        if let Some(bbm) = &self.bbm {
            let params = BbmParams {
                branch_rate: bbm.branch_rate,
                lambda: bbm.lambda,
                offspring: offspring.clone(),
                horizon: bbm.horizon,
                time_step: bbm.time_step,
            };
            params
                .validate()
                .map_err(|e| Error::Config(format!("bbm section: {e}")))?;
            if let Some(paths) = bbm.paths {
                if paths < 2 {
                    return Err(Error::Config("bbm.paths must be at least 2".into()));
                }
            }
        }
        let digest = digest_of(&self, seed, samples);
        Ok(ResolvedConfig {
            offspring,
            horizon: self.horizon,
            exact_horizon: self.exact_horizon,
            samples,
            seed,
            ui_thresholds: self.ui_thresholds,
            ui_decay_tolerance: self.ui_decay_tolerance,
            convergence_tolerance: self.convergence_tolerance,
            bbm: self.bbm,
            out: overrides.out.or(self.out),
            format: overrides.format.or(self.format).unwrap_or(ReportFormat::Json),
            digest,
        })
    }
}

impl ResolvedConfig {
    /// SHA-256 digest of the effective experiment (output destination and
    /// format excluded).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// BBM parameters assembled from the configuration, if present.
    pub fn bbm_params(&self) -> Option<BbmParams> {
        self.bbm.as_ref().map(|bbm| BbmParams {
            branch_rate: bbm.branch_rate,
            lambda: bbm.lambda,
            offspring: self.offspring.clone(),
            horizon: bbm.horizon,
            time_step: bbm.time_step,
        })
    }

    /// BBM path count: the section override or the global sample count.
    pub fn bbm_paths(&self) -> usize {
        self.bbm
            .as_ref()
            .and_then(|b| b.paths)
            .unwrap_or(self.samples)
    }
}

fn digest_of(config: &ExperimentConfig, seed: u64, samples: usize) -> String {
    // Canonical form: sorted keys, effective seed and sample count, no
    // output-destination fields.
    let mut canonical: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
    canonical.insert(
        "offspring",
        serde_json::json!(config
            .offspring
            .iter()
            .map(|e| (e.k, e.p))
            .collect::<Vec<_>>()),
    );
    canonical.insert("horizon", serde_json::json!(config.horizon));
    canonical.insert("exact_horizon", serde_json::json!(config.exact_horizon));
    canonical.insert("samples", serde_json::json!(samples));
    canonical.insert("seed", serde_json::json!(seed));
    canonical.insert("ui_thresholds", serde_json::json!(config.ui_thresholds));
    canonical.insert(
        "ui_decay_tolerance",
        serde_json::json!(config.ui_decay_tolerance),
    );
    canonical.insert(
        "convergence_tolerance",
        serde_json::json!(config.convergence_tolerance),
    );
    if let Some(bbm) = &config.bbm {
        canonical.insert(
            "bbm",
            serde_json::json!({
                "branch_rate": bbm.branch_rate,
                "lambda": bbm.lambda,
                "horizon": bbm.horizon,
                "time_step": bbm.time_step,
                "paths": bbm.paths,
            }),
        );
    }
    let serialized = serde_json::to_string(&canonical).expect("canonical config serializes");
    let mut hasher = Sha256::new();
    hasher.update(serialized.as_bytes());
    format!("{:x}", hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "offspring": [{"k": 0, "p": 0.4}, {"k": 2, "p": 0.6}],
                "seed": 42
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let resolved = base_config().resolve(CliOverrides::default()).unwrap();
        assert_eq!(resolved.horizon, 20);
        assert_eq!(resolved.samples, 100_000);
        assert_eq!(resolved.seed, 42);
        assert_eq!(resolved.format, ReportFormat::Json);
        assert!((resolved.offspring.mean() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn seed_is_mandatory() {
        let mut config = base_config();
        config.seed = None;
        assert!(config.clone().resolve(CliOverrides::default()).is_err());
        let resolved = config
            .resolve(CliOverrides {
                seed: Some(7),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(resolved.seed, 7);
    }

    #[test]
    fn malformed_pmf_is_a_config_error() {
        let mut config = base_config();
        config.offspring = vec![PmfEntry { k: 0, p: 0.5 }, PmfEntry { k: 2, p: 0.6 }];
        assert!(matches!(
            config.resolve(CliOverrides::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn digest_tracks_experiment_not_output() {
        let a = base_config().resolve(CliOverrides::default()).unwrap();
        let b = base_config()
            .resolve(CliOverrides {
                out: Some(PathBuf::from("/tmp/elsewhere.json")),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = base_config()
            .resolve(CliOverrides {
                seed: Some(43),
                ..Default::default()
            })
            .unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn overrides_apply() {
        let resolved = base_config()
            .resolve(CliOverrides {
                samples: Some(5000),
                format: Some(ReportFormat::Csv),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(resolved.samples, 5000);
        assert_eq!(resolved.format, ReportFormat::Csv);
    }

    #[test]
    fn bbm_section_is_validated() {
        let mut config = base_config();
        config.bbm = Some(BbmConfig {
            branch_rate: -1.0,
            lambda: 0.5,
            horizon: 2.0,
            time_step: 0.5,
            paths: None,
        });
        assert!(matches!(
            config.resolve(CliOverrides::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"offspring": [{"k": 2, "p": 1.0}], "seed": 1, "typo_field": 3}"#,
        );
        assert!(parsed.is_err());
    }
}
