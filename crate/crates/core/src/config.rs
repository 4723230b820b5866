//! Experiment configuration, read from TOML.
//!
//! ```toml
//! policy = "approx_ros"
//! horizons = [100, 400, 1600]
//! trials = 50
//! seed = 7
//! rho = 0.25            # required by budgeted policies
//! target_ros = 1.0
//! emit_trajectories = false
//!
//! [distribution]
//! kind = "uniform_second_price"
//! v_lo = 0.0
//! v_hi = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::policy::{PolicyKind, PolicyOptions, DEFAULT_BID_CAP};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "ROSBID_SEED";

const DEFAULT_OUTPUT_DIR: &str = "rosbid-out";

fn one() -> f64 {
    1.0
}

fn default_spread() -> f64 {
    0.2
}

fn default_bid_cap() -> f64 {
    DEFAULT_BID_CAP
}

/// Query distributions. Values and competing bids are drawn independently per
/// round unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    UniformSecondPrice {
        #[serde(default)]
        v_lo: f64,
        #[serde(default = "one")]
        v_hi: f64,
        #[serde(default)]
        d_lo: f64,
        #[serde(default = "one")]
        d_hi: f64,
    },
    BetaSecondPrice {
        a_v: f64,
        b_v: f64,
        a_d: f64,
        b_d: f64,
    },
    /// `v ~ U(0,1)`, `d = clamp(v − margin + U(−spread, spread), 0, 1)`.
    CorrelatedSecondPrice {
        margin: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// `v ~ U(v_lo, v_hi)` sold with allocation `min(1, b)`.
    LinearAllocationUniform {
        #[serde(default)]
        v_lo: f64,
        #[serde(default = "one")]
        v_hi: f64,
    },
}

impl Distribution {
    pub fn uniform() -> Self {
        Distribution::UniformSecondPrice {
            v_lo: 0.0,
            v_hi: 1.0,
            d_lo: 0.0,
            d_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "distribution.{name} must lie in [0, 1], got {x}"
                )))
            }
        };
        let range = |lo_name: &str, lo: f64, hi_name: &str, hi: f64| {
            unit(lo_name, lo)?;
            unit(hi_name, hi)?;
            if lo > hi {
                return Err(ConfigError::Invalid(format!(
                    "distribution.{lo_name} ({lo}) exceeds distribution.{hi_name} ({hi})"
                )));
            }
            Ok(())
        };
        match *self {
            Distribution::UniformSecondPrice {
                v_lo,
                v_hi,
                d_lo,
                d_hi,
            } => {
                range("v_lo", v_lo, "v_hi", v_hi)?;
                range("d_lo", d_lo, "d_hi", d_hi)
            }
            Distribution::BetaSecondPrice { a_v, b_v, a_d, b_d } => {
                for (name, x) in [("a_v", a_v), ("b_v", b_v), ("a_d", a_d), ("b_d", b_d)] {
                    if !(x > 0.0 && x.is_finite()) {
                        return Err(ConfigError::Invalid(format!(
                            "distribution.{name} must be positive, got {x}"
                        )));
                    }
                }
                Ok(())
            }
            Distribution::CorrelatedSecondPrice { margin, spread } => {
                unit("margin", margin)?;
                unit("spread", spread)
            }
            Distribution::LinearAllocationUniform { v_lo, v_hi } => {
                range("v_lo", v_lo, "v_hi", v_hi)
            }
        }
    }
}

/// Validated experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub distribution: Distribution,
    pub horizons: Vec<usize>,
    pub trials: usize,
    pub rho: Option<f64>,
    /// Values are divided by this before bidding so the RoS target becomes 1.
    pub target_ros: f64,
    pub seed: u64,
    pub alpha_override: Option<f64>,
    pub eta_override: Option<f64>,
    pub bid_cap: f64,
    pub intermingled: bool,
    pub output_dir: PathBuf,
    pub emit_trajectories: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    policy: PolicyKind,
    distribution: Distribution,
    horizons: Vec<usize>,
    trials: usize,
    rho: Option<f64>,
    #[serde(default = "one")]
    target_ros: f64,
    #[serde(default)]
    seed: u64,
    alpha_override: Option<f64>,
    eta_override: Option<f64>,
    #[serde(default = "default_bid_cap")]
    bid_cap: f64,
    #[serde(default)]
    intermingled: bool,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    emit_trajectories: bool,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. `seed_override` replaces the seed.
    pub fn from_toml_str(text: &str, seed_override: Option<&str>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let seed = match seed_override {
            Some(s) => s.trim().parse::<u64>().map_err(|_| {
                ConfigError::Invalid(format!(
                    "{SEED_ENV} must be an unsigned 64-bit integer, got `{s}`"
                ))
            })?,
            None => raw.seed,
        };
        let config = ExperimentConfig {
            policy: raw.policy,
            distribution: raw.distribution,
            horizons: raw.horizons,
            trials: raw.trials,
            rho: raw.rho,
            target_ros: raw.target_ros,
            seed,
            alpha_override: raw.alpha_override,
            eta_override: raw.eta_override,
            bid_cap: raw.bid_cap,
            intermingled: raw.intermingled,
            output_dir: raw
                .output_dir
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            emit_trajectories: raw.emit_trajectories,
        };
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, applying the seed from the environment if set.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let env_seed = std::env::var(SEED_ENV).ok();
        Self::from_toml_str(&text, env_seed.as_deref())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.policy.needs_budget() && self.rho.is_none() {
            return invalid(format!("rho required for policy {}", self.policy));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0 && r.is_finite()) {
                return invalid(format!("rho must be positive, got {r}"));
            }
        }
        if self.horizons.is_empty() {
            return invalid("horizons must not be empty".into());
        }
        if self.horizons.contains(&0) {
            return invalid("horizons must be positive".into());
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!(
                "horizons must be strictly ascending, got {:?}",
                self.horizons
            ));
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1".into());
        }
        if !(self.target_ros > 0.0 && self.target_ros.is_finite()) {
            return invalid(format!(
                "target_ros must be positive, got {}",
                self.target_ros
            ));
        }
        for (name, v) in [
            ("alpha_override", self.alpha_override),
            ("eta_override", self.eta_override),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return invalid(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.bid_cap > 0.0 && self.bid_cap.is_finite()) {
            return invalid(format!("bid_cap must be positive, got {}", self.bid_cap));
        }
        if self.intermingled && self.policy != PolicyKind::StrictRos {
            return invalid("intermingled is only available for strict_ros".into());
        }
        self.distribution.validate()
    }

    pub fn policy_options(&self) -> PolicyOptions {
        PolicyOptions {
            alpha_override: self.alpha_override,
            eta_override: self.eta_override,
            bid_cap: self.bid_cap,
            intermingled: self.intermingled,
            intermingle_chunk: None,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration,
    /// excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = canonical.as_object_mut() {
            obj.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&canonical).expect("json value serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
