//! Run configuration with documented defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be non-negative and finite")]
    Negative(&'static str),
    #[error("{name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("annealing.{0} must be at least 1")]
    Count(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingSchedule {
    pub t0: f64,
    pub cooling: f64,
    pub iters: usize,
    pub restarts: usize,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            t0: 1.0,
            cooling: 0.995,
            iters: 20_000,
            restarts: 8,
        }
    }
}

/// Objective weights, fusion parameters and search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// weights of node, edge, struct, norm and reg terms
    pub lambdas: [f64; 5],
    /// per-section, per-line and squared-size regularization weights
    pub alphas: [f64; 3],
    /// weight of the scene-graph distribution when fusing with equipment evidence
    pub beta: f64,
    /// confidence assigned to a catalogue-resolved equipment class
    pub gamma: f64,
    /// floor applied to every logarithm argument
    pub epsilon: f64,
    /// OCR match cutoff, in multiples of the median bbox diagonal
    pub match_cutoff_factor: f64,
    pub annealing: AnnealingSchedule,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambdas: [1.0; 5],
            alphas: [0.05, 0.05, 0.01],
            beta: 0.5,
            gamma: 0.9,
            epsilon: 1e-9,
            match_cutoff_factor: 1.5,
            annealing: AnnealingSchedule::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ConfigError::Negative("lambdas"));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(ConfigError::Negative("alphas"));
        }
        let ranged = [
            ("beta", self.beta, (0.0..=1.0).contains(&self.beta), "[0, 1]"),
            ("gamma", self.gamma, self.gamma > 0.0 && self.gamma < 1.0, "(0, 1)"),
            ("epsilon", self.epsilon, self.epsilon > 0.0 && self.epsilon <= 1e-3, "(0, 1e-3]"),
            (
                "match_cutoff_factor",
                self.match_cutoff_factor,
                self.match_cutoff_factor > 0.0 && self.match_cutoff_factor.is_finite(),
                "(0, inf)",
            ),
            (
                "annealing.cooling",
                self.annealing.cooling,
                self.annealing.cooling > 0.0 && self.annealing.cooling < 1.0,
                "(0, 1)",
            ),
            (
                "annealing.t0",
                self.annealing.t0,
                self.annealing.t0 > 0.0 && self.annealing.t0.is_finite(),
                "(0, inf)",
            ),
        ];
        for (name, value, ok, range) in ranged {
            if !ok {
                return Err(ConfigError::OutOfRange { name, value, range });
            }
        }
        if self.annealing.iters == 0 {
            return Err(ConfigError::Count("iters"));
        }
        if self.annealing.restarts == 0 {
            return Err(ConfigError::Count("restarts"));
        }
        Ok(())
    }
}

/// Seed of the named sub-stream `stream` of `seed`: the first eight bytes
/// of SHA-256 over `"{stream}:{seed}"`, little-endian.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::digest(format!("{stream}:{seed}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
