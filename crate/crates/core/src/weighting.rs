//! Loss weights as functions of the signal-to-noise ratio.
//!
//! Each strategy maps `snr = α_t²/σ_t²` to the weight applied to the
//! x-space squared error `‖x − x̂‖²`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    /// `snr`: x-space form of the plain ε-prediction loss.
    EpsilonSnr,
    /// `max(snr, 1)`.
    TruncatedSnr,
    /// `1 + snr`.
    SnrPlusOne,
    /// `min(snr, γ)`.
    MinSnrGamma,
    /// `min(snr + 1, γ)`: bounded to `[1, γ]`.
    BalancedSnrAware,
}

impl WeightKind {
    pub const ALL: [WeightKind; 5] = [
        WeightKind::EpsilonSnr,
        WeightKind::TruncatedSnr,
        WeightKind::SnrPlusOne,
        WeightKind::MinSnrGamma,
        WeightKind::BalancedSnrAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::EpsilonSnr => "eps-snr",
            WeightKind::TruncatedSnr => "trunc-snr",
            WeightKind::SnrPlusOne => "snr-plus-one",
            WeightKind::MinSnrGamma => "min-snr",
            WeightKind::BalancedSnrAware => "bsa",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStrategy {
    pub kind: WeightKind,
    pub gamma: f64,
}

impl WeightStrategy {
    pub fn new(kind: WeightKind, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { kind, gamma })
    }

    pub fn with_default_gamma(kind: WeightKind) -> Self {
        Self {
            kind,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn weight(&self, snr: f64) -> Result<f64> {
        if !(snr.is_finite() && snr >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "snr must be finite and non-negative, got {snr}"
            )));
        }
        Ok(match self.kind {
            WeightKind::EpsilonSnr => snr,
            WeightKind::TruncatedSnr => snr.max(1.0),
            WeightKind::SnrPlusOne => 1.0 + snr,
            WeightKind::MinSnrGamma => snr.min(self.gamma),
            WeightKind::BalancedSnrAware => (snr + 1.0).min(self.gamma),
        })
    }
}
