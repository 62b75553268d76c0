use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of the model feed the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All three scores summed inside a parameter-free sigmoid.
    Full,
    /// Scores combined by a learned affine map instead of the plain sum.
    NoIrt,
    /// Knowledge-state score removed (its recurrent state still feeds the solver head).
    NoKs,
    /// Problem-solving score removed.
    NoPs,
    /// Only the acquisition score is left.
    NoKsPs,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoIrt,
        Variant::NoKs,
        Variant::NoPs,
        Variant::NoKsPs,
    ];

    pub fn uses_beta(self) -> bool {
        !matches!(self, Variant::NoKs | Variant::NoKsPs)
    }

    pub fn uses_zeta(self) -> bool {
        !matches!(self, Variant::NoPs | Variant::NoKsPs)
    }

    pub fn learned_combiner(self) -> bool {
        self == Variant::NoIrt
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoIrt => "no_irt",
            Variant::NoKs => "no_ks",
            Variant::NoPs => "no_ps",
            Variant::NoKsPs => "no_ks_ps",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{s}' (expected one of full, no_irt, no_ks, no_ps, no_ks_ps)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden size.
    pub d: usize,
    /// Number of questions.
    pub n: usize,
    /// Number of knowledge components.
    pub m: usize,
    /// Weight of the auxiliary per-score losses.
    pub lambda: f64,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(d: usize, n: usize, m: usize, lambda: f64, variant: Variant) -> Result<Self> {
        let cfg = Self {
            d,
            n,
            m,
            lambda,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "d, n and m must be positive (d={}, n={}, m={})",
                self.d, self.n, self.m
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}
