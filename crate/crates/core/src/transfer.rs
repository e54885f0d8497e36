//! Depth transfer functions: maps between depth in meters and the
//! unconstrained value a regression head predicts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Direct,
    Inverse,
    Log,
    /// Bounded logit/sigmoid encoding over `(d_min, d_max)`.
    Sigmoid,
    /// Affine encoding whose decoding is clamped from below at `d_min`.
    ReluLike,
}

impl TransferKind {
    pub const ALL: [TransferKind; 5] = [
        TransferKind::Direct,
        TransferKind::Inverse,
        TransferKind::Log,
        TransferKind::Sigmoid,
        TransferKind::ReluLike,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransferKind::Direct => "direct",
            TransferKind::Inverse => "inverse",
            TransferKind::Log => "log",
            TransferKind::Sigmoid => "sigmoid",
            TransferKind::ReluLike => "relu_like",
        }
    }
}

impl fmt::Display for TransferKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "direct" => Ok(TransferKind::Direct),
            "inverse" => Ok(TransferKind::Inverse),
            "log" => Ok(TransferKind::Log),
            "sigmoid" => Ok(TransferKind::Sigmoid),
            "relu_like" | "relulike" | "relu" => Ok(TransferKind::ReluLike),
            other => Err(Error::Config(format!("unknown transfer kind '{other}'"))),
        }
    }
}

/// A transfer function together with its parameters.
///
/// `d_min`/`d_max` bound the Sigmoid encoding and give the ReluLike clamp;
/// `a`/`b` are the ReluLike slope and offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub kind: TransferKind,
    pub d_min: f64,
    pub d_max: f64,
    pub a: f64,
    pub b: f64,
}

impl TransferSpec {
    pub fn new(kind: TransferKind, d_min: f64, d_max: f64, a: f64, b: f64) -> Result<Self> {
        let spec = Self {
            kind,
            d_min,
            d_max,
            a,
            b,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default parameters for `kind`: 0..700 m, `a = 100`, `b = 350`.
    pub fn with_defaults(kind: TransferKind) -> Self {
        Self {
            kind,
            d_min: 0.0,
            d_max: 700.0,
            a: 100.0,
            b: 350.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.d_min, self.d_max, self.a, self.b]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("transfer parameters must be finite".into()));
        }
        if self.d_min < 0.0 {
            return Err(Error::Config(format!(
                "d_min = {} must be >= 0",
                self.d_min
            )));
        }
        if self.d_max <= self.d_min {
            return Err(Error::Config(format!(
                "d_max = {} must exceed d_min = {}",
                self.d_max, self.d_min
            )));
        }
        if self.a <= 0.0 {
            return Err(Error::Config(format!("slope a = {} must be > 0", self.a)));
        }
        Ok(())
    }

    /// Whether `d` is a legal encoding input.
    pub fn in_domain(&self, d: f64) -> bool {
        if !d.is_finite() {
            return false;
        }
        match self.kind {
            TransferKind::Direct => true,
            TransferKind::Inverse | TransferKind::Log => d > 0.0,
            TransferKind::Sigmoid => self.d_min < d && d < self.d_max,
            TransferKind::ReluLike => d >= self.d_min,
        }
    }

    /// Depth in meters to network-space target.
    pub fn encode(&self, d: f64) -> Result<f64> {
        if !self.in_domain(d) {
            return Err(Error::Domain(format!(
                "depth {d} outside the domain of the {} encoding",
                self.kind
            )));
        }
        Ok(match self.kind {
            TransferKind::Direct => d,
            TransferKind::Inverse => 1.0 / d,
            TransferKind::Log => d.ln(),
            // logit(u) with u = (d - d_min)/(d_max - d_min), written as a ratio of
            // distances to both bounds to keep precision near d_max.
            TransferKind::Sigmoid => ((d - self.d_min) / (self.d_max - d)).ln(),
            TransferKind::ReluLike => (d - self.b) / self.a,
        })
    }

    /// Network-space value to depth in meters.
    pub fn decode(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("network output {y} is not finite")));
        }
        Ok(match self.kind {
            TransferKind::Direct => y,
            TransferKind::Inverse => {
                if y <= 0.0 {
                    return Err(Error::Domain(format!(
                        "inverse decoding requires a positive output, got {y}"
                    )));
                }
                1.0 / y
            }
            TransferKind::Log => y.exp(),
            TransferKind::Sigmoid => {
                // sigma saturates in f64 for |y| > ~37; the range stays open
                let d = (self.d_max - self.d_min) * sigmoid(y) + self.d_min;
                d.clamp(self.d_min.next_up(), self.d_max.next_down())
            }
            TransferKind::ReluLike => self.d_min.max(self.a * y + self.b),
        })
    }

    /// Analytic derivative of [`decode`](Self::decode) with respect to `y`.
    ///
    /// ReluLike returns 0 on the clamped branch and at the kink.
    pub fn decode_gradient(&self, y: f64) -> f64 {
        match self.kind {
            TransferKind::Direct => 1.0,
            TransferKind::Inverse => -1.0 / (y * y),
            TransferKind::Log => y.exp(),
            TransferKind::Sigmoid => {
                let s = sigmoid(y);
                (self.d_max - self.d_min) * s * (1.0 - s)
            }
            TransferKind::ReluLike => {
                if self.a * y + self.b > self.d_min {
                    self.a
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
