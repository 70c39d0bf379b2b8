use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Requested compression ratio `elements(X) / elements(Z)`, kept as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompressionRatio(Ratio<u64>);

impl CompressionRatio {
    pub const BASELINE: Self = Self(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::Config(format!("compression ratio must be positive, got {numer}/{denom}")));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    pub fn integer(n: u64) -> Result<Self> {
        Self::new(n, 1)
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn is_baseline(&self) -> bool {
        self.0 == Ratio::from_integer(1)
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl From<Ratio<u64>> for CompressionRatio {
    fn from(r: Ratio<u64>) -> Self {
        Self(r)
    }
}

impl fmt::Display for CompressionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for CompressionRatio {
    type Err = Error;

    /// Accepts `4`, `3/2` or a finite decimal such as `1.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid compression ratio `{s}`"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let denom = 10u64.pow(frac.len() as u32);
            let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let frac: u64 = frac.parse().map_err(|_| bad())?;
            return Self::new(int * denom + frac, denom);
        }
        Self::integer(s.parse().map_err(|_| bad())?)
    }
}

impl Serialize for CompressionRatio {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_integer() {
            ser.serialize_u64(*self.0.numer())
        } else {
            ser.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for CompressionRatio {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Float(f64),
            Str(String),
        }
        let parsed = match Repr::deserialize(de)? {
            Repr::Int(n) => Self::integer(n),
            Repr::Float(x) => format!("{x}").parse(),
            Repr::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Exact ratio of element counts between an input shape and a latent shape.
pub fn compression_ratio(input_shape: &[usize], latent_shape: &[usize]) -> Ratio<u64> {
    let x: u64 = input_shape.iter().map(|&d| d as u64).product();
    let z: u64 = latent_shape.iter().map(|&d| d as u64).product();
    Ratio::new(x, z)
}
