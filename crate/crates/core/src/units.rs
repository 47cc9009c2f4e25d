//! Byte and bandwidth quantities.
//!
//! Spec files may write capacities either as plain integers (bytes) or as
//! strings with a binary suffix (`"192GB"`, `"1.5TB"`, `"40MB"`). Suffixes are
//! powers of 1024. Bandwidths accept the same suffixes followed by `/s`.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
pub const GIB: u64 = 1024 * MIB;
pub const TIB: u64 = 1024 * GIB;

/// A byte count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bytes(pub u64);

impl Bytes {
    pub const ZERO: Bytes = Bytes(0);

    pub const fn kib(n: u64) -> Self {
        Bytes(n * KIB)
    }

    pub const fn mib(n: u64) -> Self {
        Bytes(n * MIB)
    }

    pub const fn gib(n: u64) -> Self {
        Bytes(n * GIB)
    }

    pub const fn tib(n: u64) -> Self {
        Bytes(n * TIB)
    }

    /// Rounds a fractional byte count to the nearest integer.
    pub fn from_f64(v: f64) -> Self {
        Bytes(v.max(0.0).round() as u64)
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn as_gib(self) -> f64 {
        self.0 as f64 / GIB as f64
    }

    pub fn checked_sub(self, rhs: Bytes) -> Option<Bytes> {
        self.0.checked_sub(rhs.0).map(Bytes)
    }

    pub fn saturating_sub(self, rhs: Bytes) -> Bytes {
        Bytes(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Bytes {
    type Output = Bytes;
    fn add(self, rhs: Bytes) -> Bytes {
        Bytes(self.0 + rhs.0)
    }
}

impl AddAssign for Bytes {
    fn add_assign(&mut self, rhs: Bytes) {
        self.0 += rhs.0;
    }
}

impl Sub for Bytes {
    type Output = Bytes;
    fn sub(self, rhs: Bytes) -> Bytes {
        Bytes(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Bytes {
    fn sum<I: Iterator<Item = Bytes>>(iter: I) -> Bytes {
        Bytes(iter.map(|b| b.0).sum())
    }
}

impl fmt::Display for Bytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        let (unit, div) = if v >= TIB && v.is_multiple_of(TIB / 1024) {
            ("TB", TIB)
        } else if v >= GIB {
            ("GB", GIB)
        } else if v >= MIB {
            ("MB", MIB)
        } else if v >= KIB {
            ("KB", KIB)
        } else {
            return write!(f, "{v}B");
        };
        let x = v as f64 / div as f64;
        if x.fract() == 0.0 {
            write!(f, "{x:.0}{unit}")
        } else {
            write!(f, "{x:.2}{unit}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid quantity `{0}`")]
pub struct ParseQuantityError(pub String);

fn split_suffix(s: &str) -> (&str, &str) {
    let idx = s
        .find(|c: char| c.is_ascii_alphabetic())
        .unwrap_or(s.len());
    (s[..idx].trim(), s[idx..].trim())
}

fn multiplier(suffix: &str) -> Option<u64> {
    match suffix.to_ascii_uppercase().as_str() {
        "" | "B" => Some(1),
        "KB" | "KIB" | "K" => Some(KIB),
        "MB" | "MIB" | "M" => Some(MIB),
        "GB" | "GIB" | "G" => Some(GIB),
        "TB" | "TIB" | "T" => Some(TIB),
        _ => None,
    }
}

/// Parses `"7.5GB"` style strings into a byte count (rounded).
pub fn parse_bytes(s: &str) -> Result<f64, ParseQuantityError> {
    let (num, suffix) = split_suffix(s.trim());
    let mult = multiplier(suffix).ok_or_else(|| ParseQuantityError(s.to_string()))?;
    let v: f64 = num
        .parse()
        .map_err(|_| ParseQuantityError(s.to_string()))?;
    if !v.is_finite() || v < 0.0 {
        return Err(ParseQuantityError(s.to_string()));
    }
    Ok(v * mult as f64)
}

/// Parses `"10GB/s"` style strings into bytes per second.
pub fn parse_bandwidth(s: &str) -> Result<f64, ParseQuantityError> {
    let t = s.trim();
    let body = t
        .strip_suffix("/s")
        .or_else(|| t.strip_suffix("/S"))
        .unwrap_or(t);
    parse_bytes(body).map_err(|_| ParseQuantityError(s.to_string()))
}

impl FromStr for Bytes {
    type Err = ParseQuantityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bytes(s).map(Bytes::from_f64)
    }
}

impl Serialize for Bytes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

struct QuantityVisitor {
    bandwidth: bool,
}

impl Visitor<'_> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.bandwidth {
            f.write_str("a number of bytes per second or a string such as \"10GB/s\"")
        } else {
            f.write_str("a number of bytes or a string such as \"192GB\"")
        }
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        if v < 0 {
            return Err(E::custom(format!("negative quantity {v}")));
        }
        Ok(v as f64)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        if !v.is_finite() || v < 0.0 {
            return Err(E::custom(format!("invalid quantity {v}")));
        }
        Ok(v)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        let r = if self.bandwidth {
            parse_bandwidth(v)
        } else {
            parse_bytes(v)
        };
        r.map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Bytes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer
            .deserialize_any(QuantityVisitor { bandwidth: false })
            .map(Bytes::from_f64)
    }
}

/// `deserialize_with` helper for bandwidth fields stored as `f64` bytes/s.
pub fn de_bandwidth<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    deserializer.deserialize_any(QuantityVisitor { bandwidth: true })
}

/// Formats a bandwidth in GiB/s with three decimals.
pub fn fmt_gibs(bw: f64) -> String {
    format!("{:.3} GiB/s", bw / GIB as f64)
}
