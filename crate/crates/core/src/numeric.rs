//! Log-space probability values and compensated summation.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A probability stored as its natural logarithm.
///
/// Zero probability is a dedicated state and is absorbing under
/// multiplication (log-space addition).
#[derive(Clone, Copy, PartialEq)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    /// Wraps a finite log-probability. Non-finite or positive values are rejected.
    pub fn new(log_p: f64) -> Option<Self> {
        if log_p.is_finite() && log_p <= 0.0 {
            Some(LogProb(log_p))
        } else if log_p == f64::NEG_INFINITY {
            Some(Self::ZERO)
        } else {
            None
        }
    }

    pub fn from_prob(p: f64) -> Option<Self> {
        if !(0.0..=1.0).contains(&p) {
            return None;
        }
        if p == 0.0 {
            Some(Self::ZERO)
        } else {
            Some(LogProb(p.ln()))
        }
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// The log value; `-inf` for zero probability.
    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.0.exp()
        }
    }
}

impl Add for LogProb {
    type Output = LogProb;

    fn add(self, rhs: LogProb) -> LogProb {
        if self.is_zero() || rhs.is_zero() {
            LogProb::ZERO
        } else {
            LogProb(self.0 + rhs.0)
        }
    }
}

impl PartialOrd for LogProb {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.0.total_cmp(&other.0))
    }
}

impl fmt::Debug for LogProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            write!(f, "LogProb(zero)")
        } else {
            write!(f, "LogProb({})", self.0)
        }
    }
}

// JSON has no -inf, so zero probability serializes as null.
impl Serialize for LogProb {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_zero() {
            s.serialize_none()
        } else {
            s.serialize_some(&self.0)
        }
    }
}

impl<'de> Deserialize<'de> for LogProb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Option::<f64>::deserialize(d)?;
        match v {
            None => Ok(LogProb::ZERO),
            Some(x) => LogProb::new(x)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid log-probability {x}"))),
        }
    }
}

/// Kahan–Babuška (Neumaier) compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `log(sum(exp(xs)))` with max-subtraction. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: CompensatedSum = xs.iter().map(|&x| (x - max).exp()).collect();
    max + s.value().ln()
}

/// `ceil(x)` that ignores floating-point noise just above an integer.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `floor(x)` that ignores floating-point noise just below an integer.
pub(crate) fn floor_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_absorbing() {
        let p = LogProb::new(-0.5).unwrap();
        assert!((p + LogProb::ZERO).is_zero());
        assert!((LogProb::ZERO + LogProb::ZERO).is_zero());
        assert_eq!((p + LogProb::ONE).ln(), -0.5);
        assert_eq!(LogProb::ZERO.prob(), 0.0);
    }

    #[test]
    fn rejects_positive_and_nan() {
        assert!(LogProb::new(0.1).is_none());
        assert!(LogProb::new(f64::NAN).is_none());
        assert!(LogProb::from_prob(1.5).is_none());
    }

    #[test]
    fn serde_zero_as_null() {
        let s = serde_json::to_string(&vec![LogProb::ZERO, LogProb::ONE]).unwrap();
        assert_eq!(s, "[null,0.0]");
        let back: Vec<LogProb> = serde_json::from_str(&s).unwrap();
        assert!(back[0].is_zero());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..1_000_000 {
            s.add(1e-16);
        }
        assert!((s.value() - (1.0 + 1e-10)).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_large_values() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn tolerant_rounding() {
        assert_eq!(ceil_tolerant(99900.00000000001), 99900.0);
        assert_eq!(ceil_tolerant(2994.2), 2995.0);
        assert_eq!(floor_tolerant(2.9999999999999996), 3.0);
        assert_eq!(floor_tolerant(9.97), 9.0);
    }
}
