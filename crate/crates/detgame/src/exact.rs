//! Exact rational distortion budgets.
//!
//! Finite-sample admissibility asks whether a count matrix satisfies
//! `sum n_ij d(i,j) <= n * delta`. Boundary classes are admissible, so the
//! comparison must not wobble at ties; it is carried out in integer
//! arithmetic after clearing denominators. A budget constructed from a
//! float is honored exactly as the rational that float denotes; budgets
//! meant as fractions like 1/3 should be built with [`DistortionBound::from_ratio`]
//! or parsed from text.

use crate::simplex::{exact_from_f64, DistortionMatrix};
use crate::{Error, Result};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

/// A nonnegative distortion budget held as an exact rational.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DistortionBound {
    value: BigRational,
}

impl DistortionBound {
    pub fn zero() -> Self {
        Self {
            value: BigRational::zero(),
        }
    }

    /// The exact rational denoted by a finite nonnegative float.
    pub fn from_f64(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "distortion budget must be a finite nonnegative real, got {v}"
            )));
        }
        Ok(Self {
            value: exact_from_f64(v),
        })
    }

    pub fn from_ratio(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        let value = BigRational::new(BigInt::from(num), BigInt::from(den));
        if value.is_negative() {
            return Err(Error::InvalidParameter(format!(
                "distortion budget must be nonnegative, got {num}/{den}"
            )));
        }
        Ok(Self { value })
    }

    /// Parses `"p/q"`, or decimal text like `"0.25"` or `"2.5e-3"`, into the
    /// exact rational it denotes. No binary rounding takes place.
    pub fn parse(text: &str) -> Result<Self> {
        let value = parse_rational(text)
            .ok_or_else(|| Error::InvalidParameter(format!("cannot parse budget {text:?}")))?;
        if value.is_negative() {
            return Err(Error::InvalidParameter(format!(
                "distortion budget must be nonnegative, got {text:?}"
            )));
        }
        Ok(Self { value })
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.value
    }

    /// Nearest float, for the asymptotic solvers.
    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }
}

fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n: BigInt = num.trim().parse().ok()?;
        let d: BigInt = den.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (mantissa, exp) = match t.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (t, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let digits = format!(
        "{}{}",
        if int_part.is_empty() { "0" } else { int_part },
        frac_part
    );
    let n: BigInt = digits.parse().ok()?;
    let scale = frac_part.len() as i32 - exp;
    let ten = BigInt::from(10);
    Some(if scale >= 0 {
        BigRational::new(n, ten.pow(scale as u32))
    } else {
        BigRational::from_integer(n * ten.pow((-scale) as u32))
    })
}

/// Integer-cleared form of the constraint `sum n_ij d(i,j) <= n * delta`,
/// with an i128 fast path when magnitudes permit.
#[derive(Debug, Clone)]
pub struct AdmissibilityCheck {
    weights: Vec<BigInt>,
    bound: BigInt,
    small: Option<(Vec<i128>, i128)>,
}

impl AdmissibilityCheck {
    /// Clears denominators across all matrix entries and `n * delta`.
    pub fn new(d: &DistortionMatrix, delta: &DistortionBound, n: u32) -> Self {
        let mut lcm = delta.as_rational().denom().clone();
        for e in d.exact_values() {
            lcm = lcm.lcm(e.denom());
        }
        let weights: Vec<BigInt> = d
            .exact_values()
            .iter()
            .map(|e| e.numer() * (&lcm / e.denom()))
            .collect();
        let delta_r = delta.as_rational();
        let bound = delta_r.numer() * (&lcm / delta_r.denom()) * BigInt::from(n);
        let small = Self::downcast(&weights, &bound, n);
        Self {
            weights,
            bound,
            small,
        }
    }

    fn downcast(weights: &[BigInt], bound: &BigInt, n: u32) -> Option<(Vec<i128>, i128)> {
        let ws: Option<Vec<i128>> = weights.iter().map(|w| w.to_i128()).collect();
        let ws = ws?;
        let b = bound.to_i128()?;
        // Worst case is every count at n on the heaviest weight.
        let max_w = ws.iter().map(|w| w.abs()).max().unwrap_or(0);
        let worst = max_w
            .checked_mul(n as i128)?
            .checked_mul(ws.len() as i128)?;
        worst.checked_add(b.abs())?;
        Some((ws, b))
    }

    /// Exact test of `sum counts_ij d(i,j) <= n * delta`.
    pub fn admits(&self, counts: &[u32]) -> bool {
        debug_assert_eq!(counts.len(), self.weights.len());
        if let Some((ws, b)) = &self.small {
            let total: i128 = counts
                .iter()
                .zip(ws)
                .map(|(&c, &w)| c as i128 * w)
                .sum();
            return total <= *b;
        }
        let total: BigInt = counts
            .iter()
            .zip(&self.weights)
            .map(|(&c, w)| BigInt::from(c) * w)
            .sum();
        total <= self.bound
    }

    /// The scaled integer weight of one matrix cell, for pruning bounds; only
    /// available on the fast path.
    pub fn small_weights(&self) -> Option<(&[i128], i128)> {
        self.small.as_ref().map(|(w, b)| (w.as_slice(), *b))
    }
}
