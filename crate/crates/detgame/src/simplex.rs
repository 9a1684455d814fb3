//! Probability vectors, couplings, and distortion matrices on a finite
//! alphabet `{0, ..., K-1}`.
//!
//! All divergences are in nats. Validation is strict: constructors reject
//! ill-formed input instead of renormalizing, so numerical drift surfaces at
//! the boundary of the system rather than deep inside a solver.

use crate::{Error, Result};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};

/// Absolute slack allowed when checking that probabilities sum to one.
pub const PMF_SUM_TOL: f64 = 1e-12;

/// A probability mass function on `{0, ..., K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf(Vec<f64>);

impl Pmf {
    /// Validates entries (finite, nonnegative, summing to one within
    /// [`PMF_SUM_TOL`]) and wraps them. Input is never renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidPmf(format!("entry {i} is {p}")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!(
                "entries sum to {sum}, which is farther than {PMF_SUM_TOL} from 1"
            )));
        }
        Ok(Self(probs))
    }

    /// The uniform distribution on `k` symbols.
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Point mass on `symbol`.
    pub fn point_mass(k: usize, symbol: usize) -> Self {
        let mut v = vec![0.0; k];
        v[symbol] = 1.0;
        Self(v)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices carrying strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.0[i] > 0.0).collect()
    }
}

/// A joint distribution on `{0..K-1} x {0..K-1}`, stored row-major; rows
/// index the first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    probs: Vec<f64>,
    k: usize,
}

impl Coupling {
    /// Validates a row-major `k * k` table of joint probabilities.
    pub fn new(probs: Vec<f64>, k: usize) -> Result<Self> {
        if probs.len() != k * k {
            return Err(Error::Dimension(format!(
                "coupling has {} entries, expected {}",
                probs.len(),
                k * k
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidPmf(format!("joint entry {i} is {p}")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!(
                "joint entries sum to {sum}, which is farther than {PMF_SUM_TOL} from 1"
            )));
        }
        Ok(Self { probs, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.k + y]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Marginal of the first coordinate.
    pub fn x_marginal(&self) -> Pmf {
        let mut m = vec![0.0; self.k];
        for x in 0..self.k {
            for y in 0..self.k {
                m[x] += self.get(x, y);
            }
        }
        Pmf(m)
    }

    /// Marginal of the second coordinate.
    pub fn y_marginal(&self) -> Pmf {
        let mut m = vec![0.0; self.k];
        for x in 0..self.k {
            for y in 0..self.k {
                m[y] += self.get(x, y);
            }
        }
        Pmf(m)
    }
}

/// What a distortion matrix claims to satisfy; every claim is checked at
/// construction time, never taken on faith.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricCertificate {
    pub symmetric: bool,
    pub zero_diagonal: bool,
    pub triangle: bool,
}

/// Families of per-letter distortion measures on symbol pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionKind {
    /// 0 on the diagonal, 1 off it.
    Hamming,
    /// `|i - j|^p` on symbol indices, for an exponent `p >= 1`.
    LpPower(f64),
    /// Arbitrary nonnegative entries, row-major.
    Explicit(Vec<f64>),
}

/// A nonnegative per-letter distortion `d(x, y)` on symbol pairs, with exact
/// rational mirrors of every entry for tie-free threshold comparisons.
#[derive(Debug, Clone)]
pub struct DistortionMatrix {
    values: Vec<f64>,
    exact: Vec<BigRational>,
    k: usize,
    certificate: MetricCertificate,
}

impl DistortionMatrix {
    fn from_parts(values: Vec<f64>, exact: Vec<BigRational>, k: usize) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::Dimension(format!(
                "distortion matrix has {} entries, expected {}",
                values.len(),
                k * k
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidDistortion(format!("entry {i} is {v}")));
            }
        }
        let certificate = certify(&values, k);
        Ok(Self {
            values,
            exact,
            k,
            certificate,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.k + y]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Exact rational value of `d(x, y)`. Integer-valued families are exact
    /// by construction; everything else mirrors the binary float exactly.
    pub fn exact_value(&self, x: usize, y: usize) -> &BigRational {
        &self.exact[x * self.k + y]
    }

    pub fn exact_values(&self) -> &[BigRational] {
        &self.exact
    }

    pub fn certificate(&self) -> MetricCertificate {
        self.certificate
    }

    /// True when symmetry, zero diagonal, and the triangle inequality all
    /// held under exhaustive checking.
    pub fn is_metric(&self) -> bool {
        let c = self.certificate;
        c.symmetric && c.zero_diagonal && c.triangle
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// The transpose, for evaluations that swap the roles of x and y.
    pub fn transposed(&self) -> Self {
        let mut values = vec![0.0; self.k * self.k];
        let mut exact = vec![BigRational::from_integer(BigInt::from(0)); self.k * self.k];
        for x in 0..self.k {
            for y in 0..self.k {
                values[y * self.k + x] = self.value(x, y);
                exact[y * self.k + x] = self.exact[x * self.k + y].clone();
            }
        }
        Self {
            values,
            exact,
            k: self.k,
            certificate: certify_transposed(self.certificate),
        }
    }
}

fn certify(values: &[f64], k: usize) -> MetricCertificate {
    let at = |x: usize, y: usize| values[x * k + y];
    let symmetric = (0..k).all(|x| (0..k).all(|y| at(x, y) == at(y, x)));
    let zero_diagonal = (0..k).all(|x| at(x, x) == 0.0);
    let mut triangle = true;
    'outer: for x in 0..k {
        for y in 0..k {
            for z in 0..k {
                if at(x, y) > at(x, z) + at(z, y) {
                    triangle = false;
                    break 'outer;
                }
            }
        }
    }
    MetricCertificate {
        symmetric,
        zero_diagonal,
        triangle,
    }
}

fn certify_transposed(c: MetricCertificate) -> MetricCertificate {
    // Symmetry and zero diagonal transpose to themselves; the triangle check
    // on the transpose equals the check on the original with arguments
    // reversed, which only coincides for symmetric matrices.
    MetricCertificate {
        symmetric: c.symmetric,
        zero_diagonal: c.zero_diagonal,
        triangle: c.triangle && c.symmetric,
    }
}

/// Builds a distortion matrix of the given family on `k` symbols.
///
/// `Hamming` and `LpPower` with integer exponent carry exact integer
/// entries. `LpPower` requires `p >= 1`; note that `p > 1` violates the
/// triangle inequality on three or more symbols, and the certificate
/// records that.
pub fn make_distortion(kind: DistortionKind, k: usize) -> Result<DistortionMatrix> {
    if k == 0 {
        return Err(Error::InvalidDistortion("empty alphabet".into()));
    }
    match kind {
        DistortionKind::Hamming => {
            let mut values = vec![1.0; k * k];
            let mut exact = vec![BigRational::from_integer(BigInt::from(1)); k * k];
            for i in 0..k {
                values[i * k + i] = 0.0;
                exact[i * k + i] = BigRational::from_integer(BigInt::from(0));
            }
            DistortionMatrix::from_parts(values, exact, k)
        }
        DistortionKind::LpPower(p) => {
            if !p.is_finite() || p < 1.0 {
                return Err(Error::InvalidDistortion(format!(
                    "exponent must be a finite real >= 1, got {p}"
                )));
            }
            let mut values = vec![0.0; k * k];
            let mut exact = vec![BigRational::from_integer(BigInt::from(0)); k * k];
            let int_p = if p.fract() == 0.0 && p <= 63.0 {
                Some(p as u32)
            } else {
                None
            };
            for x in 0..k {
                for y in 0..k {
                    let gap = (x as f64 - y as f64).abs();
                    let v = gap.powf(p);
                    values[x * k + y] = v;
                    exact[x * k + y] = match int_p {
                        Some(q) => {
                            let base = BigInt::from((x as i64 - y as i64).abs());
                            BigRational::from_integer(base.pow(q))
                        }
                        None => exact_from_f64(v),
                    };
                }
            }
            DistortionMatrix::from_parts(values, exact, k)
        }
        DistortionKind::Explicit(values) => {
            let exact = values.iter().map(|&v| exact_from_f64(v)).collect();
            DistortionMatrix::from_parts(values, exact, k)
        }
    }
}

/// The exact rational equal to a finite binary float.
pub(crate) fn exact_from_f64(v: f64) -> BigRational {
    Ratio::from_float(v).expect("finite float")
}

/// Kullback-Leibler divergence `D(p || q)` in nats.
///
/// Terms with `p_i = 0` contribute zero; a term with `p_i > 0, q_i = 0`
/// makes the divergence `+inf`.
pub fn kl_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    if p.k() != q.k() {
        return Err(Error::Dimension(format!(
            "alphabets differ: {} vs {}",
            p.k(),
            q.k()
        )));
    }
    let mut acc = 0.0;
    for i in 0..p.k() {
        let (pi, qi) = (p.get(i), q.get(i));
        if pi > 0.0 {
            if qi == 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += pi * (pi / qi).ln();
        }
    }
    // Gibbs: the exact value is nonnegative, so tiny negative float residue
    // is rounding noise.
    Ok(acc.max(0.0))
}

/// Expected distortion of a coupling, `sum_{x,y} c(x,y) d(x,y)`.
pub fn expected_distortion(c: &Coupling, d: &DistortionMatrix) -> Result<f64> {
    if c.k() != d.k() {
        return Err(Error::Dimension(format!(
            "alphabets differ: {} vs {}",
            c.k(),
            d.k()
        )));
    }
    let mut acc = 0.0;
    for x in 0..c.k() {
        for y in 0..c.k() {
            acc += c.get(x, y) * d.value(x, y);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pmf_rejects_bad_sum() {
        assert!(Pmf::new(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(Pmf::new(vec![0.5, 0.5 + 1e-15]).is_ok());
    }

    #[test]
    fn pmf_rejects_negative_entries() {
        assert!(Pmf::new(vec![1.1, -0.1]).is_err());
        assert!(Pmf::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn pmf_allows_zero_entries() {
        let p = Pmf::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(p.support(), vec![1]);
    }

    #[test]
    fn kl_matches_hand_value() {
        let p = Pmf::new(vec![0.8, 0.2]).unwrap();
        let q = Pmf::new(vec![0.3, 0.7]).unwrap();
        // 0.8 ln(0.8/0.3) + 0.2 ln(0.2/0.7)
        assert_abs_diff_eq!(
            kl_divergence(&p, &q).unwrap(),
            0.534_110_808_710_307_3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn kl_infinite_off_support() {
        let p = Pmf::new(vec![0.5, 0.5]).unwrap();
        let q = Pmf::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(kl_divergence(&p, &q).unwrap(), f64::INFINITY);
        // The other direction is finite: zero mass never pays.
        assert_abs_diff_eq!(
            kl_divergence(&q, &p).unwrap(),
            (2.0f64).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hamming_is_a_metric() {
        let d = make_distortion(DistortionKind::Hamming, 4).unwrap();
        assert!(d.is_metric());
        assert_eq!(d.value(0, 0), 0.0);
        assert_eq!(d.value(0, 3), 1.0);
    }

    #[test]
    fn squared_distance_on_three_symbols_is_not_a_metric() {
        let d = make_distortion(DistortionKind::LpPower(2.0), 3).unwrap();
        assert_eq!(d.values(), &[0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
        let c = d.certificate();
        assert!(c.symmetric && c.zero_diagonal && !c.triangle);
        assert!(!d.is_metric());
    }

    #[test]
    fn l1_distance_is_a_metric() {
        let d = make_distortion(DistortionKind::LpPower(1.0), 5).unwrap();
        assert!(d.is_metric());
    }

    #[test]
    fn lp_power_exact_entries_are_integers() {
        let d = make_distortion(DistortionKind::LpPower(3.0), 4).unwrap();
        assert_eq!(
            d.exact_value(0, 3),
            &BigRational::from_integer(BigInt::from(27))
        );
    }

    #[test]
    fn coupling_marginals() {
        let c = Coupling::new(vec![0.4, 0.1, 0.2, 0.3], 2).unwrap();
        assert_abs_diff_eq!(c.x_marginal().get(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y_marginal().get(0), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn expected_distortion_of_diagonal_coupling_is_zero() {
        let c = Coupling::new(vec![0.7, 0.0, 0.0, 0.3], 2).unwrap();
        let d = make_distortion(DistortionKind::Hamming, 2).unwrap();
        assert_eq!(expected_distortion(&c, &d).unwrap(), 0.0);
    }

    fn arb_pmf(k: usize) -> impl Strategy<Value = Pmf> {
        proptest::collection::vec(1e-6..1.0f64, k).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            let mut v: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let resid: f64 = 1.0 - v.iter().sum::<f64>();
            v[0] += resid;
            Pmf::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_diagonal(p in arb_pmf(4), q in arb_pmf(4)) {
            let v = kl_divergence(&p, &q).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn kl_zero_implies_equal(p in arb_pmf(3), q in arb_pmf(3)) {
            let v = kl_divergence(&p, &q).unwrap();
            if v == 0.0 {
                for i in 0..3 {
                    prop_assert!((p.get(i) - q.get(i)).abs() < 1e-7);
                }
            }
        }

        #[test]
        fn expected_distortion_within_range(
            raw in proptest::collection::vec(0.0..1.0f64, 9),
        ) {
            let s: f64 = raw.iter().sum();
            let mut v: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let resid: f64 = 1.0 - v.iter().sum::<f64>();
            v[0] += resid;
            let c = Coupling::new(v, 3).unwrap();
            let d = make_distortion(DistortionKind::LpPower(2.0), 3).unwrap();
            let e = expected_distortion(&c, &d).unwrap();
            prop_assert!(e >= 0.0 && e <= d.max_value() + 1e-12);
        }
    }
}
