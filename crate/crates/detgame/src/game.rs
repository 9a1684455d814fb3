//! Exact finite-blocklength play of the game: the law a uniform-over-classes
//! attack induces on output types, the three detector families, and their
//! error probabilities summed without sampling.
//!
//! Everything that can be a rational stays a rational until the final
//! conversion, so the per-type law normalizes to one exactly and the error
//! sums carry only the rounding of the last multiply.

use crate::exact::DistortionBound;
use crate::exponents::GameSpec;
use crate::gendiv::gen_divergence_empirical;
use crate::simplex::{DistortionMatrix, Pmf};
use crate::types::{
    conditional_class_size, enumerate_joint_compositions, type_class_size, Composition,
};
use crate::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::HashMap;

/// The law on output types induced by sending `n` symbols from `p` through
/// the attack that picks an admissible conditional class uniformly, then a
/// sequence uniformly inside it.
///
/// `probs[i]` is the probability of each single sequence of type
/// `comps[i]`; the type's total mass is that times its class size.
#[derive(Debug, Clone)]
pub struct InducedOutputPmf {
    n: u32,
    k: usize,
    comps: Vec<Composition>,
    probs: Vec<BigRational>,
    index: HashMap<Vec<u32>, usize>,
}

impl InducedOutputPmf {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// All output types at this blocklength, lexicographic.
    pub fn compositions(&self) -> &[Composition] {
        &self.comps
    }

    pub fn index_of(&self, y: &Composition) -> Option<usize> {
        self.index.get(y.counts()).copied()
    }

    /// Probability of one particular sequence of the given type.
    pub fn sequence_prob(&self, i: usize) -> f64 {
        rat_to_f64(&self.probs[i])
    }

    /// Natural log of the sequence probability, safe far below `f64`
    /// underflow.
    pub fn ln_sequence_prob(&self, i: usize) -> f64 {
        ln_rat(&self.probs[i])
    }

    /// Total mass of the type class.
    pub fn type_prob(&self, i: usize) -> f64 {
        rat_to_f64(&self.type_prob_exact(i))
    }

    pub fn type_prob_exact(&self, i: usize) -> BigRational {
        let size = BigRational::from_integer(BigInt::from(type_class_size(&self.comps[i])));
        &self.probs[i] * size
    }

    /// Exact total mass over all types; one unless something is wrong.
    pub fn total_mass_exact(&self) -> BigRational {
        (0..self.comps.len())
            .map(|i| self.type_prob_exact(i))
            .sum()
    }
}

fn rat_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    // Numerator and denominator can each dwarf the float range even when
    // their ratio is tame, so divide as integers at 57 significant bits and
    // track the binary exponent separately.
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    let shift = den.bits() as i64 + 57 - num.bits() as i64;
    let scaled: BigUint = if shift >= 0 {
        num << shift as u64
    } else {
        num >> (-shift) as u64
    };
    let q = scaled / den;
    let v = scale_exp2(u64::try_from(&q).unwrap() as f64, -shift);
    if r.numer().is_negative() {
        -v
    } else {
        v
    }
}

/// `v * 2^e` without overflowing intermediates for any `e`.
fn scale_exp2(mut v: f64, mut e: i64) -> f64 {
    while e > 900 {
        v *= (900f64).exp2();
        e -= 900;
        if v.is_infinite() {
            return v;
        }
    }
    while e < -900 {
        v *= (-900f64).exp2();
        e += 900;
        if v == 0.0 {
            return 0.0;
        }
    }
    v * (e as f64).exp2()
}

fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 53 {
        return (u64::try_from(x).unwrap() as f64).ln();
    }
    let top: BigUint = x >> (bits - 53);
    (u64::try_from(&top).unwrap() as f64).ln() + (bits - 53) as f64 * std::f64::consts::LN_2
}

fn ln_rat(r: &BigRational) -> f64 {
    if r.is_zero() {
        return f64::NEG_INFINITY;
    }
    ln_big(r.numer().magnitude()) - ln_big(r.denom().magnitude())
}

/// Exact dyadic rational equal to the float.
fn rat_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite float")
}

/// Builds the induced output-type law for one hypothesis.
pub fn induced_output_pmf(
    p: &Pmf,
    d: &DistortionMatrix,
    delta: f64,
    n: u32,
) -> Result<InducedOutputPmf> {
    let k = p.k();
    if d.k() != k {
        return Err(Error::Dimension(format!(
            "source on {k} symbols against a {}-symbol distortion",
            d.k()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("blocklength zero".into()));
    }
    let bound = DistortionBound::from_f64(delta)?;
    // The float weights rarely sum to one as exact rationals; renormalize
    // so the induced law is an exact probability law.
    let p_rat: Vec<BigRational> = {
        let raw: Vec<BigRational> = p.as_slice().iter().map(|&v| rat_from_f64(v)).collect();
        let total: BigRational = raw.iter().cloned().sum();
        raw.into_iter().map(|v| v / &total).collect()
    };

    let comps = Composition::enumerate_all(n, k);
    let index: HashMap<Vec<u32>, usize> = comps
        .iter()
        .enumerate()
        .map(|(i, c)| (c.counts().to_vec(), i))
        .collect();
    let mut probs = vec![BigRational::zero(); comps.len()];

    for rho in &comps {
        // Per-sequence probability of any input of this type.
        let mut p_n = BigRational::one();
        let mut dead = false;
        for (i, &c) in rho.counts().iter().enumerate() {
            if c == 0 {
                continue;
            }
            if p_rat[i].is_zero() {
                dead = true;
                break;
            }
            p_n *= pow_rat(&p_rat[i], c);
        }
        if dead {
            continue;
        }
        let joints = enumerate_joint_compositions(rho, d, &bound)?;
        if joints.is_empty() {
            return Err(Error::NoAdmissibleClass(format!(
                "input type {:?} admits no attack class",
                rho.counts()
            )));
        }
        let c_n = BigRational::new(BigInt::one(), BigInt::from(joints.len()));
        for j in &joints {
            let tau = j.col_sums();
            let slot = index[tau.counts()];
            // Sequences x of the row type consistent with a fixed y of the
            // column type, over sequences y consistent with a fixed x.
            let back = BigRational::from_integer(BigInt::from(conditional_class_size(
                &j.transposed(),
            )));
            let fwd = BigRational::from_integer(BigInt::from(conditional_class_size(j)));
            probs[slot] += &p_n * &c_n * back / fwd;
        }
    }
    Ok(InducedOutputPmf {
        n,
        k,
        comps,
        probs,
        index,
    })
}

fn pow_rat(base: &BigRational, e: u32) -> BigRational {
    let mut out = BigRational::one();
    let mut acc = base.clone();
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            out *= &acc;
        }
        e >>= 1;
        if e > 0 {
            acc = &acc * &acc;
        }
    }
    out
}

/// Which tie-break the likelihood-style detectors use: a tie accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayesMode {
    /// Threshold the log ratio of the two induced laws.
    Ratio,
    /// Threshold the difference of the two empirical constrained
    /// divergences.
    Divergence,
}

/// A detector family, parameterized by its level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defense {
    /// Accept with probability `exp(-n (lambda - div)+)`: randomized near
    /// the null, certain once the type strays far enough.
    Np { lambda: f64 },
    /// Deterministic cost-weighted tests; ties accept.
    Bayes { a: f64, mode: BayesMode },
}

/// A defense bound to a game and blocklength, with whatever precomputation
/// its family needs.
#[derive(Debug, Clone)]
pub struct DefenseEval {
    spec: GameSpec,
    defense: Defense,
    n: u32,
    q0: Option<InducedOutputPmf>,
    q1: Option<InducedOutputPmf>,
}

impl DefenseEval {
    pub fn new(spec: &GameSpec, defense: &Defense, n: u32) -> Result<Self> {
        let (q0, q1) = match defense {
            Defense::Bayes {
                mode: BayesMode::Ratio,
                ..
            } => (
                Some(induced_output_pmf(spec.p0(), spec.d(), spec.delta0(), n)?),
                Some(induced_output_pmf(spec.p1(), spec.d(), spec.delta1(), n)?),
            ),
            _ => (None, None),
        };
        match defense {
            Defense::Np { lambda } => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "acceptance floor {lambda} must be finite and nonnegative"
                    )));
                }
            }
            Defense::Bayes { a, .. } => {
                if !a.is_finite() || *a < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "cost tilt {a} must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            defense: *defense,
            n,
            q0,
            q1,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn defense(&self) -> &Defense {
        &self.defense
    }

    /// The decision statistic in nats per symbol: the empirical constrained
    /// divergence from the null for `Np`, the normalized log likelihood
    /// ratio for `Ratio`, the divergence difference for `Divergence`.
    /// Infinite values mark types one side cannot produce at all.
    pub fn score(&self, y: &Composition) -> Result<f64> {
        if y.k() != self.spec.k() || y.n() != self.n {
            return Err(Error::Dimension(format!(
                "type with k = {}, n = {} against k = {}, n = {}",
                y.k(),
                y.n(),
                self.spec.k(),
                self.n
            )));
        }
        match self.defense {
            Defense::Np { .. } => {
                let bound = DistortionBound::from_f64(self.spec.delta0())?;
                Ok(gen_divergence_empirical(y, self.spec.p0(), self.spec.d(), &bound)?.value)
            }
            Defense::Bayes { mode, .. } => match mode {
                BayesMode::Ratio => {
                    let q0 = self.q0.as_ref().unwrap();
                    let q1 = self.q1.as_ref().unwrap();
                    let i = q0
                        .index_of(y)
                        .ok_or_else(|| Error::Dimension("type outside the law".into()))?;
                    let l0 = q0.ln_sequence_prob(i);
                    let l1 = q1.ln_sequence_prob(i);
                    // A type neither hypothesis can produce never weighs in
                    // an error sum; pushing it to +inf keeps the tie
                    // convention of accepting.
                    if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
                        return Ok(f64::INFINITY);
                    }
                    Ok((l1 - l0) / self.n as f64)
                }
                BayesMode::Divergence => {
                    let b0 = DistortionBound::from_f64(self.spec.delta0())?;
                    let b1 = DistortionBound::from_f64(self.spec.delta1())?;
                    let v0 =
                        gen_divergence_empirical(y, self.spec.p0(), self.spec.d(), &b0)?.value;
                    let v1 =
                        gen_divergence_empirical(y, self.spec.p1(), self.spec.d(), &b1)?.value;
                    Ok(if !v0.is_finite() {
                        f64::INFINITY
                    } else if !v1.is_finite() {
                        f64::NEG_INFINITY
                    } else {
                        v0 - v1
                    })
                }
            },
        }
    }

    /// Probability of deciding for the alternative on seeing a sequence of
    /// this type. Ties accept.
    pub fn accept_prob(&self, y: &Composition) -> Result<f64> {
        let s = self.score(y)?;
        Ok(match self.defense {
            Defense::Np { lambda } => {
                let short = (lambda - s).max(0.0);
                (-(self.n as f64) * short).exp()
            }
            Defense::Bayes { a, .. } => {
                if s >= a {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }
}

/// The randomized acceptance curve: certain acceptance once the empirical
/// constrained divergence from the null clears the floor, exponentially
/// damped below it.
pub fn np_defense_prob(
    spec: &GameSpec,
    lambda: f64,
    n: u32,
    y: &Composition,
) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "acceptance floor {lambda} must be finite and nonnegative"
        )));
    }
    let bound = DistortionBound::from_f64(spec.delta0())?;
    let v = gen_divergence_empirical(y, spec.p0(), spec.d(), &bound)?.value;
    let short = (lambda - v).max(0.0);
    Ok((-(n as f64) * short).exp())
}

/// Convenience constructor for the cost-weighted detectors.
pub fn bayes_defense(spec: &GameSpec, a: f64, mode: BayesMode, n: u32) -> Result<DefenseEval> {
    DefenseEval::new(spec, &Defense::Bayes { a, mode }, n)
}

/// Both error probabilities of a defense at blocklength `n`, summed exactly
/// over output types.
#[derive(Debug, Clone, Copy)]
pub struct ExactErrorProbs {
    pub n: u32,
    pub false_positive: f64,
    pub false_negative: f64,
}

pub fn exact_error_probs(spec: &GameSpec, defense: &Defense, n: u32) -> Result<ExactErrorProbs> {
    let q0 = induced_output_pmf(spec.p0(), spec.d(), spec.delta0(), n)?;
    let q1 = induced_output_pmf(spec.p1(), spec.d(), spec.delta1(), n)?;
    let eval = match defense {
        Defense::Bayes {
            a,
            mode: BayesMode::Ratio,
        } => DefenseEval {
            spec: spec.clone(),
            defense: Defense::Bayes {
                a: *a,
                mode: BayesMode::Ratio,
            },
            n,
            q0: Some(q0.clone()),
            q1: Some(q1.clone()),
        },
        other => DefenseEval::new(spec, other, n)?,
    };
    let mut fp = 0.0;
    let mut fnr = 0.0;
    for (i, tau) in q0.compositions().iter().enumerate() {
        let phi = eval.accept_prob(tau)?;
        fp += q0.type_prob(i) * phi;
        fnr += q1.type_prob(i) * (1.0 - phi);
    }
    Ok(ExactErrorProbs {
        n,
        false_positive: fp.clamp(0.0, 1.0),
        false_negative: fnr.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{make_distortion, DistortionKind};
    use crate::types::JointComposition;
    use approx::assert_abs_diff_eq;
    use num_traits::ToPrimitive;

    fn pmf(v: &[f64]) -> Pmf {
        let mut v = v.to_vec();
        let resid: f64 = 1.0 - v.iter().sum::<f64>();
        v[0] += resid;
        Pmf::new(v).unwrap()
    }

    fn game(p0: &[f64], p1: &[f64], delta0: f64, delta1: f64) -> GameSpec {
        let k = p0.len();
        GameSpec::new(
            pmf(p0),
            pmf(p1),
            make_distortion(DistortionKind::Hamming, k).unwrap(),
            delta0,
            delta1,
        )
        .unwrap()
    }

    #[test]
    fn huge_rationals_round_trip_to_floats() {
        // Components far beyond the float range with a tame ratio: the
        // quotient path must stay clear of intermediate overflow.
        let base = rat_from_f64(0.8);
        let mut r = BigRational::one();
        for _ in 0..400 {
            r *= &base;
        }
        for extra in [BigRational::one(), rat_from_f64(1.5e300), rat_from_f64(2e-250)] {
            let v = &r * &extra;
            let direct = rat_to_f64(&v);
            // The log-domain oracle is itself only good to a few parts in
            // 1e13 at these exponent sizes.
            let via_ln = ln_rat(&v).exp();
            assert!(direct.is_finite() && direct > 0.0, "{direct}");
            assert_abs_diff_eq!(direct / via_ln, 1.0, epsilon = 1e-10);
        }
        // Far below the subnormal floor the value flushes to zero, not to
        // garbage.
        let mut tiny = BigRational::one();
        for _ in 0..20 {
            tiny *= &r;
        }
        assert_eq!(rat_to_f64(&tiny), 0.0);
        assert_eq!(rat_to_f64(&BigRational::zero()), 0.0);
    }

    #[test]
    fn induced_law_normalizes_exactly() {
        let d = make_distortion(DistortionKind::Hamming, 2).unwrap();
        let q = induced_output_pmf(&pmf(&[0.7, 0.3]), &d, 0.25, 6).unwrap();
        assert!(q.total_mass_exact().is_one());

        let d3 = make_distortion(DistortionKind::LpPower(1.0), 3).unwrap();
        let q3 = induced_output_pmf(&pmf(&[0.5, 0.3, 0.2]), &d3, 0.5, 4).unwrap();
        assert!(q3.total_mass_exact().is_one());
    }

    #[test]
    fn zero_budget_is_the_plain_product_law() {
        // With no distortion allowed the only admissible class is the
        // diagonal, so each output type carries exactly the source mass.
        // Dyadic weights summing to one keep the renormalization inert.
        let d = make_distortion(DistortionKind::Hamming, 2).unwrap();
        let q = induced_output_pmf(&pmf(&[0.75, 0.25]), &d, 0.0, 5).unwrap();
        let p_rat = (rat_from_f64(0.75), rat_from_f64(0.25));
        for (i, tau) in q.compositions().iter().enumerate() {
            let expect =
                pow_rat(&p_rat.0, tau.counts()[0]) * pow_rat(&p_rat.1, tau.counts()[1]);
            assert_eq!(q.probs[i], expect, "type {:?}", tau.counts());
        }
    }

    #[test]
    fn randomized_curve_matches_the_formula_on_a_pure_type() {
        // At zero budget the empirical divergence of the all-zeros type is
        // the log reciprocal null mass of symbol zero.
        let spec = game(&[0.9, 0.1], &[0.2, 0.8], 0.0, 0.0);
        let y = Composition::new(vec![2, 0]).unwrap();
        let phi = np_defense_prob(&spec, 0.5, 2, &y).unwrap();
        let div = (1.0f64 / 0.9).ln();
        assert_abs_diff_eq!(phi, (-2.0 * (0.5 - div)).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(phi, 0.45417214959437324, epsilon = 1e-12);
    }

    /// Brute force over whole sequences: build the attack kernel row by row
    /// from class counts, push both sources through it, apply the defense.
    fn brute_force_errors(spec: &GameSpec, defense: &Defense, n: u32) -> (f64, f64) {
        let k = spec.k();
        let seqs: Vec<Vec<usize>> = {
            let mut out = vec![vec![]];
            for _ in 0..n {
                out = out
                    .into_iter()
                    .flat_map(|s| {
                        (0..k).map(move |v| {
                            let mut t = s.clone();
                            t.push(v);
                            t
                        })
                    })
                    .collect();
            }
            out
        };
        let eval = DefenseEval::new(spec, defense, n).unwrap();
        let kernel_for = |p: &Pmf, delta: f64| -> Vec<f64> {
            let bound = DistortionBound::from_f64(delta).unwrap();
            let mut out_law = vec![0.0; seqs.len()];
            for x in &seqs {
                let px: f64 = x.iter().map(|&s| p.get(s)).product();
                if px == 0.0 {
                    continue;
                }
                let rho = Composition::of_sequence(x, k).unwrap();
                let classes =
                    enumerate_joint_compositions(&rho, spec.d(), &bound).unwrap();
                let c_n = 1.0 / classes.len() as f64;
                for (yi, y) in seqs.iter().enumerate() {
                    let mut counts = vec![0u32; k * k];
                    for (a, b) in x.iter().zip(y) {
                        counts[a * k + b] += 1;
                    }
                    let j = JointComposition::new(counts, k).unwrap();
                    if classes.iter().any(|c| c.counts() == j.counts()) {
                        let size = conditional_class_size(&j).to_f64().unwrap();
                        out_law[yi] += px * c_n / size;
                    }
                }
            }
            out_law
        };
        let q0 = kernel_for(spec.p0(), spec.delta0());
        let q1 = kernel_for(spec.p1(), spec.delta1());
        let mut fp = 0.0;
        let mut fnr = 0.0;
        for (yi, y) in seqs.iter().enumerate() {
            let tau = Composition::of_sequence(y, k).unwrap();
            let phi = eval.accept_prob(&tau).unwrap();
            fp += q0[yi] * phi;
            fnr += q1[yi] * (1.0 - phi);
        }
        (fp, fnr)
    }

    #[test]
    fn type_sums_match_sequence_sums() {
        let spec = game(&[0.8, 0.2], &[0.3, 0.7], 0.34, 0.34);
        for defense in [
            Defense::Np { lambda: 0.2 },
            Defense::Bayes {
                a: 0.1,
                mode: BayesMode::Ratio,
            },
            Defense::Bayes {
                a: 0.1,
                mode: BayesMode::Divergence,
            },
        ] {
            let exact = exact_error_probs(&spec, &defense, 3).unwrap();
            let (fp, fnr) = brute_force_errors(&spec, &defense, 3);
            assert_abs_diff_eq!(exact.false_positive, fp, epsilon = 1e-12);
            assert_abs_diff_eq!(exact.false_negative, fnr, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_sources_tie_toward_acceptance() {
        let spec = game(&[0.6, 0.4], &[0.6, 0.4], 0.25, 0.25);
        let e = exact_error_probs(
            &spec,
            &Defense::Bayes {
                a: 0.0,
                mode: BayesMode::Ratio,
            },
            4,
        )
        .unwrap();
        assert_abs_diff_eq!(e.false_positive, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.false_negative, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn raising_the_floor_trades_the_errors() {
        let spec = game(&[0.8, 0.2], &[0.2, 0.8], 0.2, 0.2);
        let lo = exact_error_probs(&spec, &Defense::Np { lambda: 0.1 }, 6).unwrap();
        let hi = exact_error_probs(&spec, &Defense::Np { lambda: 0.4 }, 6).unwrap();
        assert!(hi.false_positive <= lo.false_positive + 1e-12);
        assert!(hi.false_negative >= lo.false_negative - 1e-12);
    }

    #[test]
    fn acceptance_floor_is_honored_with_room_to_spare() {
        // The randomized detector keeps the false positive within the
        // polynomial envelope of its design level.
        let spec = game(&[0.8, 0.2], &[0.2, 0.8], 0.2, 0.2);
        let k = 2i32;
        for n in [4u32, 8] {
            for lambda in [0.1, 0.3] {
                let e = exact_error_probs(&spec, &Defense::Np { lambda }, n).unwrap();
                let envelope = ((n + 1) as f64).powi((k * k + 2 * k) * (k - 1) + k)
                    * (-(n as f64) * lambda).exp();
                assert!(
                    e.false_positive <= envelope,
                    "n = {n}, lambda = {lambda}: {} > {envelope}",
                    e.false_positive
                );
            }
        }
    }
}
