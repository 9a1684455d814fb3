//! Type classes and conditional type classes of sequences on a finite
//! alphabet, and the dominant attack channel built from them.
//!
//! A composition records symbol counts of a length-`n` sequence; a joint
//! composition records pair counts of two aligned sequences. The attack
//! channel picks, uniformly at random, one admissible conditional class of
//! the intercepted sequence (total distortion at most `n * delta`, decided
//! in exact arithmetic), then a uniformly random sequence inside it. Class
//! counts use exact integer arithmetic throughout: uniformity is exact, not
//! approximate.

use crate::exact::{AdmissibilityCheck, DistortionBound};
use crate::simplex::{DistortionMatrix, Pmf};
use crate::{Error, Result};
use num_bigint::BigUint;
use rand::Rng;

/// Hard cap on materialized joint compositions per call; past it the call
/// reports a resource error rather than grinding on.
pub const COMPOSITION_BUDGET: u64 = 10_000_000;

/// Symbol counts of a length-`n` sequence: a type on `{0..K-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Composition {
    counts: Vec<u32>,
}

impl Composition {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Dimension("empty alphabet".into()));
        }
        Ok(Self { counts })
    }

    /// The type of a sequence of symbols drawn from `{0..k-1}`.
    pub fn of_sequence(seq: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![0u32; k];
        for (pos, &s) in seq.iter().enumerate() {
            if s >= k {
                return Err(Error::InvalidParameter(format!(
                    "symbol {s} at position {pos} outside alphabet of size {k}"
                )));
            }
            counts[s] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// The empirical distribution `counts / n`.
    pub fn to_pmf(&self) -> Result<Pmf> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty sequence has no type".into()));
        }
        let mut v: Vec<f64> = self.counts.iter().map(|&c| c as f64 / n as f64).collect();
        let resid: f64 = 1.0 - v.iter().sum::<f64>();
        v[0] += resid;
        Pmf::new(v)
    }

    /// All types of length-`n` sequences on `k` symbols, in lexicographic
    /// order of the count vectors.
    pub fn enumerate_all(n: u32, k: usize) -> Vec<Composition> {
        let mut out = Vec::new();
        let mut buf = vec![0u32; k];
        fill_compositions(n, 0, &mut buf, &mut out);
        out
    }
}

fn fill_compositions(rem: u32, cell: usize, buf: &mut Vec<u32>, out: &mut Vec<Composition>) {
    if cell == buf.len() - 1 {
        buf[cell] = rem;
        out.push(Composition {
            counts: buf.clone(),
        });
        return;
    }
    for v in 0..=rem {
        buf[cell] = v;
        fill_compositions(rem - v, cell + 1, buf, out);
    }
}

/// Pair counts of two aligned sequences, row-major; rows index the first
/// sequence's symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointComposition {
    counts: Vec<u32>,
    k: usize,
}

impl JointComposition {
    pub fn new(counts: Vec<u32>, k: usize) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Dimension(format!(
                "joint composition has {} cells, expected {}",
                counts.len(),
                k * k
            )));
        }
        Ok(Self { counts, k })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[x * self.k + y]
    }

    pub fn row_sums(&self) -> Composition {
        let counts = (0..self.k)
            .map(|x| (0..self.k).map(|y| self.get(x, y)).sum())
            .collect();
        Composition { counts }
    }

    pub fn col_sums(&self) -> Composition {
        let counts = (0..self.k)
            .map(|y| (0..self.k).map(|x| self.get(x, y)).sum())
            .collect();
        Composition { counts }
    }

    pub fn transposed(&self) -> Self {
        let mut counts = vec![0u32; self.k * self.k];
        for x in 0..self.k {
            for y in 0..self.k {
                counts[y * self.k + x] = self.get(x, y);
            }
        }
        Self {
            counts,
            k: self.k,
        }
    }
}

/// `n! / prod(counts_i!)` as an exact integer.
pub fn multinomial(counts: &[u32]) -> BigUint {
    // Product of binomials over prefix sums; each factor stays integral.
    let mut acc = BigUint::from(1u32);
    let mut seen: u64 = 0;
    for &c in counts {
        for t in 1..=c as u64 {
            acc = acc * BigUint::from(seen + t) / BigUint::from(t);
        }
        seen += c as u64;
    }
    acc
}

/// Number of sequences with the given type.
pub fn type_class_size(c: &Composition) -> BigUint {
    multinomial(c.counts())
}

/// Number of output sequences in the conditional class of a joint
/// composition, for a fixed input sequence: the product over input symbols
/// of multinomials of that symbol's output counts.
pub fn conditional_class_size(j: &JointComposition) -> BigUint {
    let mut acc = BigUint::from(1u32);
    for x in 0..j.k() {
        let row: Vec<u32> = (0..j.k()).map(|y| j.get(x, y)).collect();
        acc *= multinomial(&row);
    }
    acc
}

/// Number of aligned sequence pairs with the given joint composition.
pub fn joint_class_size(j: &JointComposition) -> BigUint {
    multinomial(j.counts())
}

/// Depth-first enumeration of admissible joint compositions with fixed row
/// sums, in lexicographic order of the flattened count matrix. The visitor
/// may abort by returning an error.
fn visit_admissible<F>(
    x_type: &Composition,
    d: &DistortionMatrix,
    delta: &DistortionBound,
    f: &mut F,
) -> Result<()>
where
    F: FnMut(&[u32], &JointComposition) -> Result<()>,
{
    let k = x_type.k();
    if d.k() != k {
        return Err(Error::Dimension(format!(
            "type on {k} symbols against distortion on {} symbols",
            d.k()
        )));
    }
    let check = AdmissibilityCheck::new(d, delta, x_type.n());
    let mut buf = vec![0u32; k * k];
    match check.small_weights() {
        Some((w, bound)) => {
            // Cheapest possible completion per row, for pruning.
            let row_min: Vec<i128> = (0..k)
                .map(|i| (0..k).map(|j| w[i * k + j]).min().unwrap())
                .collect();
            let tail_min: Vec<i128> = (0..=k)
                .map(|i| {
                    (i..k)
                        .map(|r| row_min[r] * x_type.counts()[r] as i128)
                        .sum()
                })
                .collect();
            descend_small(
                x_type, w, bound, &row_min, &tail_min, 0, 0, 0, 0, &mut buf, f,
            )
        }
        None => descend_checked(x_type, &check, 0, 0, x_type.counts()[0], &mut buf, f),
    }
}

#[allow(clippy::too_many_arguments)]
fn descend_small<F>(
    x_type: &Composition,
    w: &[i128],
    bound: i128,
    row_min: &[i128],
    tail_min: &[i128],
    row: usize,
    cell: usize,
    row_used: u32,
    weight: i128,
    buf: &mut Vec<u32>,
    f: &mut F,
) -> Result<()>
where
    F: FnMut(&[u32], &JointComposition) -> Result<()>,
{
    let k = x_type.k();
    if row == k {
        let jc = JointComposition {
            counts: buf.clone(),
            k,
        };
        return f(buf, &jc);
    }
    let rem = x_type.counts()[row] - row_used;
    let idx = row * k + cell;
    if cell == k - 1 {
        let new_weight = weight + rem as i128 * w[idx];
        if new_weight + tail_min[row + 1] <= bound {
            buf[idx] = rem;
            descend_small(
                x_type,
                w,
                bound,
                row_min,
                tail_min,
                row + 1,
                0,
                0,
                new_weight,
                buf,
                f,
            )?;
            buf[idx] = 0;
        }
        return Ok(());
    }
    // Cheapest completion of the rest of this row.
    let rest_min = (cell + 1..k).map(|j| w[row * k + j]).min().unwrap();
    for v in 0..=rem {
        let new_weight = weight + v as i128 * w[idx];
        let floor = new_weight + (rem - v) as i128 * rest_min + tail_min[row + 1];
        if floor <= bound {
            buf[idx] = v;
            descend_small(
                x_type,
                w,
                bound,
                row_min,
                tail_min,
                row,
                cell + 1,
                row_used + v,
                new_weight,
                buf,
                f,
            )?;
            buf[idx] = 0;
        }
    }
    Ok(())
}

fn descend_checked<F>(
    x_type: &Composition,
    check: &AdmissibilityCheck,
    row: usize,
    cell: usize,
    rem: u32,
    buf: &mut Vec<u32>,
    f: &mut F,
) -> Result<()>
where
    F: FnMut(&[u32], &JointComposition) -> Result<()>,
{
    let k = x_type.k();
    if row == k {
        if check.admits(buf) {
            let jc = JointComposition {
                counts: buf.clone(),
                k,
            };
            f(buf, &jc)?;
        }
        return Ok(());
    }
    let idx = row * k + cell;
    if cell == k - 1 {
        buf[idx] = rem;
        let next_rem = if row + 1 < k {
            x_type.counts()[row + 1]
        } else {
            0
        };
        descend_checked(x_type, check, row + 1, 0, next_rem, buf, f)?;
        buf[idx] = 0;
        return Ok(());
    }
    for v in 0..=rem {
        buf[idx] = v;
        descend_checked(x_type, check, row, cell + 1, rem - v, buf, f)?;
        buf[idx] = 0;
    }
    Ok(())
}

/// Streaming version of [`enumerate_joint_compositions`]: same order, same
/// budget, no materialized vector.
pub(crate) fn for_each_admissible<F>(
    x_type: &Composition,
    d: &DistortionMatrix,
    delta: &DistortionBound,
    f: &mut F,
) -> Result<()>
where
    F: FnMut(&JointComposition) -> Result<()>,
{
    let mut seen: u64 = 0;
    visit_admissible(x_type, d, delta, &mut |_, jc| {
        seen += 1;
        if seen > COMPOSITION_BUDGET {
            return Err(Error::ResourceBudget(format!(
                "more than {COMPOSITION_BUDGET} admissible joint compositions"
            )));
        }
        f(jc)
    })
}

/// All joint compositions with row sums `x_type` and total distortion at
/// most `n * delta`, in lexicographic order of the flattened counts.
///
/// Fails with a resource error past [`COMPOSITION_BUDGET`] matrices.
pub fn enumerate_joint_compositions(
    x_type: &Composition,
    d: &DistortionMatrix,
    delta: &DistortionBound,
) -> Result<Vec<JointComposition>> {
    let mut out = Vec::new();
    for_each_admissible(x_type, d, delta, &mut |jc| {
        out.push(jc.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Number of admissible conditional type classes for an input of type
/// `x_type`: joint compositions with those row sums and total distortion at
/// most `n * delta`.
pub fn count_admissible_conditional_classes(
    x_type: &Composition,
    d: &DistortionMatrix,
    delta: &DistortionBound,
) -> Result<u128> {
    if let Some(dp) = DpCounter::build(x_type, d, delta)? {
        return Ok(dp.total());
    }
    let mut count: u128 = 0;
    visit_admissible(x_type, d, delta, &mut |_, _| {
        count += 1;
        if count as u64 > COMPOSITION_BUDGET && count <= u64::MAX as u128 {
            return Err(Error::ResourceBudget(format!(
                "more than {COMPOSITION_BUDGET} admissible joint compositions"
            )));
        }
        Ok(())
    })?;
    Ok(count)
}

/// Largest weight-level table the counting DP will allocate.
const DP_LEVEL_CAP: i128 = 2_000_000;

/// Exact count-and-unrank tables over admissible joint compositions with
/// fixed row sums, indexed in the same lexicographic order as
/// [`enumerate_joint_compositions`].
struct DpCounter {
    k: usize,
    row_sums: Vec<u32>,
    w: Vec<usize>,
    bound: usize,
    /// `mid[i][j - 1][m][b]`: ways to fill cells `j..k-1` of row `i` with
    /// count `m` and weight exactly `b`, for interior `j` in `1..k-1`.
    mid: Vec<Vec<Vec<Vec<u128>>>>,
    /// `cum_suffix[i][t]`: ways to fill rows `i..` with total weight <= `t`.
    cum_suffix: Vec<Vec<u128>>,
}

impl DpCounter {
    /// Returns `None` when the integer-cleared weights do not fit a small
    /// level table, in which case callers fall back to enumeration.
    fn build(
        x_type: &Composition,
        d: &DistortionMatrix,
        delta: &DistortionBound,
    ) -> Result<Option<Self>> {
        let k = x_type.k();
        if d.k() != k {
            return Err(Error::Dimension(format!(
                "type on {k} symbols against distortion on {} symbols",
                d.k()
            )));
        }
        let check = AdmissibilityCheck::new(d, delta, x_type.n());
        let (w_raw, bound_raw) = match check.small_weights() {
            Some(t) => t,
            None => return Ok(None),
        };
        if bound_raw < 0 {
            // Negative budget admits nothing.
            return Err(Error::NoAdmissibleClass(format!(
                "budget {} is below every attainable distortion",
                delta.to_f64()
            )));
        }
        if bound_raw > DP_LEVEL_CAP {
            return Ok(None);
        }
        let bound = bound_raw as usize;
        // Weights above the bound are saturated: one unit already overshoots.
        let w: Vec<usize> = w_raw
            .iter()
            .map(|&x| x.min(bound_raw + 1) as usize)
            .collect();
        let row_sums = x_type.counts().to_vec();

        let mut mid = Vec::with_capacity(k);
        let mut row_exact: Vec<Vec<u128>> = Vec::with_capacity(k);
        for i in 0..k {
            let r = row_sums[i] as usize;
            // tail[m][b] for cells j..: built from the last cell backwards.
            let mut tail = vec![vec![0u128; bound + 1]; r + 1];
            for m in 0..=r {
                let wt = m * w[i * k + (k - 1)];
                if wt <= bound {
                    tail[m][wt] = 1;
                }
            }
            let mut interior = Vec::new();
            for j in (1..k - 1).rev() {
                let mut next = vec![vec![0u128; bound + 1]; r + 1];
                for m in 0..=r {
                    for v in 0..=m {
                        let wt = v * w[i * k + j];
                        if wt > bound {
                            break;
                        }
                        for b in 0..=bound - wt {
                            let ways = tail[m - v][b];
                            if ways != 0 {
                                let slot = &mut next[m][b + wt];
                                *slot = match slot.checked_add(ways) {
                                    Some(s) => s,
                                    None => return Ok(None),
                                };
                            }
                        }
                    }
                }
                interior.push(next.clone());
                tail = next;
            }
            interior.reverse();
            mid.push(interior);
            // Full-row table: one more cell in front.
            let mut full = vec![0u128; bound + 1];
            if k == 1 {
                let wt = r * w[i * k];
                if wt <= bound {
                    full[wt] = 1;
                }
            } else {
                for v in 0..=r {
                    let wt = v * w[i * k];
                    if wt > bound {
                        break;
                    }
                    for b in 0..=bound - wt {
                        let ways = tail[r - v][b];
                        if ways != 0 {
                            let slot = &mut full[b + wt];
                            *slot = match slot.checked_add(ways) {
                                Some(s) => s,
                                None => return Ok(None),
                            };
                        }
                    }
                }
            }
            row_exact.push(full);
        }

        // Suffix convolution over rows, then cumulative sums in the budget.
        let mut suffix_exact = vec![0u128; bound + 1];
        suffix_exact[0] = 1;
        let mut cum_suffix = vec![vec![0u128; bound + 1]; k + 1];
        cum_suffix[k] = vec![1; bound + 1];
        for i in (0..k).rev() {
            let mut next = vec![0u128; bound + 1];
            for b1 in 0..=bound {
                let a = row_exact[i][b1];
                if a == 0 {
                    continue;
                }
                for b2 in 0..=bound - b1 {
                    let c = suffix_exact[b2];
                    if c != 0 {
                        let slot = &mut next[b1 + b2];
                        *slot = match a.checked_mul(c).and_then(|p| slot.checked_add(p)) {
                            Some(s) => s,
                            None => return Ok(None),
                        };
                    }
                }
            }
            suffix_exact = next;
            let mut acc = 0u128;
            for b in 0..=bound {
                acc = match acc.checked_add(suffix_exact[b]) {
                    Some(s) => s,
                    None => return Ok(None),
                };
                cum_suffix[i][b] = acc;
            }
        }

        Ok(Some(Self {
            k,
            row_sums,
            w,
            bound,
            mid,
            cum_suffix,
        }))
    }

    fn total(&self) -> u128 {
        self.cum_suffix[0][self.bound]
    }

    /// Ways to finish cells `j..` of row `i` holding count `m`, then all later
    /// rows, within remaining budget `budget`.
    fn completions(&self, i: usize, j: usize, m: usize, budget: usize) -> u128 {
        let k = self.k;
        if j == k - 1 {
            let wt = m * self.w[i * k + j];
            if wt > budget {
                return 0;
            }
            return self.cum_suffix[i + 1][budget - wt];
        }
        let table = &self.mid[i][j - 1];
        let mut acc = 0u128;
        for b in 0..=budget.min(self.bound) {
            let ways = table[m][b];
            if ways != 0 {
                acc += ways * self.cum_suffix[i + 1][budget - b];
            }
        }
        acc
    }

    /// The joint composition at `rank` in lexicographic order.
    fn unrank(&self, mut rank: u128) -> JointComposition {
        let k = self.k;
        let mut buf = vec![0u32; k * k];
        let mut budget = self.bound;
        for i in 0..k {
            let mut m = self.row_sums[i] as usize;
            for j in 0..k - 1 {
                let mut chosen = 0;
                for v in 0..=m {
                    let wt = v * self.w[i * k + j];
                    if wt > budget {
                        break;
                    }
                    let block = self.completions(i, j + 1, m - v, budget - wt);
                    if rank < block {
                        chosen = v;
                        break;
                    }
                    rank -= block;
                }
                buf[i * k + j] = chosen as u32;
                budget -= chosen * self.w[i * k + j];
                m -= chosen;
            }
            buf[i * k + (k - 1)] = m as u32;
            budget -= m * self.w[i * k + (k - 1)];
        }
        JointComposition { counts: buf, k }
    }
}

enum SamplerBody {
    Dp(DpCounter),
    Listed(Vec<JointComposition>),
}

/// Samples admissible conditional classes of a fixed input type uniformly,
/// by exact counting.
pub struct AttackSampler {
    body: SamplerBody,
    total: u128,
}

impl AttackSampler {
    pub fn new(
        x_type: &Composition,
        d: &DistortionMatrix,
        delta: &DistortionBound,
    ) -> Result<Self> {
        let body = match DpCounter::build(x_type, d, delta)? {
            Some(dp) => SamplerBody::Dp(dp),
            None => SamplerBody::Listed(enumerate_joint_compositions(x_type, d, delta)?),
        };
        let total = match &body {
            SamplerBody::Dp(dp) => dp.total(),
            SamplerBody::Listed(v) => v.len() as u128,
        };
        if total == 0 {
            return Err(Error::NoAdmissibleClass(format!(
                "no joint composition with row sums {:?} meets the budget",
                x_type.counts()
            )));
        }
        Ok(Self { body, total })
    }

    /// Number of admissible classes.
    pub fn count(&self) -> u128 {
        self.total
    }

    /// One class, uniformly at random: a single 128-bit index draw
    /// (rejection-resampled to remove modulo bias), then deterministic
    /// unranking in lexicographic order.
    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> JointComposition {
        let rank = uniform_u128_below(self.total, rng);
        match &self.body {
            SamplerBody::Dp(dp) => dp.unrank(rank),
            SamplerBody::Listed(v) => v[rank as usize].clone(),
        }
    }
}

fn uniform_u128_below<R: Rng + ?Sized>(n: u128, rng: &mut R) -> u128 {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let zone = u128::MAX - (u128::MAX % n + 1) % n;
    loop {
        let hi = rng.next_u64() as u128;
        let lo = rng.next_u64() as u128;
        let v = (hi << 64) | lo;
        if v <= zone {
            return v % n;
        }
    }
}

/// Rewrites `x` into an output sequence with the given joint composition:
/// for each input symbol, in ascending order, the prescribed output counts
/// are laid out in ascending symbol order and dealt to that symbol's
/// positions by one Fisher-Yates shuffle.
pub fn realize_output<R: Rng + ?Sized>(
    x: &[usize],
    class: &JointComposition,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = class.k();
    let x_type = Composition::of_sequence(x, k)?;
    if x_type != class.row_sums() {
        return Err(Error::InvalidParameter(
            "joint composition row sums do not match the input type".into(),
        ));
    }
    let mut y = vec![0usize; x.len()];
    for a in 0..k {
        let positions: Vec<usize> = (0..x.len()).filter(|&t| x[t] == a).collect();
        if positions.is_empty() {
            continue;
        }
        let mut symbols = Vec::with_capacity(positions.len());
        for b in 0..k {
            for _ in 0..class.get(a, b) {
                symbols.push(b);
            }
        }
        // Fisher-Yates, high index down, one bounded draw per step.
        for i in (1..symbols.len()).rev() {
            let j = rng.random_range(0..=i);
            symbols.swap(i, j);
        }
        for (t, &pos) in positions.iter().enumerate() {
            y[pos] = symbols[t];
        }
    }
    Ok(y)
}

/// One draw from the dominant attack channel: a uniformly random admissible
/// conditional class of `x`, then a uniformly random sequence in it.
///
/// Randomness is consumed in a documented order: first the class-index draw
/// of [`AttackSampler::sample_class`], then the per-input-symbol shuffles of
/// [`realize_output`], input symbols ascending. The output always satisfies
/// the distortion constraint.
pub fn sample_attack_output<R: Rng + ?Sized>(
    x: &[usize],
    d: &DistortionMatrix,
    delta: &DistortionBound,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty input sequence".into()));
    }
    let x_type = Composition::of_sequence(x, d.k())?;
    let sampler = AttackSampler::new(&x_type, d, delta)?;
    let class = sampler.sample_class(rng);
    realize_output(x, &class, rng)
}
