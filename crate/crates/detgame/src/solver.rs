//! Log-barrier interior-point engine for the small convex programs behind
//! the divergence and exponent computations.
//!
//! Programs have nonnegative variables, linear equality rows, and convex
//! inequality terms that are either linear or a relative-entropy expression
//! `D(M z || r) <= bound` for a sparse nonnegative map `M`. The objective is
//! linear or a relative entropy of the same shape. A path-following barrier
//! method with damped Newton steps and an equality-constrained KKT solve
//! certifies a duality gap before returning; a solve that cannot certify the
//! requested gap fails loudly instead of returning a guess.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Sparse nonnegative linear map from program variables to an output vector,
/// one entry list per output coordinate.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub out_dim: usize,
    pub entries: Vec<Vec<(usize, f64)>>,
}

impl SparseMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * z[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Linear(Vec<f64>),
    /// `D(M z || r)` in nats; rows of `M` with no entries contribute zero.
    Kl { map: SparseMap, reference: Vec<f64> },
}

#[derive(Debug, Clone)]
pub enum Inequality {
    LinearLe {
        coeffs: Vec<f64>,
        rhs: f64,
    },
    KlLe {
        map: SparseMap,
        reference: Vec<f64>,
        bound: f64,
    },
}

/// Minimize the objective over `z >= 0` subject to equality rows and
/// inequality terms.
#[derive(Debug, Clone)]
pub struct Program {
    pub n_vars: usize,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub inequalities: Vec<Inequality>,
    pub objective: Objective,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Certified bound on the distance to the true optimum.
    pub gap: f64,
    pub newton_iters: usize,
}

const T0: f64 = 1.0;
const MU: f64 = 20.0;
const MAX_OUTER: usize = 64;
const MAX_NEWTON: usize = 200;
const MAX_BACKTRACK: usize = 80;

struct KlParts {
    value: f64,
    /// d value / d m_i for rows with entries.
    dm: Vec<f64>,
    inv_m: Vec<f64>,
}

fn kl_parts(map: &SparseMap, reference: &[f64], z: &[f64]) -> Result<KlParts> {
    let m = map.apply(z);
    let mut value = 0.0;
    let mut dm = vec![0.0; map.out_dim];
    let mut inv_m = vec![0.0; map.out_dim];
    for i in 0..map.out_dim {
        if map.entries[i].is_empty() {
            continue;
        }
        let r = reference[i];
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "relative-entropy reference vanishes at coordinate {i} with live mass"
            )));
        }
        let mi = m[i].max(1e-300);
        let l = (mi / r).ln();
        value += mi * l;
        dm[i] = l + 1.0;
        inv_m[i] = 1.0 / mi;
    }
    Ok(KlParts { value, dm, inv_m })
}

fn objective_value(p: &Program, z: &[f64]) -> Result<f64> {
    match &p.objective {
        Objective::Linear(c) => Ok(c.iter().zip(z).map(|(a, b)| a * b).sum()),
        Objective::Kl { map, reference } => Ok(kl_parts(map, reference, z)?.value),
    }
}

fn inequality_slack(ineq: &Inequality, z: &[f64]) -> Result<f64> {
    match ineq {
        Inequality::LinearLe { coeffs, rhs } => {
            Ok(rhs - coeffs.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
        }
        Inequality::KlLe {
            map,
            reference,
            bound,
        } => Ok(bound - kl_parts(map, reference, z)?.value),
    }
}

/// Barrier objective `t f + phi` with gradient and Hessian, or `None` when
/// `z` leaves the domain.
fn barrier_eval(
    p: &Program,
    z: &[f64],
    t: f64,
    derivatives: bool,
) -> Result<Option<(f64, DVector<f64>, DMatrix<f64>)>> {
    let n = p.n_vars;
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(if derivatives { n } else { 0 }, if derivatives { n } else { 0 });

    let add_kl = |map: &SparseMap,
                      reference: &[f64],
                      z: &[f64],
                      grad: &mut DVector<f64>,
                      hess: &mut DMatrix<f64>,
                      weight: f64,
                      want_grad: Option<&mut DVector<f64>>|
     -> Result<f64> {
        let parts = kl_parts(map, reference, z)?;
        if weight != 0.0 || want_grad.is_some() {
            let mut own_grad = DVector::zeros(n);
            for i in 0..map.out_dim {
                for &(j, a) in &map.entries[i] {
                    own_grad[j] += a * parts.dm[i];
                }
            }
            if weight != 0.0 {
                grad.axpy(weight, &own_grad, 1.0);
                for i in 0..map.out_dim {
                    let w = weight * parts.inv_m[i];
                    if w == 0.0 {
                        continue;
                    }
                    for &(j1, a1) in &map.entries[i] {
                        for &(j2, a2) in &map.entries[i] {
                            hess[(j1, j2)] += w * a1 * a2;
                        }
                    }
                }
            }
            if let Some(g) = want_grad {
                *g = own_grad;
            }
        }
        Ok(parts.value)
    };

    // Objective term.
    match &p.objective {
        Objective::Linear(c) => {
            value += t * c.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            if derivatives {
                for (j, &cj) in c.iter().enumerate() {
                    grad[j] += t * cj;
                }
            }
        }
        Objective::Kl { map, reference } => {
            let w = if derivatives { t } else { 0.0 };
            let v = add_kl(map, reference, z, &mut grad, &mut hess, w, None)?;
            value += t * v;
        }
    }

    // Variable barriers.
    for (j, &zj) in z.iter().enumerate() {
        if zj <= 0.0 {
            return Ok(None);
        }
        value -= zj.ln();
        if derivatives {
            grad[j] -= 1.0 / zj;
            hess[(j, j)] += 1.0 / (zj * zj);
        }
    }

    // Inequality barriers.
    for ineq in &p.inequalities {
        match ineq {
            Inequality::LinearLe { coeffs, rhs } => {
                let s = rhs - coeffs.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
                if s <= 0.0 {
                    return Ok(None);
                }
                value -= s.ln();
                if derivatives {
                    for (j, &cj) in coeffs.iter().enumerate() {
                        grad[j] += cj / s;
                    }
                    for (j1, &c1) in coeffs.iter().enumerate() {
                        if c1 == 0.0 {
                            continue;
                        }
                        for (j2, &c2) in coeffs.iter().enumerate() {
                            hess[(j1, j2)] += c1 * c2 / (s * s);
                        }
                    }
                }
            }
            Inequality::KlLe {
                map,
                reference,
                bound,
            } => {
                let mut g_own = DVector::zeros(n);
                let v = if derivatives {
                    // Weight filled in after the slack is known; get value
                    // and raw gradient first.
                    add_kl(
                        map,
                        reference,
                        z,
                        &mut grad,
                        &mut hess,
                        0.0,
                        Some(&mut g_own),
                    )?
                } else {
                    kl_parts(map, reference, z)?.value
                };
                let s = bound - v;
                if s <= 0.0 {
                    return Ok(None);
                }
                value -= s.ln();
                if derivatives {
                    // -ln(s): gradient g/s, Hessian H/s + g g^T / s^2.
                    let parts = kl_parts(map, reference, z)?;
                    grad.axpy(1.0 / s, &g_own, 1.0);
                    for i in 0..map.out_dim {
                        let w = parts.inv_m[i] / s;
                        if w == 0.0 {
                            continue;
                        }
                        for &(j1, a1) in &map.entries[i] {
                            for &(j2, a2) in &map.entries[i] {
                                hess[(j1, j2)] += w * a1 * a2;
                            }
                        }
                    }
                    for j1 in 0..n {
                        let g1 = g_own[j1];
                        if g1 == 0.0 {
                            continue;
                        }
                        for j2 in 0..n {
                            hess[(j1, j2)] += g1 * g_own[j2] / (s * s);
                        }
                    }
                }
            }
        }
    }

    Ok(Some((value, grad, hess)))
}

/// Keeps a maximal independent set of equality rows; detects inconsistency.
fn independent_rows(eq: &[(Vec<f64>, f64)], n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut work: Vec<Vec<f64>> = Vec::new();
    for (a, b) in eq {
        let mut aug: Vec<f64> = a.clone();
        aug.push(*b);
        // Eliminate against accepted rows.
        for w in &work {
            let lead = w[..n].iter().position(|&x| x.abs() > 1e-10).unwrap();
            let factor = aug[lead] / w[lead];
            if factor != 0.0 {
                for (c, v) in aug.iter_mut().enumerate() {
                    *v -= factor * w[c];
                }
            }
        }
        let lead = aug[..n].iter().position(|&x| x.abs() > 1e-10);
        match lead {
            Some(_) => {
                let mut orig = a.clone();
                orig.push(*b);
                rows.push(orig);
                work.push(aug);
            }
            None => {
                if aug[n].abs() > 1e-8 {
                    return Err(Error::InvalidParameter(
                        "inconsistent equality constraints".into(),
                    ));
                }
            }
        }
    }
    let p = rows.len();
    let mut a = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    for (r, row) in rows.iter().enumerate() {
        for c in 0..n {
            a[(r, c)] = row[c];
        }
        b[r] = row[n];
    }
    Ok((a, b))
}

/// Orthonormal basis for the null space of `a`, found by completing the
/// orthonormalized rows of `a` with coordinate vectors.
fn null_space_basis(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let p = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for idx in 0..p + n {
        let mut v = if idx < p {
            a.row(idx).transpose()
        } else {
            let mut e = DVector::zeros(n);
            e[idx - p] = 1.0;
            e
        };
        // A second sweep keeps the basis orthogonal to machine precision.
        for _ in 0..2 {
            for u in &basis {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 {
            let u = v / norm;
            if idx >= p {
                kept.push(u.clone());
            }
            basis.push(u);
        }
    }
    let mut out = DMatrix::zeros(n, kept.len());
    for (c, u) in kept.iter().enumerate() {
        for r in 0..n {
            out[(r, c)] = u[r];
        }
    }
    out
}

/// Barrier solve from a strictly feasible start. Fails if the requested gap
/// cannot be certified.
pub fn solve(p: &Program, z0: &[f64], gap_tol: f64) -> Result<Solution> {
    let n = p.n_vars;
    if z0.len() != n {
        return Err(Error::Dimension("start point length mismatch".into()));
    }
    let (a, b) = independent_rows(&p.eq, n)?;
    let p_rows = a.nrows();
    let at = a.transpose();
    let aat_lu = if p_rows > 0 {
        Some((&a * &at).lu())
    } else {
        None
    };
    let nmat = null_space_basis(&a, n);
    let nt = nmat.transpose();
    // Least-squares correction back onto the equality manifold; Newton
    // rounding noise drifts off it otherwise, and the barrier cannot see
    // that drift. Skipped when the correction would cross the domain
    // boundary: the uncorrected residual is rounding-sized either way.
    let snap = |z: &mut DVector<f64>| -> Result<()> {
        if let Some(lu) = &aat_lu {
            let resid = &b - &a * &*z;
            if resid.amax() > 0.0 {
                let corr = lu.solve(&resid).ok_or_else(|| {
                    Error::InvalidParameter("degenerate equality system".into())
                })?;
                let cand = &*z + &at * corr;
                if barrier_eval(p, cand.as_slice(), T0, false)?.is_some() {
                    *z = cand;
                }
            }
        }
        Ok(())
    };

    let mut z = DVector::from_column_slice(z0);
    if p_rows > 0 {
        let resid = &b - &a * &z;
        if resid.amax() > 1e-6 {
            return Err(Error::InvalidParameter(
                "start point violates equality constraints".into(),
            ));
        }
    }
    snap(&mut z)?;
    for &zj in z.iter() {
        if zj <= 0.0 {
            return Err(Error::InvalidParameter(
                "start point is not strictly positive".into(),
            ));
        }
    }
    for ineq in &p.inequalities {
        if inequality_slack(ineq, z.as_slice())? <= 0.0 {
            return Err(Error::InvalidParameter(
                "start point violates an inequality strictly".into(),
            ));
        }
    }

    let m_barrier = n as f64 + p.inequalities.len() as f64;
    let mut t = T0;
    let mut newton_iters = 0usize;

    for _ in 0..MAX_OUTER {
        // Center at this t.
        let mut last_decrement = f64::INFINITY;
        for _ in 0..MAX_NEWTON {
            let (val, grad, hess) =
                match barrier_eval(p, z.as_slice(), t, true)? {
                    Some(e) => e,
                    None => {
                        return Err(Error::InvalidParameter(
                            "barrier iterate left the domain".into(),
                        ))
                    }
                };
            // Newton in the equality null space. The reduced Hessian is
            // positive definite there, unlike the bordered KKT matrix,
            // whose LU degrades once the path parameter gets large.
            let nf = nmat.ncols();
            let h_red = &nt * &hess * &nmat;
            let rhs_red = -(&nt * &grad);
            let mut dw_opt = h_red.clone().cholesky().map(|c| c.solve(&rhs_red));
            if dw_opt.is_none() {
                // Escalating scaled ridge for curvature that rounds off
                // positive definite.
                let scale = (0..nf).map(|i| h_red[(i, i)].abs()).fold(1.0f64, f64::max);
                let mut ridge = 1e-14 * scale;
                for _ in 0..6 {
                    let mut hr = h_red.clone();
                    for i in 0..nf {
                        hr[(i, i)] += ridge;
                    }
                    if let Some(c) = hr.cholesky() {
                        dw_opt = Some(c.solve(&rhs_red));
                        break;
                    }
                    ridge *= 100.0;
                }
            }
            let dw = dw_opt.ok_or_else(|| {
                Error::ResourceBudget("singular interior-point system".into())
            })?;
            let mut dz = &nmat * &dw;
            // The KKT solve keeps A dz = 0 only up to rounding, which the
            // huge late-path t amplifies; project the noise away.
            if let Some(lu) = &aat_lu {
                let r = &a * &dz;
                if r.amax() > 0.0 {
                    let corr = lu.solve(&r).ok_or_else(|| {
                        Error::InvalidParameter("degenerate equality system".into())
                    })?;
                    dz -= &at * corr;
                }
            }
            let mut decrement = 0.0;
            for i in 0..n {
                let mut hrow = 0.0;
                for j in 0..n {
                    hrow += hess[(i, j)] * dz[j];
                }
                decrement += dz[i] * hrow;
            }
            newton_iters += 1;
            last_decrement = decrement.max(0.0);
            // Scale-aware: at parameter t the barrier value carries t times
            // the objective, so an absolute threshold would chase rounding
            // noise forever.
            if decrement / 2.0 <= 1e-13 * (1.0 + val.abs()) {
                break;
            }

            // Backtracking: stay in the domain, then Armijo.
            let slope: f64 = (0..n).map(|i| grad[i] * dz[i]).sum();
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..MAX_BACKTRACK {
                let cand = &z + alpha * &dz;
                if let Some((cand_val, _, _)) = barrier_eval(p, cand.as_slice(), t, false)? {
                    if cand_val <= val + 0.01 * alpha * slope {
                        z = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            snap(&mut z)?;
        }

        // The m/t certificate holds at the exact center; imperfect centering
        // adds at most the final Newton decrement over 2t.
        let gap = (m_barrier + last_decrement / 2.0) / t;
        if gap <= gap_tol {
            snap(&mut z)?;
            let objective = objective_value(p, z.as_slice())?;
            return Ok(Solution {
                z: z.as_slice().to_vec(),
                objective,
                gap,
                newton_iters,
            });
        }
        t *= MU;
    }
    Err(Error::ResourceBudget(format!(
        "interior-point solve could not certify gap {gap_tol}"
    )))
}
