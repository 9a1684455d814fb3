//! Error exponents and indistinguishability regions of the two-source game
//! with distortion-budgeted attacks on both hypotheses.
//!
//! Every exponent here is a minimization over output laws of one
//! distortion-constrained divergence subject to a cap on another. The solves
//! share one pipeline: exact shortcuts for zero values, reachability probes
//! that decide infinite values with stated reasons, and a certified
//! interior-point solve of a joint two-coupling program for everything in
//! between. Scalar curves (the tilted trade-off behind the cost-weighted
//! game) are reduced to one-dimensional root finding on monotone functions
//! of those solves.

use crate::gendiv::gen_divergence;
use crate::lp::{self, Constraint, LinearProgram, LpOutcome, Rel};
use crate::simplex::{kl_divergence, DistortionMatrix, Pmf};
use crate::solver::{self, Inequality, Objective, Program, SparseMap};
use crate::transport;
use crate::{Error, Result};
use rayon::prelude::*;

const GAP_TOL: f64 = 1e-10;
const EDGE_TOL: f64 = 1e-12;
const BISECT_ITERS: usize = 64;

/// The two sources, their common distortion measure, and the per-hypothesis
/// attack budgets.
///
/// The distortion diagonal must vanish: an attacker may always deliver the
/// sequence unchanged, and every reduction here leans on that.
#[derive(Debug, Clone)]
pub struct GameSpec {
    p0: Pmf,
    p1: Pmf,
    d: DistortionMatrix,
    delta0: f64,
    delta1: f64,
}

impl GameSpec {
    pub fn new(p0: Pmf, p1: Pmf, d: DistortionMatrix, delta0: f64, delta1: f64) -> Result<Self> {
        let k = d.k();
        if p0.k() != k || p1.k() != k {
            return Err(Error::Dimension(format!(
                "sources on {} and {} symbols against a {k}-symbol distortion",
                p0.k(),
                p1.k()
            )));
        }
        for delta in [delta0, delta1] {
            if !delta.is_finite() || delta < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "attack budget {delta} must be finite and nonnegative"
                )));
            }
        }
        for i in 0..k {
            if d.value(i, i) != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "distortion diagonal entry {i} is {}; keeping a sequence unchanged must cost nothing",
                    d.value(i, i)
                )));
            }
        }
        Ok(Self {
            p0,
            p1,
            d,
            delta0,
            delta1,
        })
    }

    pub fn k(&self) -> usize {
        self.d.k()
    }

    pub fn p0(&self) -> &Pmf {
        &self.p0
    }

    pub fn p1(&self) -> &Pmf {
        &self.p1
    }

    pub fn d(&self) -> &DistortionMatrix {
        &self.d
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn delta1(&self) -> f64 {
        self.delta1
    }
}

/// One exponent value with its witness output law.
#[derive(Debug, Clone)]
pub struct ExponentResult {
    /// The exponent in nats; `f64::INFINITY` when unattainable.
    pub value: f64,
    /// An output law achieving the value, when finite.
    pub optimizer: Option<Pmf>,
    /// Certified distance to the true optimum.
    pub gap: f64,
    /// Why the value is infinite, when it is.
    pub infinite_reason: Option<String>,
}

impl ExponentResult {
    fn finite(value: f64, optimizer: Pmf, gap: f64) -> Self {
        Self {
            value: value.max(0.0),
            optimizer: Some(optimizer),
            gap,
            infinite_reason: None,
        }
    }

    fn infinite(reason: String) -> Self {
        Self {
            value: f64::INFINITY,
            optimizer: None,
            gap: 0.0,
            infinite_reason: Some(reason),
        }
    }
}

/// How the feasible set of output laws is carved out.
enum Feasible<'a> {
    /// Output laws whose constrained divergence against `p` within `delta`
    /// stays at or below `bound`.
    DivBall { p: &'a Pmf, delta: f64, bound: f64 },
    /// Output laws reachable from `p` by one attack within `delta`.
    Reachable { p: &'a Pmf, delta: f64 },
}

/// Live cells of a coupling block: rows inside the support of `p_rows`,
/// optionally only zero-distortion cells, optionally restricted columns.
fn block_cells(
    p_rows: &Pmf,
    d: &DistortionMatrix,
    delta: f64,
    col_ok: &[bool],
) -> Vec<(usize, usize)> {
    let k = p_rows.k();
    let mut cells = Vec::new();
    for x in 0..k {
        if p_rows.get(x) == 0.0 {
            continue;
        }
        for y in 0..k {
            if !col_ok[y] {
                continue;
            }
            if delta == 0.0 && d.value(x, y) != 0.0 {
                continue;
            }
            cells.push((x, y));
        }
    }
    cells
}

/// Per-column least distortion into the support of `p_rows`; infinite for
/// columns no admissible cell can serve.
fn col_min_cost(p_rows: &Pmf, d: &DistortionMatrix, delta: f64) -> Vec<f64> {
    let k = p_rows.k();
    (0..k)
        .map(|y| {
            (0..k)
                .filter(|&x| p_rows.get(x) > 0.0 && (delta > 0.0 || d.value(x, y) == 0.0))
                .map(|x| d.value(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Tries `(1 - theta) base + theta spread` for shrinking `theta` until the
/// candidate passes `strict`.
fn interiorize(
    base: &[f64],
    spread: &[f64],
    strict: impl Fn(&[f64]) -> bool,
) -> Result<Vec<f64>> {
    let mut theta = 0.5;
    for _ in 0..60 {
        let cand: Vec<f64> = base
            .iter()
            .zip(spread)
            .map(|(b, s)| (1.0 - theta) * b + theta * s)
            .collect();
        if strict(&cand) {
            return Ok(cand);
        }
        theta *= 0.5;
    }
    Err(Error::ResourceBudget(
        "could not construct a strictly feasible start".into(),
    ))
}

/// A low-distortion, everywhere-positive coupling over the given cells with
/// prescribed column sums: the per-column cheapest cell softened by a small
/// uniform share.
fn column_spread(
    cells: &[(usize, usize)],
    d: &DistortionMatrix,
    col_mass: &[f64],
) -> Vec<f64> {
    let mut z = vec![0.0; cells.len()];
    let k = col_mass.len();
    for y in 0..k {
        let here: Vec<usize> = (0..cells.len()).filter(|&j| cells[j].1 == y).collect();
        if here.is_empty() || col_mass[y] == 0.0 {
            continue;
        }
        let cheapest = *here
            .iter()
            .min_by(|&&a, &&b| d.value(cells[a].0, y).total_cmp(&d.value(cells[b].0, y)))
            .unwrap();
        let s = 1e-3;
        for &j in &here {
            z[j] = col_mass[y] * s / here.len() as f64;
        }
        z[cheapest] += col_mass[y] * (1.0 - s);
    }
    z
}

/// Same by rows: prescribed row sums, cheapest cell per row softened.
fn row_spread(cells: &[(usize, usize)], d: &DistortionMatrix, row_mass: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; cells.len()];
    let k = row_mass.len();
    for x in 0..k {
        let here: Vec<usize> = (0..cells.len()).filter(|&j| cells[j].0 == x).collect();
        if here.is_empty() || row_mass[x] == 0.0 {
            continue;
        }
        let cheapest = *here
            .iter()
            .min_by(|&&a, &&b| d.value(x, cells[a].1).total_cmp(&d.value(x, cells[b].1)))
            .unwrap();
        let s = 1e-3;
        for &j in &here {
            z[j] = row_mass[x] * s / here.len() as f64;
        }
        z[cheapest] += row_mass[x] * (1.0 - s);
    }
    z
}

fn dist_of(cells: &[(usize, usize)], d: &DistortionMatrix, z: &[f64]) -> f64 {
    cells
        .iter()
        .zip(z)
        .map(|(&(x, y), v)| d.value(x, y) * v)
        .sum()
}

fn cols_of(cells: &[(usize, usize)], k: usize, z: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for (&(_, y), v) in cells.iter().zip(z) {
        m[y] += v;
    }
    m
}

fn kl_raw(m: &[f64], p: &Pmf) -> f64 {
    let mut acc = 0.0;
    for (x, &mx) in m.iter().enumerate() {
        if mx > 0.0 {
            if p.get(x) == 0.0 {
                return f64::INFINITY;
            }
            acc += mx * (mx / p.get(x)).ln();
        }
    }
    acc.max(0.0)
}

fn pmf_from_masses(mut m: Vec<f64>) -> Result<Pmf> {
    let total: f64 = m.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidPmf("vanishing total mass".into()));
    }
    for v in m.iter_mut() {
        *v = (*v / total).max(0.0);
    }
    let resid: f64 = 1.0 - m.iter().sum::<f64>();
    m[0] += resid;
    Pmf::new(m)
}

/// Is the distortion cap never active over these cells?
fn cap_vacuous(cells: &[(usize, usize)], d: &DistortionMatrix, delta: f64) -> bool {
    delta == 0.0
        || cells
            .iter()
            .map(|&(x, y)| d.value(x, y))
            .fold(0.0f64, f64::max)
            <= delta
}

/// Is a divergence cap never active? A crude sure bound: the largest
/// possible constrained divergence is a point mass against the smallest
/// live source weight.
fn div_cap_vacuous(p: &Pmf, bound: f64) -> bool {
    let min_live = p
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    bound >= (1.0 / min_live).ln() + 1.0
}

struct ProbeOutcome {
    /// Strictly feasible coupling over the constraint block cells.
    z: Vec<f64>,
    /// The output law it induces.
    py: Vec<f64>,
    /// Least objective-side transport cost over the feasible set.
    min_cost: f64,
}

/// Minimizes `sum_y py(y) cost(y)` over the feasible set, returning a
/// strictly feasible near-optimal coupling, or the reason the feasible set
/// cannot pay finite objective-side transport.
fn probe_feasible(
    d: &DistortionMatrix,
    con: &Feasible<'_>,
    cost: &[f64],
    cells: &[(usize, usize)],
) -> Result<std::result::Result<ProbeOutcome, String>> {
    let k = d.k();
    match con {
        Feasible::Reachable { p, delta } => {
            // Linear problem; the exact simplex decides feasibility.
            let n = cells.len();
            let mut constraints = Vec::new();
            for x in 0..k {
                if p.get(x) == 0.0 {
                    continue;
                }
                let mut row = vec![0.0; n];
                for (j, &(cx, _)) in cells.iter().enumerate() {
                    if cx == x {
                        row[j] = 1.0;
                    }
                }
                constraints.push(Constraint {
                    coeffs: row,
                    rel: Rel::Eq,
                    rhs: p.get(x),
                });
            }
            if !cap_vacuous(cells, d, *delta) {
                constraints.push(Constraint {
                    coeffs: cells.iter().map(|&(x, y)| d.value(x, y)).collect(),
                    rel: Rel::Le,
                    rhs: *delta,
                });
            }
            let lp = LinearProgram {
                n_vars: n,
                objective: cells.iter().map(|&(_, y)| cost[y]).collect(),
                constraints,
            };
            let (vertex, min_cost) = match lp::solve(&lp)? {
                LpOutcome::Optimal { x, value } => (x, value),
                LpOutcome::Infeasible => {
                    return Ok(Err(
                        "the source cannot reach any output law through admissible symbols"
                            .into(),
                    ))
                }
                LpOutcome::Unbounded => {
                    return Err(Error::InvalidParameter(
                        "reachability probe unbounded below".into(),
                    ))
                }
            };
            // Interior point of the same polytope.
            let spread = row_spread(cells, d, p.as_slice());
            let z = interiorize(&vertex, &spread, |cand| {
                cand.iter().all(|&v| v > 0.0)
                    && (cap_vacuous(cells, d, *delta) || dist_of(cells, d, cand) < *delta)
            })?;
            let py = cols_of(cells, k, &z);
            Ok(Ok(ProbeOutcome { z, py, min_cost }))
        }
        Feasible::DivBall { p, delta, bound } => {
            // First find the least constrained divergence over the allowed
            // columns; its optimizer seeds the linear probe.
            let eq = vec![(vec![1.0; cells.len()], 1.0)];
            let mut ineq = Vec::new();
            if !cap_vacuous(cells, d, *delta) {
                ineq.push(Inequality::LinearLe {
                    coeffs: cells.iter().map(|&(x, y)| d.value(x, y)).collect(),
                    rhs: *delta,
                });
            }
            let mut row_entries = vec![Vec::new(); k];
            for (j, &(x, _)) in cells.iter().enumerate() {
                row_entries[x].push((j, 1.0));
            }
            let kl_map = SparseMap {
                out_dim: k,
                entries: row_entries,
            };
            let reference: Vec<f64> = (0..k).map(|x| p.get(x)).collect();

            if cells.is_empty() {
                return Ok(Err(
                    "no admissible cell connects the source to the allowed outputs".into(),
                ));
            }
            // A uniform-ish column mass to seed from: total mass one spread
            // over allowed columns in proportion to nothing in particular.
            let col_has: Vec<bool> = (0..k)
                .map(|y| cells.iter().any(|&(_, cy)| cy == y))
                .collect();
            let n_cols = col_has.iter().filter(|&&b| b).count() as f64;
            let col_mass: Vec<f64> = col_has
                .iter()
                .map(|&b| if b { 1.0 / n_cols } else { 0.0 })
                .collect();
            let base = column_spread(cells, d, &col_mass);
            let spread: Vec<f64> = cells.iter().map(|_| 1.0 / cells.len() as f64).collect();
            let start = interiorize(&base, &spread, |cand| {
                cand.iter().all(|&v| v > 0.0)
                    && (cap_vacuous(cells, d, *delta) || dist_of(cells, d, cand) < *delta)
            })?;

            let pre = Program {
                n_vars: cells.len(),
                eq: eq.clone(),
                inequalities: ineq.clone(),
                objective: Objective::Kl {
                    map: kl_map.clone(),
                    reference: reference.clone(),
                },
            };
            let pre_sol = match solver::solve(&pre, &start, GAP_TOL) {
                Ok(s) => s,
                Err(_) => {
                    return Ok(Err(
                        "no admissible output law stays within reach of the source".into(),
                    ))
                }
            };
            if pre_sol.objective > *bound + EDGE_TOL {
                return Ok(Err(format!(
                    "every admissible output law forces divergence at least {:.6} > cap {:.6}",
                    pre_sol.objective, bound
                )));
            }
            if pre_sol.objective > *bound - 1e-9 {
                // Knife edge: the ball is a single point, near enough.
                let py = cols_of(cells, k, &pre_sol.z);
                let min_cost = py.iter().zip(cost).map(|(a, b)| a * b).sum();
                return Ok(Ok(ProbeOutcome {
                    z: pre_sol.z,
                    py,
                    min_cost,
                }));
            }

            let mut probe_ineq = ineq.clone();
            if !div_cap_vacuous(p, *bound) {
                probe_ineq.push(Inequality::KlLe {
                    map: kl_map,
                    reference,
                    bound: *bound,
                });
            }
            let probe = Program {
                n_vars: cells.len(),
                eq,
                inequalities: probe_ineq,
                objective: Objective::Linear(
                    cells.iter().map(|&(_, y)| cost[y]).collect(),
                ),
            };
            let sol = solver::solve(&probe, &pre_sol.z, GAP_TOL)?;
            let py = cols_of(cells, k, &sol.z);
            Ok(Ok(ProbeOutcome {
                z: sol.z,
                py,
                min_cost: sol.objective,
            }))
        }
    }
}

/// Core solve: minimize the objective-side constrained divergence
/// `div_{delta_obj}(PY, p_obj)` over the feasible output laws.
fn constrained_min(
    d: &DistortionMatrix,
    con: &Feasible<'_>,
    p_obj: &Pmf,
    delta_obj: f64,
) -> Result<ExponentResult> {
    let k = d.k();

    // Exact zero: the objective source itself may be feasible.
    let self_ok = match con {
        Feasible::DivBall { p, delta, bound } => {
            gen_divergence(p_obj, p, d, *delta)?.value <= *bound
        }
        Feasible::Reachable { p, delta } => {
            transport::emd(p, p_obj, d)?.cost() <= *delta * (1.0 + 1e-12) + 1e-15
        }
    };
    if self_ok {
        return Ok(ExponentResult::finite(0.0, p_obj.clone(), 0.0));
    }

    // Columns the objective side can pay for at all.
    let c_obj = col_min_cost(p_obj, d, delta_obj);
    let col_ok: Vec<bool> = c_obj.iter().map(|v| v.is_finite()).collect();
    let con_cells = match con {
        Feasible::DivBall { p, delta, .. } => block_cells(p, d, *delta, &col_ok),
        Feasible::Reachable { p, delta } => block_cells(p, d, *delta, &col_ok),
    };
    if con_cells.is_empty() {
        return Ok(ExponentResult::infinite(
            "no output law is both reachable under the constraint and payable by the objective source"
                .into(),
        ));
    }
    let probe = match probe_feasible(d, con, &c_obj, &con_cells)? {
        Ok(p) => p,
        Err(reason) => return Ok(ExponentResult::infinite(reason)),
    };
    if probe.min_cost > delta_obj * (1.0 + 1e-12) + EDGE_TOL {
        return Ok(ExponentResult::infinite(format!(
            "every feasible output law needs objective-side distortion at least {:.6} > budget {:.6}",
            probe.min_cost, delta_obj
        )));
    }

    // Joint program over both couplings.
    let obj_cells = block_cells(p_obj, d, delta_obj, &col_ok);
    let n0 = con_cells.len();
    let n1 = obj_cells.len();
    let n = n0 + n1;
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
    for y in 0..k {
        if !col_ok[y] {
            continue;
        }
        let mut row = vec![0.0; n];
        let mut any = false;
        for (j, &(_, cy)) in con_cells.iter().enumerate() {
            if cy == y {
                row[j] = 1.0;
                any = true;
            }
        }
        for (j, &(_, cy)) in obj_cells.iter().enumerate() {
            if cy == y {
                row[n0 + j] = -1.0;
                any = true;
            }
        }
        if any {
            eq.push((row, 0.0));
        }
    }
    let mut total = vec![0.0; n];
    for slot in total.iter_mut().take(n0) {
        *slot = 1.0;
    }
    eq.push((total, 1.0));
    match con {
        Feasible::Reachable { p, .. } => {
            for x in 0..k {
                if p.get(x) == 0.0 {
                    continue;
                }
                let mut row = vec![0.0; n];
                for (j, &(cx, _)) in con_cells.iter().enumerate() {
                    if cx == x {
                        row[j] = 1.0;
                    }
                }
                eq.push((row, p.get(x)));
            }
        }
        Feasible::DivBall { .. } => {}
    }

    let mut inequalities = Vec::new();
    let con_delta = match con {
        Feasible::DivBall { delta, .. } => *delta,
        Feasible::Reachable { delta, .. } => *delta,
    };
    if !cap_vacuous(&con_cells, d, con_delta) {
        let mut coeffs = vec![0.0; n];
        for (j, &(x, y)) in con_cells.iter().enumerate() {
            coeffs[j] = d.value(x, y);
        }
        inequalities.push(Inequality::LinearLe {
            coeffs,
            rhs: con_delta,
        });
    }
    if !cap_vacuous(&obj_cells, d, delta_obj) {
        let mut coeffs = vec![0.0; n];
        for (j, &(x, y)) in obj_cells.iter().enumerate() {
            coeffs[n0 + j] = d.value(x, y);
        }
        inequalities.push(Inequality::LinearLe {
            coeffs,
            rhs: delta_obj,
        });
    }
    if let Feasible::DivBall { p, bound, .. } = con {
        if !div_cap_vacuous(p, *bound) {
            let mut entries = vec![Vec::new(); k];
            for (j, &(x, _)) in con_cells.iter().enumerate() {
                entries[x].push((j, 1.0));
            }
            inequalities.push(Inequality::KlLe {
                map: SparseMap {
                    out_dim: k,
                    entries,
                },
                reference: (0..k).map(|x| p.get(x)).collect(),
                bound: *bound,
            });
        }
    }
    let mut obj_entries = vec![Vec::new(); k];
    for (j, &(x, _)) in obj_cells.iter().enumerate() {
        obj_entries[x].push((n0 + j, 1.0));
    }
    let program = Program {
        n_vars: n,
        eq,
        inequalities,
        objective: Objective::Kl {
            map: SparseMap {
                out_dim: k,
                entries: obj_entries,
            },
            reference: (0..k).map(|x| p_obj.get(x)).collect(),
        },
    };

    // Start: the probe coupling on the constraint side, a softened cheapest
    // coupling with the same column sums on the objective side.
    let obj_base = column_spread(&obj_cells, d, &probe.py);
    let obj_unif: Vec<f64> = {
        let mut z = vec![0.0; n1];
        for y in 0..k {
            let here: Vec<usize> =
                (0..n1).filter(|&j| obj_cells[j].1 == y).collect();
            for &j in &here {
                z[j] = probe.py[y] / here.len().max(1) as f64;
            }
        }
        z
    };
    let obj_start = interiorize(&obj_base, &obj_unif, |cand| {
        cand.iter().all(|&v| v > 0.0)
            && (cap_vacuous(&obj_cells, d, delta_obj)
                || dist_of(&obj_cells, d, cand) < delta_obj)
    });
    let obj_start = match obj_start {
        Ok(z) => z,
        Err(_) => {
            // The objective budget is exactly spent at every feasible law;
            // give the cap a hair of slack and carry the uncertainty.
            let relaxed = relax_objective_budget(&program, &obj_cells, n0, delta_obj)?;
            let z = interiorize(&obj_base, &obj_unif, |cand| {
                cand.iter().all(|&v| v > 0.0)
                    && dist_of(&obj_cells, d, cand) < delta_obj + 1e-9
            })?;
            let mut start = probe.z.clone();
            start.extend_from_slice(&z);
            let sol = solver::solve(&relaxed, &start, GAP_TOL)?;
            let py = pmf_from_masses(cols_of(&con_cells, k, &sol.z[..n0]))?;
            return Ok(ExponentResult {
                value: sol.objective.max(0.0),
                optimizer: Some(py),
                gap: sol.gap.max(1e-6),
                infinite_reason: None,
            });
        }
    };
    let mut start = probe.z.clone();
    start.extend_from_slice(&obj_start);

    let sol = solver::solve(&program, &start, GAP_TOL)?;
    let py = pmf_from_masses(cols_of(&con_cells, k, &sol.z[..n0]))?;
    Ok(ExponentResult {
        value: sol.objective.max(0.0),
        optimizer: Some(py),
        gap: sol.gap,
        infinite_reason: None,
    })
}

/// Clone of the joint program with the objective-side distortion cap opened
/// by a hair, for boundary instances with no strict interior.
fn relax_objective_budget(
    program: &Program,
    obj_cells: &[(usize, usize)],
    n0: usize,
    delta_obj: f64,
) -> Result<Program> {
    let mut relaxed = program.clone();
    let mut done = false;
    for ineq in relaxed.inequalities.iter_mut() {
        if let Inequality::LinearLe { coeffs, rhs } = ineq {
            let touches_obj = obj_cells
                .iter()
                .enumerate()
                .any(|(j, _)| coeffs[n0 + j] != 0.0);
            if touches_obj && (*rhs - delta_obj).abs() <= f64::EPSILON * delta_obj.max(1.0) {
                *rhs = delta_obj + 1e-9;
                done = true;
            }
        }
    }
    if done {
        Ok(relaxed)
    } else {
        Err(Error::ResourceBudget(
            "no strict interior and no cap to relax".into(),
        ))
    }
}

/// Best false-negative exponent under a false-positive exponent floor
/// `lambda`: the least objective-side divergence over output laws the
/// null-side attack keeps within `lambda`.
pub fn np_fn_exponent(spec: &GameSpec, lambda: f64) -> Result<ExponentResult> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "false-positive floor {lambda} must be finite and nonnegative"
        )));
    }
    let con = if lambda == 0.0 {
        Feasible::Reachable {
            p: &spec.p0,
            delta: spec.delta0,
        }
    } else {
        Feasible::DivBall {
            p: &spec.p0,
            delta: spec.delta0,
            bound: lambda,
        }
    };
    constrained_min(&spec.d, &con, &spec.p1, spec.delta1)
}

/// The same exponent through the reduced program: a plain divergence ball
/// around the null source and one pooled budget on the alternative side.
///
/// Exact when the distortion is a metric; for other distortions the value is
/// only an upper bound on [`np_fn_exponent`].
pub fn np_fn_exponent_metric_form(spec: &GameSpec, lambda: f64) -> Result<ExponentResult> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "false-positive floor {lambda} must be finite and nonnegative"
        )));
    }
    let k = spec.k();
    let pooled = spec.delta0 + spec.delta1;

    // Zero shortcut.
    if kl_divergence(&spec.p1, &spec.p0)? <= lambda {
        return Ok(ExponentResult::finite(0.0, spec.p1.clone(), 0.0));
    }
    // The ball keeps output laws inside the null support.
    let col_ok: Vec<bool> = (0..k).map(|y| spec.p0.get(y) > 0.0).collect();
    let cells = block_cells(&spec.p1, &spec.d, pooled, &col_ok);
    if cells.is_empty() {
        return Ok(ExponentResult::infinite(
            "no admissible cell connects the alternative source to the null support".into(),
        ));
    }
    if lambda == 0.0 {
        let g = gen_divergence(&spec.p0, &spec.p1, &spec.d, pooled)?;
        return Ok(ExponentResult {
            value: g.value,
            optimizer: if g.is_finite() {
                Some(spec.p0.clone())
            } else {
                None
            },
            gap: g.gap,
            infinite_reason: g.infinite_reason,
        });
    }

    // Reachability probe in output-law space.
    let c_obj = col_min_cost(&spec.p1, &spec.d, pooled);
    let live_cols: Vec<usize> = (0..k)
        .filter(|&y| col_ok[y] && c_obj[y].is_finite())
        .collect();
    if live_cols.is_empty() {
        return Ok(ExponentResult::infinite(
            "no output symbol is both in the null support and payable".into(),
        ));
    }
    let probe = {
        let n = live_cols.len();
        let ident = SparseMap {
            out_dim: k,
            entries: {
                let mut e = vec![Vec::new(); k];
                for (j, &y) in live_cols.iter().enumerate() {
                    e[y].push((j, 1.0));
                }
                e
            },
        };
        let program = Program {
            n_vars: n,
            eq: vec![(vec![1.0; n], 1.0)],
            inequalities: vec![Inequality::KlLe {
                map: ident,
                reference: (0..k).map(|y| spec.p0.get(y)).collect(),
                bound: lambda,
            }],
            objective: Objective::Linear(live_cols.iter().map(|&y| c_obj[y]).collect()),
        };
        // Start at the null source restricted to live columns.
        let mut start: Vec<f64> = live_cols.iter().map(|&y| spec.p0.get(y)).collect();
        let total: f64 = start.iter().sum();
        let unif = vec![1.0 / n as f64; n];
        for v in start.iter_mut() {
            *v /= total;
        }
        let start = interiorize(&start, &unif, |cand| {
            cand.iter().all(|&v| v > 0.0) && {
                let mut full = vec![0.0; k];
                for (j, &y) in live_cols.iter().enumerate() {
                    full[y] = cand[j];
                }
                kl_raw(&full, &spec.p0) < lambda
            }
        })?;
        solver::solve(&program, &start, GAP_TOL)?
    };
    if probe.objective > pooled * (1.0 + 1e-12) + EDGE_TOL {
        return Ok(ExponentResult::infinite(format!(
            "every law in the divergence ball needs pooled distortion at least {:.6} > {:.6}",
            probe.objective, pooled
        )));
    }
    let mut py_star = vec![0.0; k];
    for (j, &y) in live_cols.iter().enumerate() {
        py_star[y] = probe.z[j];
    }

    // Single-block joint program: column sums are the output law.
    let n = cells.len();
    let mut col_entries = vec![Vec::new(); k];
    let mut row_entries = vec![Vec::new(); k];
    for (j, &(x, y)) in cells.iter().enumerate() {
        col_entries[y].push((j, 1.0));
        row_entries[x].push((j, 1.0));
    }
    let mut inequalities = vec![Inequality::KlLe {
        map: SparseMap {
            out_dim: k,
            entries: col_entries,
        },
        reference: (0..k).map(|y| spec.p0.get(y)).collect(),
        bound: lambda,
    }];
    if !cap_vacuous(&cells, &spec.d, pooled) {
        inequalities.push(Inequality::LinearLe {
            coeffs: cells.iter().map(|&(x, y)| spec.d.value(x, y)).collect(),
            rhs: pooled,
        });
    }
    let program = Program {
        n_vars: n,
        eq: vec![(vec![1.0; n], 1.0)],
        inequalities,
        objective: Objective::Kl {
            map: SparseMap {
                out_dim: k,
                entries: row_entries,
            },
            reference: (0..k).map(|x| spec.p1.get(x)).collect(),
        },
    };
    let base = column_spread(&cells, &spec.d, &py_star);
    let unif: Vec<f64> = cells.iter().map(|_| 1.0 / n as f64).collect();
    let start = interiorize(&base, &unif, |cand| {
        cand.iter().all(|&v| v > 0.0)
            && kl_raw(&cols_of(&cells, k, cand), &spec.p0) < lambda
            && (cap_vacuous(&cells, &spec.d, pooled)
                || dist_of(&cells, &spec.d, cand) < pooled)
    })?;
    let sol = solver::solve(&program, &start, GAP_TOL)?;
    let py = pmf_from_masses(cols_of(&cells, k, &sol.z))?;
    Ok(ExponentResult {
        value: sol.objective.max(0.0),
        optimizer: Some(py),
        gap: sol.gap,
        infinite_reason: None,
    })
}

/// Both exponents of the cost-weighted game at tilt `a`, and its payoff.
#[derive(Debug, Clone)]
pub struct BayesExponents {
    pub payoff_exponent: ExponentResult,
    pub fn_exponent: ExponentResult,
    pub fp_exponent: ExponentResult,
}

/// `g(c)`: least objective-side divergence over laws the null side keeps
/// within `c`.
fn fn_curve(spec: &GameSpec, c: f64) -> Result<ExponentResult> {
    np_fn_exponent(spec, c.max(0.0))
}

/// `G(c)`: roles swapped.
fn fp_curve(spec: &GameSpec, c: f64) -> Result<ExponentResult> {
    let con = if c <= 0.0 {
        Feasible::Reachable {
            p: &spec.p1,
            delta: spec.delta1,
        }
    } else {
        Feasible::DivBall {
            p: &spec.p1,
            delta: spec.delta1,
            bound: c,
        }
    };
    constrained_min(&spec.d, &con, &spec.p0, spec.delta0)
}

/// Finite upper bracket for the scalar searches, if any exists: the cheaper
/// of sitting at either source, with an exact reachability rescue.
fn cross_divergences(spec: &GameSpec) -> Result<(f64, f64)> {
    let v_p0 = gen_divergence(&spec.p0, &spec.p1, &spec.d, spec.delta1)?.value;
    let w_p1 = gen_divergence(&spec.p1, &spec.p0, &spec.d, spec.delta0)?.value;
    Ok((v_p0, w_p1))
}

/// A law with both constrained divergences finite, through an exact linear
/// feasibility check; `None` when no such law exists.
fn both_reachable(spec: &GameSpec) -> Result<Option<Pmf>> {
    let k = spec.k();
    let c0 = col_min_cost(&spec.p0, &spec.d, spec.delta0);
    let c1 = col_min_cost(&spec.p1, &spec.d, spec.delta1);
    let live: Vec<usize> = (0..k)
        .filter(|&y| c0[y].is_finite() && c1[y].is_finite())
        .collect();
    if live.is_empty() {
        return Ok(None);
    }
    let n = live.len();
    let lp = LinearProgram {
        n_vars: n,
        objective: live.iter().map(|&y| c1[y]).collect(),
        constraints: vec![
            Constraint {
                coeffs: vec![1.0; n],
                rel: Rel::Eq,
                rhs: 1.0,
            },
            Constraint {
                coeffs: live.iter().map(|&y| c0[y]).collect(),
                rel: Rel::Le,
                rhs: spec.delta0,
            },
        ],
    };
    match lp::solve(&lp)? {
        LpOutcome::Optimal { x, value } => {
            if value > spec.delta1 * (1.0 + 1e-12) + EDGE_TOL {
                return Ok(None);
            }
            let mut py = vec![0.0; k];
            for (j, &y) in live.iter().enumerate() {
                py[y] = x[j];
            }
            Ok(Some(pmf_from_masses(py)?))
        }
        _ => Ok(None),
    }
}

/// Barycentric grid over the simplex with the given number of levels.
fn simplex_grid(k: usize, levels: u32) -> Vec<Vec<f64>> {
    crate::types::Composition::enumerate_all(levels, k)
        .into_iter()
        .map(|c| {
            c.counts()
                .iter()
                .map(|&v| v as f64 / levels as f64)
                .collect()
        })
        .collect()
}

/// Exponents of the cost-weighted game: the detector pays `exp(a n)` per
/// false positive.
pub fn bayes_exponent(spec: &GameSpec, a: f64) -> Result<BayesExponents> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cost tilt {a} must be finite and nonnegative"
        )));
    }
    let (v_p0, w_p1) = cross_divergences(spec)?;
    let rescue = if v_p0.is_finite() || w_p1.is_finite() {
        None
    } else {
        both_reachable(spec)?
    };
    let rescue_pair = match &rescue {
        Some(py) => {
            let w = gen_divergence(py, &spec.p0, &spec.d, spec.delta0)?.value;
            let v = gen_divergence(py, &spec.p1, &spec.d, spec.delta1)?.value;
            Some((w, v))
        }
        None => None,
    };
    let no_law = !v_p0.is_finite() && !w_p1.is_finite() && rescue_pair.is_none();

    // False-negative side: the root of c - g(c) = a.
    let fn_exponent = if no_law {
        ExponentResult::infinite(
            "no output law is reachable from both sources within budget".into(),
        )
    } else {
        let mut hi = f64::INFINITY;
        if v_p0.is_finite() {
            hi = hi.min(a + v_p0);
        }
        if w_p1.is_finite() {
            hi = hi.min(w_p1.max(a));
        }
        if let Some((w, v)) = rescue_pair {
            hi = hi.min(w.max(a + v));
        }
        let mut lo = 0.0f64;
        let mut best = fn_curve(spec, hi)?;
        for _ in 0..BISECT_ITERS {
            if hi - lo <= 1e-11 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let g = fn_curve(spec, mid)?;
            let phi = mid - g.value;
            if phi >= a {
                hi = mid;
                best = g;
            } else {
                lo = mid;
            }
        }
        best
    };

    // False-positive side.
    let g0 = fp_curve(spec, 0.0)?;
    let fp_exponent = if g0.value >= a {
        // The crossing G(c) = a + c exists; chase it.
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        if v_p0.is_finite() {
            hi = hi.min(v_p0);
        }
        if w_p1.is_finite() {
            hi = hi.min((w_p1 - a).max(0.0));
        }
        if let Some((w, v)) = rescue_pair {
            hi = hi.min(v.max(w - a).max(0.0));
        }
        if hi.is_finite() {
            let mut best = fp_curve(spec, hi)?;
            for _ in 0..BISECT_ITERS {
                if hi - lo <= 1e-11 * hi.max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let g = fp_curve(spec, mid)?;
                let chi = g.value - mid;
                if chi <= a {
                    hi = mid;
                    best = g;
                } else {
                    lo = mid;
                }
            }
            best
        } else {
            ExponentResult::infinite(
                "no output law is reachable from both sources within budget".into(),
            )
        }
    } else {
        // The null side alone cannot be pushed past the tilt; the exponent
        // is the tilt itself exactly when some law separates the sources by
        // at least `a`, checked on a simplex grid.
        let k = spec.k();
        let levels = match k {
            2 => 400,
            3 => 60,
            4 => 24,
            _ => 12,
        };
        let mut best_sep = f64::NEG_INFINITY;
        let mut best_py: Option<Pmf> = None;
        for raw in simplex_grid(k, levels) {
            let py = match pmf_from_masses(raw) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let w = gen_divergence(&py, &spec.p0, &spec.d, spec.delta0)?.value;
            if !w.is_finite() {
                continue;
            }
            let v = gen_divergence(&py, &spec.p1, &spec.d, spec.delta1)?.value;
            if !v.is_finite() {
                continue;
            }
            if w - v > best_sep {
                best_sep = w - v;
                best_py = Some(py);
            }
        }
        if best_sep >= a - 1e-9 {
            ExponentResult {
                value: a,
                optimizer: best_py,
                gap: 0.0,
                infinite_reason: None,
            }
        } else {
            ExponentResult::infinite(format!(
                "no output law separates the sources by the tilt; best margin {best_sep:.6} < {a:.6}"
            ))
        }
    };

    // Payoff. Feasible(t): g(t + a) <= t.
    let payoff = if no_law {
        ExponentResult::infinite(
            "no output law is reachable from both sources within budget".into(),
        )
    } else {
        let mut hi = f64::INFINITY;
        if v_p0.is_finite() {
            hi = hi.min(v_p0);
        }
        if w_p1.is_finite() {
            hi = hi.min((w_p1 - a).max(0.0));
        }
        if let Some((w, v)) = rescue_pair {
            hi = hi.min(v.max(w - a));
        }
        let mut lo = 0.0f64;
        let mut best = fn_curve(spec, hi + a)?;
        let mut payoff_val = hi;
        for _ in 0..BISECT_ITERS {
            if hi - lo <= 1e-11 * hi.max(1.0) {
                break;
            }
            let t = 0.5 * (lo + hi);
            let g = fn_curve(spec, t + a)?;
            if g.value <= t {
                hi = t;
                payoff_val = t;
                best = g;
            } else {
                lo = t;
            }
        }
        ExponentResult {
            value: payoff_val.max(0.0),
            optimizer: best.optimizer,
            gap: best.gap.max(1e-10),
            infinite_reason: None,
        }
    };

    Ok(BayesExponents {
        payoff_exponent: payoff,
        fn_exponent,
        fp_exponent,
    })
}

/// Exponent ceilings as the detector constraint washes out.
#[derive(Debug, Clone)]
pub struct LimitExponents {
    /// Ceiling of the constrained false-negative exponent: the null-side
    /// attack is held to reachability alone.
    pub np_limit: ExponentResult,
    /// Ceiling of the cost-weighted payoff at vanishing tilt.
    pub bayes_limit: ExponentResult,
}

pub fn limit_exponents(spec: &GameSpec) -> Result<LimitExponents> {
    let np_limit = np_fn_exponent(spec, 0.0)?;
    // Payoff at zero tilt: feasible(t) iff g(t) <= t.
    let (v_p0, w_p1) = cross_divergences(spec)?;
    let rescue = if v_p0.is_finite() || w_p1.is_finite() {
        None
    } else {
        both_reachable(spec)?
    };
    let bayes_limit = {
        let mut hi = f64::INFINITY;
        if v_p0.is_finite() {
            hi = hi.min(v_p0);
        }
        if w_p1.is_finite() {
            hi = hi.min(w_p1);
        }
        if let Some(py) = &rescue {
            let w = gen_divergence(py, &spec.p0, &spec.d, spec.delta0)?.value;
            let v = gen_divergence(py, &spec.p1, &spec.d, spec.delta1)?.value;
            hi = hi.min(w.max(v));
        }
        if !hi.is_finite() {
            ExponentResult::infinite(
                "no output law is reachable from both sources within budget".into(),
            )
        } else {
            let mut lo = 0.0f64;
            let mut best = fn_curve(spec, hi)?;
            let mut val = hi;
            for _ in 0..BISECT_ITERS {
                if hi - lo <= 1e-11 * hi.max(1.0) {
                    break;
                }
                let t = 0.5 * (lo + hi);
                let g = fn_curve(spec, t)?;
                if g.value <= t {
                    hi = t;
                    val = t;
                    best = g;
                } else {
                    lo = t;
                }
            }
            ExponentResult {
                value: val.max(0.0),
                optimizer: best.optimizer,
                gap: best.gap.max(1e-10),
                infinite_reason: None,
            }
        }
    };
    Ok(LimitExponents {
        np_limit,
        bayes_limit,
    })
}

/// Membership of a candidate source in the indistinguishable set: can the
/// null source be routed through a common intermediate law into the
/// candidate with both stage budgets respected?
#[derive(Debug, Clone)]
pub struct Indistinguishability {
    pub member: bool,
    /// Least second-stage expected distortion needed.
    pub inner_value: f64,
    /// Plain transport cost from the null source to the candidate.
    pub emd: f64,
    /// For metric distortions, the closed-form inner value.
    pub metric_inner: Option<f64>,
    /// For metric distortions, the fraction of the transport the second
    /// stage must cover; zero when the first stage alone suffices.
    pub alpha: Option<f64>,
}

pub fn indistinguishability(spec: &GameSpec, p: &Pmf) -> Result<Indistinguishability> {
    let k = spec.k();
    if p.k() != k {
        return Err(Error::Dimension(format!(
            "candidate on {} symbols against a {k}-symbol game",
            p.k()
        )));
    }
    // Two couplings: S routes the null source to an intermediate law, R
    // routes the intermediate law to the candidate; minimize the R-stage
    // cost subject to the S-stage budget.
    let n = 2 * k * k;
    let d = &spec.d;
    let mut constraints = Vec::new();
    for y in 0..k {
        let mut c = vec![0.0; n];
        for x in 0..k {
            c[x * k + y] = 1.0;
        }
        constraints.push(Constraint {
            coeffs: c,
            rel: Rel::Eq,
            rhs: p.get(y),
        });
    }
    for y in 0..k {
        let mut c = vec![0.0; n];
        for x in 0..k {
            c[k * k + x * k + y] = 1.0;
        }
        constraints.push(Constraint {
            coeffs: c,
            rel: Rel::Eq,
            rhs: spec.p0.get(y),
        });
    }
    for x in 0..k {
        let mut c = vec![0.0; n];
        for y in 0..k {
            c[x * k + y] = 1.0;
            c[k * k + x * k + y] = -1.0;
        }
        constraints.push(Constraint {
            coeffs: c,
            rel: Rel::Eq,
            rhs: 0.0,
        });
    }
    let mut s_cost = vec![0.0; n];
    for x in 0..k {
        for y in 0..k {
            s_cost[k * k + x * k + y] = d.value(x, y);
        }
    }
    constraints.push(Constraint {
        coeffs: s_cost,
        rel: Rel::Le,
        rhs: spec.delta0,
    });
    let mut objective = vec![0.0; n];
    for x in 0..k {
        for y in 0..k {
            objective[x * k + y] = d.value(x, y);
        }
    }
    let lp = LinearProgram {
        n_vars: n,
        objective,
        constraints,
    };
    let inner_value = match lp::solve(&lp)? {
        LpOutcome::Optimal { value, .. } => value.max(0.0),
        LpOutcome::Infeasible => f64::INFINITY,
        LpOutcome::Unbounded => {
            return Err(Error::InvalidParameter(
                "membership program unbounded".into(),
            ))
        }
    };
    let emd = transport::emd(&spec.p0, p, d)?.cost();
    let (metric_inner, alpha) = if d.is_metric() {
        let mi = (emd - spec.delta0).max(0.0);
        let alpha = if emd <= spec.delta0 {
            0.0
        } else {
            1.0 - spec.delta0 / emd
        };
        (Some(mi), Some(alpha))
    } else {
        (None, None)
    };
    let member = inner_value <= spec.delta1 * (1.0 + 1e-12) + 1e-15;
    Ok(Indistinguishability {
        member,
        inner_value,
        emd,
        metric_inner,
        alpha,
    })
}

/// One grid point of a membership sweep.
#[derive(Debug, Clone)]
pub struct RegionRow {
    pub p: Vec<f64>,
    pub member: bool,
    pub inner_value: f64,
    pub emd: f64,
}

#[derive(Debug, Clone)]
pub struct RegionSweep {
    pub k: usize,
    pub grid_step: f64,
    pub rows: Vec<RegionRow>,
}

/// Membership over the whole simplex on a barycentric grid with the given
/// step, which must divide one.
pub fn region_sweep(spec: &GameSpec, grid_step: f64) -> Result<RegionSweep> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "grid step {grid_step} outside (0, 0.5]"
        )));
    }
    let levels_f = 1.0 / grid_step;
    let levels = levels_f.round() as u32;
    if (levels as f64 - levels_f).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "grid step {grid_step} does not divide one"
        )));
    }
    let points = simplex_grid(spec.k(), levels);
    let rows = points
        .par_iter()
        .map(|raw| -> Result<RegionRow> {
            let p = pmf_from_masses(raw.clone())?;
            let m = indistinguishability(spec, &p)?;
            Ok(RegionRow {
                p: raw.clone(),
                member: m.member,
                inner_value: m.inner_value,
                emd: m.emd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionSweep {
        k: spec.k(),
        grid_step,
        rows,
    })
}
