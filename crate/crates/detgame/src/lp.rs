//! Dense two-phase primal simplex for small linear programs over
//! nonnegative variables.
//!
//! Sized for the handful-of-symbols programs this crate produces (tens of
//! variables, never more than a few hundred): a plain tableau with Bland's
//! rule, which cannot cycle, and explicit infeasible / unbounded outcomes.
//! Redundant equality rows are detected and dropped after phase one.

use crate::{Error, Result};

const TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Eq,
    Le,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Rel,
    pub rhs: f64,
}

/// Minimize `objective . x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.rows[row].clone();
        for (r, tr) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = tr[col];
            if factor != 0.0 {
                for (c, v) in tr.iter_mut().enumerate() {
                    *v -= factor * pivot_row[c];
                }
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule on the given objective costs. Returns the final reduced
    /// costs' consistency: Ok(true) optimal, Ok(false) unbounded.
    fn run(&mut self, costs: &[f64], pivots: &mut usize) -> Result<bool> {
        loop {
            // Reduced costs: c_j - c_B . B^{-1} A_j, read off the tableau.
            let mut entering = None;
            for col in 0..self.n_cols {
                if self.basis.contains(&col) {
                    continue;
                }
                let mut red = costs[col];
                for (r, &b) in self.basis.iter().enumerate() {
                    red -= costs[b] * self.rows[r][col];
                }
                if red < -TOL {
                    entering = Some(col);
                    break;
                }
            }
            let col = match entering {
                Some(c) => c,
                None => return Ok(true),
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > TOL {
                    let ratio = self.rows[r][self.n_cols] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let (row, _) = match leave {
                Some(l) => l,
                None => return Ok(false),
            };
            self.pivot(row, col);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::ResourceBudget(
                    "simplex exceeded the pivot cap".into(),
                ));
            }
        }
    }
}

/// Solves the program. Variables are implicitly nonnegative.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    let n = lp.n_vars;
    if lp.objective.len() != n {
        return Err(Error::Dimension("objective length mismatch".into()));
    }
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(Error::Dimension("constraint length mismatch".into()));
        }
    }
    let m = lp.constraints.len();
    let n_slack = lp.constraints.iter().filter(|c| c.rel == Rel::Le).count();
    // Columns: structural, slack, artificial; one artificial per row.
    let n_total = n + n_slack + m;
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut slack_at = n;
    for (r, c) in lp.constraints.iter().enumerate() {
        let mut row = vec![0.0; n_total + 1];
        row[..n].copy_from_slice(&c.coeffs);
        if c.rel == Rel::Le {
            row[slack_at] = 1.0;
            slack_at += 1;
        }
        row[n_total] = c.rhs;
        if c.rhs < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        row[n + n_slack + r] = 1.0;
        rows.push(row);
        basis.push(n + n_slack + r);
    }
    let mut tab = Tableau {
        rows,
        basis,
        n_cols: n_total,
    };
    let mut pivots = 0usize;

    // Phase one: minimize the artificial mass.
    let mut phase1 = vec![0.0; n_total];
    for c in phase1.iter_mut().skip(n + n_slack) {
        *c = 1.0;
    }
    if m > 0 {
        tab.run(&phase1, &mut pivots)?;
        let infeas: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= n + n_slack)
            .map(|(r, _)| tab.rows[r][n_total])
            .sum();
        if infeas > 1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive leftover zero-level artificials out; an all-zero row is
        // redundant and gets dropped.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= n + n_slack {
                let col = (0..n + n_slack)
                    .find(|&c| tab.rows[r][c].abs() > 1e-8);
                match col {
                    Some(c) => tab.pivot(r, c),
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    // Phase two: artificials are frozen out by an effectively infinite cost.
    let mut phase2 = vec![0.0; n_total];
    phase2[..n].copy_from_slice(&lp.objective);
    for c in phase2.iter_mut().skip(n + n_slack) {
        *c = 1e30;
    }
    let optimal = tab.run(&phase2, &mut pivots)?;
    if !optimal {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rows[r][tab.n_cols].max(0.0);
        }
    }
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    Ok(LpOutcome::Optimal { x, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn le(coeffs: &[f64], rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            rel: Rel::Le,
            rhs,
        }
    }

    fn eq(coeffs: &[f64], rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            rel: Rel::Eq,
            rhs,
        }
    }

    #[test]
    fn corner_of_a_triangle() {
        let lp = LinearProgram {
            n_vars: 2,
            objective: vec![-1.0, -1.0],
            constraints: vec![le(&[1.0, 1.0], 1.0)],
        };
        match solve(&lp).unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert_abs_diff_eq!(value, -1.0, epsilon = 1e-9);
                assert_abs_diff_eq!(x[0] + x[1], 1.0, epsilon = 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility() {
        let lp = LinearProgram {
            n_vars: 1,
            objective: vec![0.0],
            constraints: vec![le(&[1.0], -1.0)],
        };
        assert!(matches!(solve(&lp).unwrap(), LpOutcome::Infeasible));
    }

    #[test]
    fn detects_unboundedness() {
        let lp = LinearProgram {
            n_vars: 1,
            objective: vec![-1.0],
            constraints: vec![],
        };
        assert!(matches!(solve(&lp).unwrap(), LpOutcome::Unbounded));
    }

    #[test]
    fn drops_redundant_equalities() {
        let lp = LinearProgram {
            n_vars: 2,
            objective: vec![1.0, 0.0],
            constraints: vec![eq(&[1.0, 1.0], 1.0), eq(&[2.0, 2.0], 2.0)],
        };
        match solve(&lp).unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert_abs_diff_eq!(value, 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn survives_a_classic_degenerate_instance() {
        // Beale's example: cycles under naive pivoting, optimum -1/20.
        let lp = LinearProgram {
            n_vars: 4,
            objective: vec![-0.75, 150.0, -0.02, 6.0],
            constraints: vec![
                le(&[0.25, -60.0, -0.04, 9.0], 0.0),
                le(&[0.5, -90.0, -0.02, 3.0], 0.0),
                le(&[0.0, 0.0, 1.0, 0.0], 1.0),
            ],
        };
        match solve(&lp).unwrap() {
            LpOutcome::Optimal { value, .. } => {
                assert_abs_diff_eq!(value, -0.05, epsilon = 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn agrees_with_the_transportation_solver() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..30 {
            let k = 3usize;
            let mut p = [0.0f64; 3];
            let mut q = [0.0f64; 3];
            for v in p.iter_mut() {
                *v = rng.random::<f64>() + 0.05;
            }
            for v in q.iter_mut() {
                *v = rng.random::<f64>() + 0.05;
            }
            let ps: f64 = p.iter().sum();
            let qs: f64 = q.iter().sum();
            for v in p.iter_mut() {
                *v /= ps;
            }
            for v in q.iter_mut() {
                *v /= qs;
            }
            let costs: Vec<f64> = (0..k * k).map(|_| rng.random::<f64>()).collect();

            let mut constraints = Vec::new();
            for i in 0..k {
                let mut c = vec![0.0; k * k];
                for j in 0..k {
                    c[i * k + j] = 1.0;
                }
                constraints.push(eq(&c, p[i]));
            }
            for j in 0..k {
                let mut c = vec![0.0; k * k];
                for i in 0..k {
                    c[i * k + j] = 1.0;
                }
                constraints.push(eq(&c, q[j]));
            }
            let lp = LinearProgram {
                n_vars: k * k,
                objective: costs.clone(),
                constraints,
            };
            let lp_value = match solve(&lp).unwrap() {
                LpOutcome::Optimal { value, .. } => value,
                other => panic!("{other:?}"),
            };
            let net = crate::transport::min_cost_transport(&p, &q, &costs, k).unwrap();
            assert_abs_diff_eq!(lp_value, net.cost(), epsilon = 1e-8);
        }
    }
}
