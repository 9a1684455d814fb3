//! Minimum-cost transportation between two probability vectors: the
//! earth-mover distance under a distortion matrix.
//!
//! Solved by the network-simplex method on the bipartite transportation
//! graph: northwest-corner start, dual (u, v) recomputation from the basis
//! tree, lowest-index entering rule, ratio-test leaving rule with
//! lowest-index ties. Every solve is certified before returning: marginals,
//! dual feasibility, and the primal-dual gap are checked, so a returned plan
//! is optimal up to roundoff rather than trusted.

use crate::simplex::{DistortionMatrix, Pmf};
use crate::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;
const CERT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

/// An optimal transportation plan with its certificate data.
#[derive(Debug, Clone)]
pub struct Transport {
    plan: Vec<f64>,
    k: usize,
    cost: f64,
    row_duals: Vec<f64>,
    col_duals: Vec<f64>,
}

impl Transport {
    /// Optimal cost.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Row-major k-by-k plan; rows marginalize to the source, columns to the
    /// target.
    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.k + j]
    }

    /// Optimal duals (row potentials, column potentials). Feasible for the
    /// dual program: `u_i + v_j <= cost_ij` up to roundoff.
    pub fn duals(&self) -> (&[f64], &[f64]) {
        (&self.row_duals, &self.col_duals)
    }
}

/// Earth-mover distance from `p` to `q` under `d`, with the optimal plan.
pub fn emd(p: &Pmf, q: &Pmf, d: &DistortionMatrix) -> Result<Transport> {
    if p.k() != d.k() || q.k() != d.k() {
        return Err(Error::Dimension(format!(
            "emd over {} and {} symbols against a {}-symbol distortion",
            p.k(),
            q.k(),
            d.k()
        )));
    }
    min_cost_transport(p.as_slice(), q.as_slice(), d.values(), d.k())
}

/// Minimum-cost plan moving `supply` onto `demand` under an arbitrary
/// nonnegative cost matrix. Both sides must have equal total mass.
pub fn min_cost_transport(
    supply: &[f64],
    demand: &[f64],
    costs: &[f64],
    k: usize,
) -> Result<Transport> {
    if supply.len() != k || demand.len() != k || costs.len() != k * k {
        return Err(Error::Dimension("transportation shape mismatch".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "unbalanced transportation: supply {total_s}, demand {total_d}"
        )));
    }

    let mut flow = vec![0.0f64; k * k];
    let mut basic = vec![false; k * k];

    // Northwest-corner start. Exactly 2k - 1 cells enter the basis, zero
    // allocations included, which keeps the basis a spanning tree even when
    // some supplies or demands vanish. Marginals may carry ulp-level dust,
    // so the walk is clamped to the grid instead of trusting exhaustion to
    // steer it.
    {
        let mut s: Vec<f64> = supply.to_vec();
        let mut d: Vec<f64> = demand.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let a = s[i].min(d[j]).max(0.0);
            flow[i * k + j] = a;
            basic[i * k + j] = true;
            s[i] -= a;
            d[j] -= a;
            if i == k - 1 && j == k - 1 {
                break;
            }
            if i == k - 1 {
                j += 1;
            } else if j == k - 1 {
                i += 1;
            } else if d[j] <= PIVOT_TOL {
                j += 1;
            } else {
                i += 1;
            }
        }
    }

    let mut u = vec![0.0f64; k];
    let mut v = vec![0.0f64; k];
    for _ in 0..MAX_PIVOTS {
        compute_duals(&basic, costs, k, &mut u, &mut v)?;

        // Entering cell: lowest flattened index with negative reduced cost.
        let mut entering = None;
        for idx in 0..k * k {
            if basic[idx] {
                continue;
            }
            let (i, j) = (idx / k, idx % k);
            if costs[idx] - u[i] - v[j] < -PIVOT_TOL {
                entering = Some(idx);
                break;
            }
        }
        let entering = match entering {
            Some(e) => e,
            None => {
                return certify(flow, k, supply, demand, costs, u, v);
            }
        };

        let cycle = basis_cycle(&basic, k, entering / k, entering % k)?;
        // Odd positions in the cycle lose flow.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &cell) in cycle.iter().enumerate() {
            if pos % 2 == 1 {
                let fl = flow[cell];
                if fl < theta - PIVOT_TOL || (fl < theta + PIVOT_TOL && cell < leaving) {
                    theta = fl;
                    leaving = cell;
                }
            }
        }
        for (pos, &cell) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                flow[cell] += theta;
            } else {
                flow[cell] = (flow[cell] - theta).max(0.0);
            }
        }
        basic[entering] = true;
        basic[leaving] = false;
        flow[leaving] = 0.0;
    }
    Err(Error::ResourceBudget(
        "transportation solve exceeded the pivot cap".into(),
    ))
}

/// Solves `u_i + v_j = cost_ij` over the basic cells, anchored at `u_0 = 0`,
/// by sweeping the basis tree.
fn compute_duals(
    basic: &[bool],
    costs: &[f64],
    k: usize,
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let mut u_set = vec![false; k];
    let mut v_set = vec![false; k];
    u[0] = 0.0;
    u_set[0] = true;
    let mut progressed = true;
    while progressed {
        progressed = false;
        for idx in 0..k * k {
            if !basic[idx] {
                continue;
            }
            let (i, j) = (idx / k, idx % k);
            if u_set[i] && !v_set[j] {
                v[j] = costs[idx] - u[i];
                v_set[j] = true;
                progressed = true;
            } else if v_set[j] && !u_set[i] {
                u[i] = costs[idx] - v[j];
                u_set[i] = true;
                progressed = true;
            }
        }
    }
    if u_set.iter().all(|&b| b) && v_set.iter().all(|&b| b) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "transportation basis is not a spanning tree".into(),
        ))
    }
}

/// The alternating cycle closed by admitting cell `(ei, ej)` into the basis
/// tree: the entering cell first, then the tree path from column `ej` back
/// to row `ei`, cells alternating between the entering row-to-column sense.
fn basis_cycle(basic: &[bool], k: usize, ei: usize, ej: usize) -> Result<Vec<usize>> {
    // Nodes 0..k are rows, k..2k are columns.
    let mut parent = vec![usize::MAX; 2 * k];
    let mut seen = vec![false; 2 * k];
    let start = ei;
    let goal = k + ej;
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        if node < k {
            for j in 0..k {
                let other = k + j;
                if basic[node * k + j] && !seen[other] && !(node == ei && j == ej) {
                    seen[other] = true;
                    parent[other] = node;
                    queue.push_back(other);
                }
            }
        } else {
            let j = node - k;
            for i in 0..k {
                if basic[i * k + j] && !seen[i] {
                    seen[i] = true;
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    if !seen[goal] {
        return Err(Error::InvalidParameter(
            "transportation basis is not a spanning tree".into(),
        ));
    }
    let mut nodes = vec![goal];
    let mut at = goal;
    while at != start {
        at = parent[at];
        nodes.push(at);
    }
    // nodes runs goal -> start; the cycle cells are entering, then each edge
    // of the path.
    let mut cells = vec![ei * k + ej];
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (row, col) = if a < k { (a, b - k) } else { (b, a - k) };
        cells.push(row * k + col);
    }
    Ok(cells)
}

fn certify(
    flow: Vec<f64>,
    k: usize,
    supply: &[f64],
    demand: &[f64],
    costs: &[f64],
    u: Vec<f64>,
    v: Vec<f64>,
) -> Result<Transport> {
    for i in 0..k {
        let row: f64 = flow[i * k..(i + 1) * k].iter().sum();
        if (row - supply[i]).abs() > CERT_TOL {
            return Err(Error::InvalidParameter(format!(
                "transportation row {i} marginal off by {}",
                (row - supply[i]).abs()
            )));
        }
    }
    for j in 0..k {
        let col: f64 = (0..k).map(|i| flow[i * k + j]).sum();
        if (col - demand[j]).abs() > CERT_TOL {
            return Err(Error::InvalidParameter(format!(
                "transportation column {j} marginal off by {}",
                (col - demand[j]).abs()
            )));
        }
    }
    let cost: f64 = flow.iter().zip(costs).map(|(f, c)| f * c).sum();
    let scale = cost.abs().max(1.0);
    for idx in 0..k * k {
        if costs[idx] - u[idx / k] - v[idx % k] < -CERT_TOL * scale {
            return Err(Error::InvalidParameter(
                "transportation duals are infeasible".into(),
            ));
        }
    }
    let dual: f64 = u.iter().zip(supply).map(|(a, b)| a * b).sum::<f64>()
        + v.iter().zip(demand).map(|(a, b)| a * b).sum::<f64>();
    if (cost - dual).abs() > CERT_TOL * scale {
        return Err(Error::InvalidParameter(format!(
            "transportation duality gap {}",
            (cost - dual).abs()
        )));
    }
    Ok(Transport {
        plan: flow,
        k,
        cost,
        row_duals: u,
        col_duals: v,
    })
}
