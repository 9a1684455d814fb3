//! Monte Carlo play of the finite-blocklength game: both hypotheses, the
//! dominant attack, a chosen defense, over a grid of blocklengths, with
//! interval estimates and an exponent fit.
//!
//! Every trial derives its generator from the task seed and a trial id
//! alone, so results are bit-identical however the work is scheduled across
//! threads.

use crate::exact::DistortionBound;
use crate::exponents::GameSpec;
use crate::game::{Defense, DefenseEval};
use crate::simplex::Pmf;
use crate::types::{realize_output, AttackSampler, Composition};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Two-sided 95% normal quantile for the interval estimates.
const WILSON_Z: f64 = 1.959963984540054;

/// Error events needed before a blocklength participates in the exponent
/// fit; rarer counts carry too much relative noise.
const FIT_MIN_EVENTS: u64 = 50;

/// Estimated error rates at one blocklength.
#[derive(Debug, Clone, Copy)]
pub struct SimPoint {
    pub n: u32,
    pub trials: u64,
    pub fp_events: u64,
    pub fn_events: u64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// Wilson score interval at 95%.
    pub fp_ci: (f64, f64),
    pub fn_ci: (f64, f64),
}

/// Least-squares decay rate of `ln(rate)` against `n`.
#[derive(Debug, Clone, Copy)]
pub struct ExponentFit {
    /// Estimated exponent, the negated slope.
    pub exponent: f64,
    /// Fitted log rate at `n = 0`.
    pub intercept: f64,
    /// Standard error of the exponent; absent without residual degrees of
    /// freedom.
    pub stderr: Option<f64>,
    pub points_used: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub seed: u64,
    pub trials: u64,
    pub points: Vec<SimPoint>,
    pub fp_fit: Option<ExponentFit>,
    pub fn_fit: Option<ExponentFit>,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one trial: the stream depends only on `(seed, id)`.
fn task_rng(seed: u64, id: u64) -> ChaCha12Rng {
    let mut state = seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

fn wilson_interval(events: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = events as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The boundary endpoints are exact; don't leave rounding dust there.
    let lo = if events == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if events == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

fn fit_exponent(points: &[(u32, u64, u64)]) -> Option<ExponentFit> {
    // (n, events, trials) with enough events to trust the log.
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, ev, _)| ev >= FIT_MIN_EVENTS)
        .map(|&(n, ev, tr)| (n as f64, (ev as f64 / tr as f64).ln()))
        .collect();
    let m = usable.len();
    if m < 2 {
        return None;
    }
    let sx: f64 = usable.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let sy: f64 = usable.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = usable.iter().map(|p| (p.0 - sx) * (p.0 - sx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = sy - slope * sx;
    let stderr = if m >= 3 {
        let ssr: f64 = usable
            .iter()
            .map(|p| {
                let r = p.1 - (intercept + slope * p.0);
                r * r
            })
            .sum();
        Some((ssr / (m as f64 - 2.0) / sxx).sqrt())
    } else {
        None
    };
    Some(ExponentFit {
        exponent: -slope,
        intercept,
        stderr,
        points_used: m,
    })
}

struct TypeCaches {
    samplers: Mutex<HashMap<Vec<u32>, Arc<AttackSampler>>>,
    decisions: Mutex<HashMap<Vec<u32>, f64>>,
}

impl TypeCaches {
    fn new() -> Self {
        Self {
            samplers: Mutex::new(HashMap::new()),
            decisions: Mutex::new(HashMap::new()),
        }
    }

    fn sampler(
        &self,
        x_type: &Composition,
        spec: &GameSpec,
        bound: &DistortionBound,
    ) -> Result<Arc<AttackSampler>> {
        if let Some(s) = self.samplers.lock().unwrap().get(x_type.counts()) {
            return Ok(Arc::clone(s));
        }
        let built = Arc::new(AttackSampler::new(x_type, spec.d(), bound)?);
        let mut map = self.samplers.lock().unwrap();
        Ok(Arc::clone(
            map.entry(x_type.counts().to_vec()).or_insert(built),
        ))
    }

    fn accept_prob(&self, y_type: &Composition, eval: &DefenseEval) -> Result<f64> {
        if let Some(&p) = self.decisions.lock().unwrap().get(y_type.counts()) {
            return Ok(p);
        }
        let p = eval.accept_prob(y_type)?;
        self.decisions
            .lock()
            .unwrap()
            .insert(y_type.counts().to_vec(), p);
        Ok(p)
    }
}

fn draw_symbol(cdf: &[f64], u: f64) -> usize {
    match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
    .min(cdf.len() - 1)
}

/// Error events for one hypothesis at one blocklength.
fn run_block(
    spec: &GameSpec,
    eval: &DefenseEval,
    hyp: u8,
    n: u32,
    n_idx: usize,
    trials: u64,
    seed: u64,
) -> Result<u64> {
    let (p, delta): (&Pmf, f64) = if hyp == 0 {
        (spec.p0(), spec.delta0())
    } else {
        (spec.p1(), spec.delta1())
    };
    let bound = DistortionBound::from_f64(delta)?;
    let k = spec.k();
    let cdf: Vec<f64> = p
        .as_slice()
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let caches = TypeCaches::new();

    (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<u64> {
            let id = ((n_idx as u64) << 33) | ((hyp as u64) << 32) | trial;
            let mut rng = task_rng(seed, id);
            let x: Vec<usize> = (0..n).map(|_| draw_symbol(&cdf, rng.random())).collect();
            let x_type = Composition::of_sequence(&x, k)?;
            let sampler = caches.sampler(&x_type, spec, &bound)?;
            let class = sampler.sample_class(&mut rng);
            let y = realize_output(&x, &class, &mut rng)?;
            let y_type = Composition::of_sequence(&y, k)?;
            let phi = caches.accept_prob(&y_type, eval)?;
            let accept = if phi >= 1.0 {
                true
            } else if phi <= 0.0 {
                false
            } else {
                rng.random::<f64>() < phi
            };
            let error = if hyp == 0 { accept } else { !accept };
            Ok(error as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Simulates the game over a grid of blocklengths.
///
/// Trial `t` of hypothesis `h` at grid slot `i` owns the stream derived
/// from `seed` and the id `(i << 33) | (h << 32) | t`; grids longer than
/// `2^31` slots or more than `2^32` trials are rejected rather than risk
/// id collisions.
pub fn monte_carlo_simulate(
    spec: &GameSpec,
    defense: &Defense,
    n_grid: &[u32],
    trials: u64,
    seed: u64,
) -> Result<SimulationReport> {
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter("empty blocklength grid".into()));
    }
    if trials == 0 || trials > u32::MAX as u64 {
        return Err(Error::InvalidParameter(format!(
            "trial count {trials} outside 1..=2^32"
        )));
    }
    if n_grid.len() >= (1usize << 31) {
        return Err(Error::InvalidParameter("blocklength grid too long".into()));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for (n_idx, &n) in n_grid.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidParameter("blocklength zero".into()));
        }
        let eval = DefenseEval::new(spec, defense, n)?;
        let fp_events = run_block(spec, &eval, 0, n, n_idx, trials, seed)?;
        let fn_events = run_block(spec, &eval, 1, n, n_idx, trials, seed)?;
        points.push(SimPoint {
            n,
            trials,
            fp_events,
            fn_events,
            fp_rate: fp_events as f64 / trials as f64,
            fn_rate: fn_events as f64 / trials as f64,
            fp_ci: wilson_interval(fp_events, trials),
            fn_ci: wilson_interval(fn_events, trials),
        });
    }
    let fp_fit = fit_exponent(
        &points
            .iter()
            .map(|p| (p.n, p.fp_events, p.trials))
            .collect::<Vec<_>>(),
    );
    let fn_fit = fit_exponent(
        &points
            .iter()
            .map(|p| (p.n, p.fn_events, p.trials))
            .collect::<Vec<_>>(),
    );
    Ok(SimulationReport {
        seed,
        trials,
        points,
        fp_fit,
        fn_fit,
    })
}
