//! Subcommand implementations: resolve the configuration, run the library,
//! render one complete output document. Nothing is printed until a command
//! has fully succeeded, so a failing run never leaves partial output behind.

use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use detgame::types::{realize_output, AttackSampler};
use detgame::{
    bayes_exponent, emd, exact_error_probs, gen_divergence, indistinguishability, kl_divergence,
    limit_exponents, make_distortion, monte_carlo_simulate, np_fn_exponent,
    np_fn_exponent_metric_form, region_sweep, BayesMode, Composition, Defense, DefenseEval,
    DistortionBound, DistortionKind, DistortionMatrix, ExponentResult, GameSpec, Pmf,
};

use crate::config::{self, RunConfig};
use crate::emit::{csv_row, fmt_f64, Json};

/// Flags shared by every subcommand. The value flags override the matching
/// config fields; `--config` is the only required one.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output format, `json` or `csv`, overriding the config.
    #[arg(long)]
    pub output: Option<String>,
    /// Cap on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

/// A run that must not produce output: exit code 2 for configuration and
/// validation problems, 3 for blown resource budgets.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<detgame::Error> for Failure {
    fn from(e: detgame::Error) -> Self {
        let code = match e {
            detgame::Error::ResourceBudget(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Failure::config(message)
    }
}

enum Output {
    Doc(Json),
    Csv(String),
}

pub fn run(name: &'static str, args: &RunArgs) -> Result<String, Failure> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Failure::config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut cfg = config::parse(&text)?;
    apply_overrides(&mut cfg, args)?;
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        // A pool may already exist when tests drive `run` repeatedly in one
        // process; the cap then stays at whatever the first call set.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let csv_capable = matches!(name, "region-sweep" | "simulate");
    if cfg.output.as_deref() == Some("csv") && !csv_capable {
        return Err(Failure::config(format!(
            "csv output is not available for {name}; it renders tables only"
        )));
    }
    let body = match name {
        "kl" => Output::Doc(cmd_kl(&cfg)?),
        "emd" => Output::Doc(cmd_emd(&cfg)?),
        "gendiv" => Output::Doc(cmd_gendiv(&cfg)?),
        "np-exponent" => Output::Doc(cmd_np_exponent(&cfg)?),
        "np-exponent-metric" => Output::Doc(cmd_np_exponent_metric(&cfg)?),
        "bayes-exponent" => Output::Doc(cmd_bayes_exponent(&cfg)?),
        "limits" => Output::Doc(cmd_limits(&cfg)?),
        "region" => Output::Doc(cmd_region(&cfg)?),
        "region-sweep" => cmd_region_sweep(&mut cfg)?,
        "defense-eval" => Output::Doc(cmd_defense_eval(&mut cfg)?),
        "exact-error" => Output::Doc(cmd_exact_error(&mut cfg)?),
        "simulate" => cmd_simulate(&mut cfg)?,
        "attack-sample" => Output::Doc(cmd_attack_sample(&mut cfg)?),
        other => return Err(Failure::config(format!("unknown subcommand {other}"))),
    };
    Ok(match body {
        Output::Doc(result) => envelope(name, &cfg, result).render(),
        Output::Csv(table) => table,
    })
}

fn apply_overrides(cfg: &mut RunConfig, args: &RunArgs) -> Result<(), Failure> {
    if let Some(out) = &args.output {
        if out != "json" && out != "csv" {
            return Err(Failure::config(format!(
                "--output must be json or csv, got {out:?}"
            )));
        }
        cfg.output = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    for (flag, value, slot) in [
        ("--lambda", args.lambda, &mut cfg.lambda),
        ("--a", args.a, &mut cfg.a),
        ("--grid-step", args.grid_step, &mut cfg.grid_step),
    ] {
        if let Some(x) = value {
            if !x.is_finite() {
                return Err(Failure::config(format!("{flag} must be finite, got {x}")));
            }
            *slot = Some(x);
        }
    }
    if let Some(n) = args.n {
        cfg.n = Some(n);
    }
    if let Some(t) = args.trials {
        cfg.trials = Some(t);
    }
    Ok(())
}

fn envelope(name: &str, cfg: &RunConfig, result: Json) -> Json {
    Json::obj(vec![
        ("command", Json::str(name)),
        ("config_echo", config::echo(cfg)),
        ("result", result),
        (
            "diagnostics",
            Json::obj(vec![(
                "threads",
                Json::num_int(rayon::current_num_threads()),
            )]),
        ),
        ("version", Json::str(env!("CARGO_PKG_VERSION"))),
    ])
}

fn need<'a, T>(field: &'a Option<T>, key: &str) -> Result<&'a T, Failure> {
    field
        .as_ref()
        .ok_or_else(|| Failure::config(format!("config key `{key}` is required for this command")))
}

fn pmf(field: &Option<Vec<f64>>, key: &str) -> Result<Pmf, Failure> {
    Ok(Pmf::new(need(field, key)?.clone())?)
}

fn distortion_for(cfg: &RunConfig, k: usize) -> Result<DistortionMatrix, Failure> {
    let d = need(&cfg.distortion, "distortion")?;
    let kind = match d.kind.as_str() {
        "hamming" => DistortionKind::Hamming,
        "lp_power" => DistortionKind::LpPower(d.p.unwrap()),
        _ => {
            let values = d.values.as_ref().unwrap();
            let rows = values.len();
            if values.iter().any(|row| row.len() != rows) {
                return Err(Failure::config(
                    "config key `distortion.values` must be a square matrix",
                ));
            }
            DistortionKind::Explicit(values.iter().flatten().copied().collect())
        }
    };
    Ok(make_distortion(kind, k)?)
}

fn build_spec(cfg: &RunConfig) -> Result<GameSpec, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let p1 = pmf(&cfg.p1, "p1")?;
    let d = distortion_for(cfg, p0.k())?;
    let delta0 = *need(&cfg.delta0, "delta0")?;
    let delta1 = *need(&cfg.delta1, "delta1")?;
    Ok(GameSpec::new(p0, p1, d, delta0, delta1)?)
}

/// The defense the `game` field selects: the randomized acceptance curve at
/// `lambda`, or a cost-weighted test at tilt `a`. Bayes defaults to the
/// divergence statistic; `mode` picks the likelihood ratio instead.
fn build_defense(cfg: &mut RunConfig) -> Result<Defense, Failure> {
    let game = need(&cfg.game, "game")?.clone();
    match game.as_str() {
        "np" => Ok(Defense::Np {
            lambda: *need(&cfg.lambda, "lambda")?,
        }),
        _ => {
            let a = *need(&cfg.a, "a")?;
            let mode = match cfg.mode.get_or_insert_with(|| "divergence".into()).as_str() {
                "ratio" => BayesMode::Ratio,
                _ => BayesMode::Divergence,
            };
            Ok(Defense::Bayes { a, mode })
        }
    }
}

fn small_n(n: u64, key: &str) -> Result<u32, Failure> {
    u32::try_from(n).map_err(|_| Failure::config(format!("config key `{key}` is too large: {n}")))
}

fn json_exponent(r: &ExponentResult) -> Json {
    let mut pairs = vec![
        ("value", Json::num_f(r.value)),
        ("gap", Json::num_f(r.gap)),
        (
            "optimizer",
            match &r.optimizer {
                Some(p) => Json::floats(p.as_slice()),
                None => Json::Null,
            },
        ),
        ("infinite", Json::Bool(r.infinite_reason.is_some())),
    ];
    if let Some(reason) = &r.infinite_reason {
        pairs.push(("reason", Json::str(reason.clone())));
    }
    Json::obj(pairs)
}

fn cmd_kl(cfg: &RunConfig) -> Result<Json, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let p1 = pmf(&cfg.p1, "p1")?;
    let value = kl_divergence(&p0, &p1)?;
    Ok(Json::obj(vec![("value", Json::num_f(value))]))
}

fn cmd_emd(cfg: &RunConfig) -> Result<Json, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let p1 = pmf(&cfg.p1, "p1")?;
    let d = distortion_for(cfg, p0.k())?;
    let t = emd(&p0, &p1, &d)?;
    Ok(Json::obj(vec![
        ("cost", Json::num_f(t.cost())),
        ("plan", Json::matrix(t.plan(), p0.k())),
    ]))
}

/// Least divergence from `p0` over laws that can reach `p1` within `delta0`
/// of expected distortion: the config's two sources name the two arguments.
fn cmd_gendiv(cfg: &RunConfig) -> Result<Json, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let p1 = pmf(&cfg.p1, "p1")?;
    let d = distortion_for(cfg, p0.k())?;
    let delta0 = *need(&cfg.delta0, "delta0")?;
    let g = gen_divergence(&p1, &p0, &d, delta0)?;
    let mut pairs = vec![
        ("value", Json::num_f(g.value)),
        ("gap", Json::num_f(g.gap)),
        (
            "coupling",
            match &g.coupling {
                Some(flat) => Json::matrix(flat, g.k),
                None => Json::Null,
            },
        ),
        (
            "x_marginal",
            match g.x_marginal() {
                Some(m) => Json::floats(&m),
                None => Json::Null,
            },
        ),
        ("infinite", Json::Bool(g.infinite_reason.is_some())),
    ];
    if let Some(reason) = &g.infinite_reason {
        pairs.push(("reason", Json::str(reason.clone())));
    }
    Ok(Json::obj(pairs))
}

fn cmd_np_exponent(cfg: &RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let lambda = *need(&cfg.lambda, "lambda")?;
    Ok(json_exponent(&np_fn_exponent(&spec, lambda)?))
}

fn cmd_np_exponent_metric(cfg: &RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let lambda = *need(&cfg.lambda, "lambda")?;
    Ok(json_exponent(&np_fn_exponent_metric_form(&spec, lambda)?))
}

fn cmd_bayes_exponent(cfg: &RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let a = *need(&cfg.a, "a")?;
    let b = bayes_exponent(&spec, a)?;
    Ok(Json::obj(vec![
        ("payoff_exponent", json_exponent(&b.payoff_exponent)),
        ("fn_exponent", json_exponent(&b.fn_exponent)),
        ("fp_exponent", json_exponent(&b.fp_exponent)),
    ]))
}

fn cmd_limits(cfg: &RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let lim = limit_exponents(&spec)?;
    Ok(Json::obj(vec![
        ("np_limit", json_exponent(&lim.np_limit)),
        ("bayes_limit", json_exponent(&lim.bayes_limit)),
    ]))
}

/// Membership of the probed source `p1` in the indistinguishability region
/// around `p0`.
fn cmd_region(cfg: &RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let probe = pmf(&cfg.p1, "p1")?;
    let r = indistinguishability(&spec, &probe)?;
    Ok(Json::obj(vec![
        ("member", Json::Bool(r.member)),
        ("inner_value", Json::num_f(r.inner_value)),
        ("emd", Json::num_f(r.emd)),
        (
            "metric_inner",
            r.metric_inner.map_or(Json::Null, Json::num_f),
        ),
        ("alpha", r.alpha.map_or(Json::Null, Json::num_f)),
    ]))
}

fn cmd_region_sweep(cfg: &mut RunConfig) -> Result<Output, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let d = distortion_for(cfg, p0.k())?;
    let delta0 = *need(&cfg.delta0, "delta0")?;
    let delta1 = *need(&cfg.delta1, "delta1")?;
    let step = *need(&cfg.grid_step, "grid_step")?;
    // The sweep probes lattice points against p0 alone; the alternative
    // source never enters, so the spec carries a copy of p0 in its place.
    let spec = GameSpec::new(p0.clone(), p0, d, delta0, delta1)?;
    let sweep = region_sweep(&spec, step)?;
    let format = cfg.output.get_or_insert_with(|| "json".into()).clone();
    if format == "csv" {
        let mut header: Vec<String> = (0..sweep.k).map(|i| format!("p{i}")).collect();
        header.extend(
            ["member", "inner_value", "emd"]
                .iter()
                .map(|s| s.to_string()),
        );
        let mut lines = vec![csv_row(&header)];
        for row in &sweep.rows {
            let mut fields: Vec<String> = row.p.iter().map(|&x| fmt_f64(x)).collect();
            fields.push(row.member.to_string());
            fields.push(fmt_f64(row.inner_value));
            fields.push(fmt_f64(row.emd));
            lines.push(csv_row(&fields));
        }
        return Ok(Output::Csv(lines.join("\n")));
    }
    let rows: Vec<Json> = sweep
        .rows
        .iter()
        .map(|row| {
            Json::obj(vec![
                ("p", Json::floats(&row.p)),
                ("member", Json::Bool(row.member)),
                ("inner_value", Json::num_f(row.inner_value)),
                ("emd", Json::num_f(row.emd)),
            ])
        })
        .collect();
    Ok(Output::Doc(Json::obj(vec![
        ("k", Json::num_int(sweep.k)),
        ("grid_step", Json::num_f(sweep.grid_step)),
        ("members", Json::num_int(sweep.rows.iter().filter(|r| r.member).count())),
        ("rows", Json::Arr(rows)),
    ])))
}

fn cmd_defense_eval(cfg: &mut RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let defense = build_defense(cfg)?;
    let counts: Vec<u32> = need(&cfg.y_type, "y_type")?
        .iter()
        .map(|&c| small_n(c, "y_type"))
        .collect::<Result<_, _>>()?;
    let y = Composition::new(counts)?;
    match cfg.n {
        Some(n) if n != u64::from(y.n()) => {
            return Err(Failure::config(format!(
                "config key `n` is {n} but `y_type` sums to {}",
                y.n()
            )));
        }
        Some(_) => {}
        None => cfg.n = Some(u64::from(y.n())),
    }
    let eval = DefenseEval::new(&spec, &defense, y.n())?;
    let accept = eval.accept_prob(&y)?;
    let score = eval.score(&y)?;
    Ok(Json::obj(vec![
        ("n", Json::num_int(y.n())),
        ("accept_h1_prob", Json::num_f(accept)),
        ("score", Json::num_f(score)),
    ]))
}

fn cmd_exact_error(cfg: &mut RunConfig) -> Result<Json, Failure> {
    let spec = build_spec(cfg)?;
    let defense = build_defense(cfg)?;
    let n = small_n(*need(&cfg.n, "n")?, "n")?;
    let probs = exact_error_probs(&spec, &defense, n)?;
    Ok(Json::obj(vec![
        ("n", Json::num_int(probs.n)),
        ("false_positive", Json::num_f(probs.false_positive)),
        ("false_negative", Json::num_f(probs.false_negative)),
    ]))
}

fn cmd_simulate(cfg: &mut RunConfig) -> Result<Output, Failure> {
    let spec = build_spec(cfg)?;
    let defense = build_defense(cfg)?;
    if cfg.n_grid.is_none() {
        match cfg.n {
            Some(n) => cfg.n_grid = Some(vec![n]),
            None => {
                return Err(Failure::config(
                    "config key `n_grid` or `n` is required for this command",
                ));
            }
        }
    }
    let grid: Vec<u32> = cfg
        .n_grid
        .as_ref()
        .unwrap()
        .iter()
        .map(|&n| small_n(n, "n_grid"))
        .collect::<Result<_, _>>()?;
    let trials = *cfg.trials.get_or_insert(10_000);
    let seed = *cfg.seed.get_or_insert(0);
    let report = monte_carlo_simulate(&spec, &defense, &grid, trials, seed)?;
    let format = cfg.output.get_or_insert_with(|| "json".into()).clone();
    if format == "csv" {
        let header = [
            "n", "trials", "fp_events", "fn_events", "fp_rate", "fn_rate", "fp_ci_lo",
            "fp_ci_hi", "fn_ci_lo", "fn_ci_hi",
        ];
        let mut lines = vec![csv_row(&header.map(String::from))];
        for pt in &report.points {
            lines.push(csv_row(&[
                pt.n.to_string(),
                pt.trials.to_string(),
                pt.fp_events.to_string(),
                pt.fn_events.to_string(),
                fmt_f64(pt.fp_rate),
                fmt_f64(pt.fn_rate),
                fmt_f64(pt.fp_ci.0),
                fmt_f64(pt.fp_ci.1),
                fmt_f64(pt.fn_ci.0),
                fmt_f64(pt.fn_ci.1),
            ]));
        }
        return Ok(Output::Csv(lines.join("\n")));
    }
    let points: Vec<Json> = report
        .points
        .iter()
        .map(|pt| {
            Json::obj(vec![
                ("n", Json::num_int(pt.n)),
                ("trials", Json::num_int(pt.trials)),
                ("fp_events", Json::num_int(pt.fp_events)),
                ("fn_events", Json::num_int(pt.fn_events)),
                ("fp_rate", Json::num_f(pt.fp_rate)),
                ("fn_rate", Json::num_f(pt.fn_rate)),
                ("fp_ci", Json::floats(&[pt.fp_ci.0, pt.fp_ci.1])),
                ("fn_ci", Json::floats(&[pt.fn_ci.0, pt.fn_ci.1])),
            ])
        })
        .collect();
    let fit = |f: &Option<detgame::sim::ExponentFit>| match f {
        None => Json::Null,
        Some(fit) => Json::obj(vec![
            ("exponent", Json::num_f(fit.exponent)),
            ("intercept", Json::num_f(fit.intercept)),
            ("stderr", fit.stderr.map_or(Json::Null, Json::num_f)),
            ("points_used", Json::num_int(fit.points_used)),
        ]),
    };
    Ok(Output::Doc(Json::obj(vec![
        ("seed", Json::num_int(report.seed)),
        ("trials", Json::num_int(report.trials)),
        ("points", Json::Arr(points)),
        ("fp_fit", fit(&report.fp_fit)),
        ("fn_fit", fit(&report.fn_fit)),
    ])))
}

/// Draw dominant-attack outputs for the fixed input sequence `x` under the
/// null-side budget `delta0`; `p0` fixes the alphabet.
fn cmd_attack_sample(cfg: &mut RunConfig) -> Result<Json, Failure> {
    let p0 = pmf(&cfg.p0, "p0")?;
    let k = p0.k();
    let d = distortion_for(cfg, k)?;
    let delta0 = *need(&cfg.delta0, "delta0")?;
    let x: Vec<usize> = need(&cfg.x, "x")?.iter().map(|&s| s as usize).collect();
    if let Some(&bad) = x.iter().find(|&&s| s >= k) {
        return Err(Failure::config(format!(
            "config key `x` contains symbol {bad}, outside the {k}-letter alphabet"
        )));
    }
    match cfg.n {
        Some(n) if n != x.len() as u64 => {
            return Err(Failure::config(format!(
                "config key `n` is {n} but `x` has {} symbols",
                x.len()
            )));
        }
        Some(_) => {}
        None => cfg.n = Some(x.len() as u64),
    }
    let trials = *cfg.trials.get_or_insert(1);
    if trials > 1_000_000 {
        return Err(Failure::config(format!(
            "config key `trials` caps at 1000000 draws for attack-sample, got {trials}"
        )));
    }
    let seed = *cfg.seed.get_or_insert(0);
    let bound = DistortionBound::from_f64(delta0)?;
    let x_type = Composition::of_sequence(&x, k)?;
    let sampler = AttackSampler::new(&x_type, &d, &bound)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let class = sampler.sample_class(&mut rng);
        let y = realize_output(&x, &class, &mut rng)?;
        samples.push(Json::Arr(y.into_iter().map(Json::num_int).collect()));
    }
    Ok(Json::obj(vec![
        ("n", Json::num_int(x.len())),
        ("k", Json::num_int(k)),
        // Decimal string: class counts overflow every native JSON integer.
        ("admissible_classes", Json::str(sampler.count().to_string())),
        ("samples", Json::Arr(samples)),
    ]))
}
