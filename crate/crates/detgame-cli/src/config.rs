//! Run configuration: a strict JSON schema in which every number may be
//! written bare or as a decimal string, and unknown keys are errors rather
//! than surprises.

use crate::emit::{fmt_f64, Json};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Distortion {
    pub kind: String,
    pub p: Option<f64>,
    pub values: Option<Vec<Vec<f64>>>,
}

/// Every field a subcommand may consume. Parsing fills what the file
/// provides; each command then demands the subset it needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub game: Option<String>,
    pub p0: Option<Vec<f64>>,
    pub p1: Option<Vec<f64>>,
    pub distortion: Option<Distortion>,
    pub delta0: Option<f64>,
    pub delta1: Option<f64>,
    pub lambda: Option<f64>,
    pub a: Option<f64>,
    pub n: Option<u64>,
    pub n_grid: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub grid_step: Option<f64>,
    pub output: Option<String>,
    pub x: Option<Vec<u64>>,
    pub y_type: Option<Vec<u64>>,
    pub mode: Option<String>,
}

pub fn parse(text: &str) -> Result<RunConfig, String> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    let Value::Object(map) = value else {
        return Err("config must be a JSON object".into());
    };
    let mut cfg = RunConfig::default();
    for (key, v) in &map {
        match key.as_str() {
            "game" => cfg.game = Some(keyword(v, "game", &["np", "bayes"])?),
            "p0" => cfg.p0 = Some(reals(v, "p0")?),
            "p1" => cfg.p1 = Some(reals(v, "p1")?),
            "distortion" => cfg.distortion = Some(distortion(v)?),
            "delta0" => cfg.delta0 = Some(real(v, "delta0")?),
            "delta1" => cfg.delta1 = Some(real(v, "delta1")?),
            "lambda" => cfg.lambda = Some(real(v, "lambda")?),
            "a" => cfg.a = Some(real(v, "a")?),
            "n" => cfg.n = Some(integer(v, "n")?),
            "n_grid" => cfg.n_grid = Some(integers(v, "n_grid")?),
            "trials" => cfg.trials = Some(integer(v, "trials")?),
            "seed" => cfg.seed = Some(integer(v, "seed")?),
            "grid_step" => cfg.grid_step = Some(real(v, "grid_step")?),
            "output" => cfg.output = Some(keyword(v, "output", &["json", "csv"])?),
            "x" => cfg.x = Some(integers(v, "x")?),
            "y_type" => cfg.y_type = Some(integers(v, "y_type")?),
            "mode" => cfg.mode = Some(keyword(v, "mode", &["ratio", "divergence"])?),
            other => return Err(format!("unknown config key `{other}`")),
        }
    }
    Ok(cfg)
}

fn real(v: &Value, key: &str) -> Result<f64, String> {
    let x = match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("config key `{key}` is out of range"))?,
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("config key `{key}` is not a decimal number: {s:?}"))?,
        _ => return Err(format!("config key `{key}` must be a number or decimal string")),
    };
    if !x.is_finite() {
        return Err(format!("config key `{key}` must be finite, got {x}"));
    }
    Ok(x)
}

fn integer(v: &Value, key: &str) -> Result<u64, String> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| format!("config key `{key}` must be a nonnegative integer")),
        Value::String(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("config key `{key}` is not a nonnegative integer: {s:?}")),
        _ => Err(format!(
            "config key `{key}` must be an integer or decimal string"
        )),
    }
}

fn reals(v: &Value, key: &str) -> Result<Vec<f64>, String> {
    let Value::Array(items) = v else {
        return Err(format!("config key `{key}` must be an array"));
    };
    items.iter().map(|item| real(item, key)).collect()
}

fn integers(v: &Value, key: &str) -> Result<Vec<u64>, String> {
    let Value::Array(items) = v else {
        return Err(format!("config key `{key}` must be an array"));
    };
    items.iter().map(|item| integer(item, key)).collect()
}

fn keyword(v: &Value, key: &str, allowed: &[&str]) -> Result<String, String> {
    let Value::String(s) = v else {
        return Err(format!("config key `{key}` must be a string"));
    };
    if allowed.contains(&s.as_str()) {
        Ok(s.clone())
    } else {
        Err(format!(
            "config key `{key}` must be one of {}, got {s:?}",
            allowed.join(", ")
        ))
    }
}

fn distortion(v: &Value) -> Result<Distortion, String> {
    let Value::Object(map) = v else {
        return Err("config key `distortion` must be an object".into());
    };
    let mut kind = None;
    let mut p = None;
    let mut values = None;
    for (key, item) in map {
        match key.as_str() {
            "kind" => kind = Some(keyword(item, "distortion.kind", &["hamming", "lp_power", "matrix"])?),
            "p" => p = Some(real(item, "distortion.p")?),
            "values" => {
                let Value::Array(rows) = item else {
                    return Err("config key `distortion.values` must be an array of rows".into());
                };
                let parsed: Result<Vec<Vec<f64>>, String> = rows
                    .iter()
                    .map(|row| reals(row, "distortion.values"))
                    .collect();
                values = Some(parsed?);
            }
            other => return Err(format!("unknown distortion key `{other}`")),
        }
    }
    let kind = kind.ok_or("config key `distortion.kind` is required")?;
    match kind.as_str() {
        "hamming" => {
            if p.is_some() || values.is_some() {
                return Err("distortion kind hamming takes neither `p` nor `values`".into());
            }
        }
        "lp_power" => {
            if p.is_none() {
                return Err("distortion kind lp_power requires the exponent `p`".into());
            }
            if values.is_some() {
                return Err("distortion kind lp_power takes no `values`".into());
            }
        }
        "matrix" => {
            if values.is_none() {
                return Err("distortion kind matrix requires `values`".into());
            }
            if p.is_some() {
                return Err("distortion kind matrix takes no `p`".into());
            }
        }
        _ => unreachable!(),
    }
    Ok(Distortion { kind, p, values })
}

/// The resolved config as canonical JSON: fixed key order, every number a
/// decimal string. Feeding the echo back reproduces the run.
pub fn echo(cfg: &RunConfig) -> Json {
    let mut pairs: Vec<(&str, Json)> = Vec::new();
    if let Some(game) = &cfg.game {
        pairs.push(("game", Json::str(game.clone())));
    }
    if let Some(p0) = &cfg.p0 {
        pairs.push(("p0", real_strings(p0)));
    }
    if let Some(p1) = &cfg.p1 {
        pairs.push(("p1", real_strings(p1)));
    }
    if let Some(d) = &cfg.distortion {
        let mut inner: Vec<(&str, Json)> = vec![("kind", Json::str(d.kind.clone()))];
        if let Some(p) = d.p {
            inner.push(("p", Json::str(fmt_f64(p))));
        }
        if let Some(values) = &d.values {
            inner.push((
                "values",
                Json::Arr(values.iter().map(|row| real_strings(row)).collect()),
            ));
        }
        pairs.push(("distortion", Json::obj(inner)));
    }
    if let Some(x) = cfg.delta0 {
        pairs.push(("delta0", Json::str(fmt_f64(x))));
    }
    if let Some(x) = cfg.delta1 {
        pairs.push(("delta1", Json::str(fmt_f64(x))));
    }
    if let Some(x) = cfg.lambda {
        pairs.push(("lambda", Json::str(fmt_f64(x))));
    }
    if let Some(x) = cfg.a {
        pairs.push(("a", Json::str(fmt_f64(x))));
    }
    if let Some(n) = cfg.n {
        pairs.push(("n", Json::str(n.to_string())));
    }
    if let Some(grid) = &cfg.n_grid {
        pairs.push(("n_grid", int_strings(grid)));
    }
    if let Some(t) = cfg.trials {
        pairs.push(("trials", Json::str(t.to_string())));
    }
    if let Some(s) = cfg.seed {
        pairs.push(("seed", Json::str(s.to_string())));
    }
    if let Some(x) = cfg.grid_step {
        pairs.push(("grid_step", Json::str(fmt_f64(x))));
    }
    if let Some(out) = &cfg.output {
        pairs.push(("output", Json::str(out.clone())));
    }
    if let Some(x) = &cfg.x {
        pairs.push(("x", int_strings(x)));
    }
    if let Some(y) = &cfg.y_type {
        pairs.push(("y_type", int_strings(y)));
    }
    if let Some(mode) = &cfg.mode {
        pairs.push(("mode", Json::str(mode.clone())));
    }
    Json::obj(pairs)
}

fn real_strings(xs: &[f64]) -> Json {
    Json::Arr(xs.iter().map(|&x| Json::str(fmt_f64(x))).collect())
}

fn int_strings(xs: &[u64]) -> Json {
    Json::Arr(xs.iter().map(|&x| Json::str(x.to_string())).collect())
}
