//! Run configuration: `key = value` lines (`#` starts a comment), or the same
//! keys as a JSON object.
//!
//! ```text
//! kind = friedrichs          # friedrichs | poincare | trace
//! a_tilde = 0.001, 1, 1000   # one value or a sweep
//! theta = 0.75
//! err_tol = 0.01
//! rho = 1
//! sigma = 2                  # trace only
//! trust_factor = 5
//! max_iterations = 40
//! out = results
//! emit_vtk = false
//! mesh = square.txt          # optional; default is the criss-cross square
//! friedrichs_upper = 0.5743  # trace only: skip the Friedrichs stage
//! friedrichs_cache = f/summary.json  # trace only: reuse a Friedrichs run
//! ```

use std::path::PathBuf;

use eigenbound_core::assembly::Parameters;
use eigenbound_core::ProblemKind;
use serde::Deserialize;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: ProblemKind,
    pub a_tilde: Vec<f64>,
    pub params: Parameters,
    pub out: PathBuf,
    pub emit_vtk: bool,
    pub mesh: Option<PathBuf>,
    pub friedrichs_upper: Option<f64>,
    pub friedrichs_cache: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<String>,
    #[serde(default, deserialize_with = "scalar_or_list")]
    a_tilde: Option<Vec<f64>>,
    theta: Option<f64>,
    err_tol: Option<f64>,
    rho: Option<f64>,
    sigma: Option<f64>,
    trust_factor: Option<f64>,
    max_iterations: Option<usize>,
    out: Option<PathBuf>,
    emit_vtk: Option<bool>,
    mesh: Option<PathBuf>,
    friedrichs_upper: Option<f64>,
    friedrichs_cache: Option<PathBuf>,
}

fn scalar_or_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(Some(match V::deserialize(d)? {
        V::One(x) => vec![x],
        V::Many(v) => v,
    }))
}

fn number(key: &str, v: &str) -> Result<f64, String> {
    v.parse().map_err(|_| format!("{key}: expected a number, found {v:?}"))
}

fn parse_key_value(text: &str) -> Result<RawConfig, String> {
    let mut raw = RawConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(format!("line {}: duplicate key {key:?}", i + 1));
        }
        let at = |e: String| format!("line {}: {e}", i + 1);
        match key {
            "kind" => raw.kind = Some(value.to_string()),
            "a_tilde" => {
                let v: Result<Vec<f64>, String> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| number(key, s))
                    .collect();
                raw.a_tilde = Some(v.map_err(at)?);
            }
            "theta" => raw.theta = Some(number(key, value).map_err(at)?),
            "err_tol" => raw.err_tol = Some(number(key, value).map_err(at)?),
            "rho" => raw.rho = Some(number(key, value).map_err(at)?),
            "sigma" => raw.sigma = Some(number(key, value).map_err(at)?),
            "trust_factor" => raw.trust_factor = Some(number(key, value).map_err(at)?),
            "friedrichs_upper" => raw.friedrichs_upper = Some(number(key, value).map_err(at)?),
            "max_iterations" => {
                raw.max_iterations = Some(
                    value.parse().map_err(|_| at(format!("max_iterations: expected an integer, found {value:?}")))?,
                )
            }
            "out" => raw.out = Some(PathBuf::from(value)),
            "mesh" => raw.mesh = Some(PathBuf::from(value)),
            "friedrichs_cache" => raw.friedrichs_cache = Some(PathBuf::from(value)),
            "emit_vtk" => {
                raw.emit_vtk = Some(match value {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    _ => return Err(at(format!("emit_vtk: expected true or false, found {value:?}"))),
                })
            }
            _ => return Err(at(format!("unknown key {key:?}"))),
        }
    }
    Ok(raw)
}

pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    if text.trim().is_empty() {
        return Err("configuration is empty".into());
    }
    let raw = if text.trim_start().starts_with('{') {
        serde_json::from_str::<RawConfig>(text).map_err(|e| format!("invalid JSON configuration: {e}"))?
    } else {
        parse_key_value(text)?
    };

    let kind: ProblemKind = raw.kind.as_deref().ok_or("missing key \"kind\"")?.parse().map_err(|e| format!("{e}"))?;
    let a_tilde = raw.a_tilde.ok_or("missing key \"a_tilde\"")?;
    if a_tilde.is_empty() {
        return Err("a_tilde needs at least one value".into());
    }
    if let Some(a) = a_tilde.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(format!("a_tilde = {a} must be positive"));
    }
    let d = Parameters::default();
    let params = Parameters {
        theta: raw.theta.unwrap_or(d.theta),
        err_tol: raw.err_tol.unwrap_or(d.err_tol),
        rho: raw.rho.unwrap_or(d.rho),
        sigma: raw.sigma.unwrap_or(d.sigma),
        trust_factor: raw.trust_factor.unwrap_or(d.trust_factor),
        max_iterations: raw.max_iterations.unwrap_or(d.max_iterations),
    };
    if !(params.theta > 0.0 && params.theta < 1.0) {
        return Err(format!("theta = {} must lie in (0, 1)", params.theta));
    }
    if !(params.err_tol > 0.0) {
        return Err("err_tol must be positive".into());
    }
    if !(params.rho > 0.0 && params.sigma > 0.0 && params.trust_factor > 0.0) {
        return Err("rho, sigma and trust_factor must be positive".into());
    }
    if params.max_iterations == 0 {
        return Err("max_iterations must be at least 1".into());
    }
    if let Some(c) = raw.friedrichs_upper {
        if !(c > 0.0 && c.is_finite()) {
            return Err("friedrichs_upper must be positive".into());
        }
    }
    if kind != ProblemKind::Trace && (raw.friedrichs_upper.is_some() || raw.friedrichs_cache.is_some()) {
        return Err("friedrichs_upper and friedrichs_cache apply to trace runs only".into());
    }
    if raw.friedrichs_upper.is_some() && raw.friedrichs_cache.is_some() {
        return Err("give at most one of friedrichs_upper and friedrichs_cache".into());
    }
    Ok(RunConfig {
        kind,
        a_tilde,
        params,
        out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
        emit_vtk: raw.emit_vtk.unwrap_or(false),
        mesh: raw.mesh,
        friedrichs_upper: raw.friedrichs_upper,
        friedrichs_cache: raw.friedrichs_cache,
    })
}
