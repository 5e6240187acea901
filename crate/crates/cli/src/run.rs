//! Runs a configuration: one adaptive solve per `a_tilde`, with the Friedrichs
//! stage feeding trace runs, and writes the results.

use std::fs;
use std::path::{Path, PathBuf};

use eigenbound_core::io::{export_vtk, read_mesh, write_mesh};
use eigenbound_core::mesh::check_conformity;
use eigenbound_core::{
    run_adaptive_outcome, AdaptOutcome, AdaptStatus, BoundaryLabel, BoundsResult, Coefficients, Mesh, ProblemKind,
    ProblemSpec, SideLabels,
};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Config(String),
    /// Failure while running or writing results: exit code 1.
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub kind: ProblemKind,
    pub a_tilde: f64,
    pub status: String,
    pub converged: bool,
    pub trusted: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friedrichs_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub bounds: Option<BoundsResult>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.converged && self.trusted
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub kind: ProblemKind,
    pub runs: Vec<RunSummary>,
}

fn base_mesh(cfg: &RunConfig, kind: ProblemKind) -> Result<Mesh, CliError> {
    if let Some(path) = &cfg.mesh {
        let mesh = read_mesh(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let report = check_conformity(&mesh);
        if !report.passed() {
            return Err(CliError::Config(format!("{}: {report}", path.display())));
        }
        return Ok(mesh);
    }
    let sides = match kind {
        ProblemKind::Poincare => SideLabels::all(BoundaryLabel::Neumann),
        ProblemKind::Friedrichs | ProblemKind::Trace => SideLabels::right_neumann(),
    };
    Mesh::criss_cross_square(sides).map_err(|e| CliError::Config(e.to_string()))
}

fn spec_for(
    cfg: &RunConfig,
    kind: ProblemKind,
    a_tilde: f64,
    friedrichs_upper: Option<f64>,
) -> Result<ProblemSpec, CliError> {
    let mut spec = ProblemSpec::new(kind, base_mesh(cfg, kind)?, Coefficients::checkerboard(a_tilde));
    spec.params = cfg.params.clone();
    spec.friedrichs_upper = friedrichs_upper;
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

/// `c_up` for `a_tilde` from a summary written by an earlier Friedrichs run.
fn cached_friedrichs_upper(path: &Path, a_tilde: f64) -> Result<f64, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if v.get("kind").and_then(|k| k.as_str()) != Some("friedrichs") {
        return Err(CliError::Config(format!("{}: not a Friedrichs summary", path.display())));
    }
    let runs = v.get("runs").and_then(|r| r.as_array()).cloned().unwrap_or_default();
    let row = runs.iter().find(|r| r.get("a_tilde").and_then(|a| a.as_f64()) == Some(a_tilde)).ok_or_else(|| {
        CliError::Config(format!("{}: cached Friedrichs run does not match a_tilde = {a_tilde}", path.display()))
    })?;
    match row.get("c_up").and_then(|c| c.as_f64()) {
        Some(c) if c > 0.0 && c.is_finite() => Ok(c),
        _ => {
            Err(CliError::Config(format!("{}: cached run for a_tilde = {a_tilde} has no upper bound", path.display())))
        }
    }
}

fn history_name(prefix: &str, a_tilde: f64) -> String {
    format!("{prefix}history-{a_tilde}.csv")
}

fn write(path: PathBuf, contents: String) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn emit_outputs(cfg: &RunConfig, out: &AdaptOutcome, prefix: &str, a_tilde: f64) -> Result<(), CliError> {
    write(cfg.out.join(history_name(prefix, a_tilde)), out.history.to_csv())?;
    if cfg.emit_vtk {
        for (i, (mesh, eta)) in out.snapshots.iter().enumerate() {
            let path = cfg.out.join(format!("{prefix}mesh-{a_tilde}-{i:03}.vtk"));
            export_vtk(mesh, &[("eta", eta)], &path).map_err(|e| io_err(&path, e))?;
        }
        let path = cfg.out.join(format!("{prefix}final-{a_tilde}.vtk"));
        export_vtk(&out.mesh, &[("eta", &out.indicators), ("div_q", &out.divergence)], &path)
            .map_err(|e| io_err(&path, e))?;
        let path = cfg.out.join(format!("{prefix}final-{a_tilde}.mesh"));
        write_mesh(&out.mesh, &path).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn summarize(kind: ProblemKind, a_tilde: f64, out: &AdaptOutcome, friedrichs_upper: Option<f64>) -> RunSummary {
    let status = out.history.status;
    let bounds = if status == AdaptStatus::CertificateFailure { None } else { out.bounds };
    RunSummary {
        kind,
        a_tilde,
        status: status.name().to_string(),
        converged: status == AdaptStatus::Converged,
        trusted: bounds.is_some_and(|b| b.trusted),
        iterations: out.history.records.len(),
        friedrichs_upper,
        error: (status == AdaptStatus::CertificateFailure).then(|| "certificate failed; refine and recompute".into()),
        bounds,
    }
}

fn failed(kind: ProblemKind, a_tilde: f64, msg: String) -> RunSummary {
    RunSummary {
        kind,
        a_tilde,
        status: "error".into(),
        converged: false,
        trusted: false,
        iterations: 0,
        friedrichs_upper: None,
        error: Some(msg),
        bounds: None,
    }
}

fn report(r: &RunSummary) {
    match &r.bounds {
        Some(b) => println!(
            "{} a_tilde={}: c_low={:.6} c_up={:.6} rel_err={:.4e} ndof={} d1={:.3e} d2={:.3e} {} {}",
            r.kind.name(),
            r.a_tilde,
            b.c_low,
            b.c_up,
            b.rel_err,
            b.n_dof,
            b.d1,
            b.d2,
            r.status,
            if b.trusted { "trusted" } else { "untrusted" }
        ),
        None => {
            println!("{} a_tilde={}: {} ({})", r.kind.name(), r.a_tilde, r.status, r.error.as_deref().unwrap_or(""))
        }
    }
}

/// Runs every `a_tilde` of the sweep. Configuration problems abort before any
/// solve; numerical failures are recorded per run.
pub fn run(cfg: &RunConfig) -> Result<Summary, CliError> {
    // validate every spec up front so a bad sweep entry fails fast
    for &a in &cfg.a_tilde {
        let upper = (cfg.kind == ProblemKind::Trace).then_some(cfg.friedrichs_upper.unwrap_or(1.0));
        spec_for(cfg, cfg.kind, a, upper)?;
        if let (ProblemKind::Trace, Some(path)) = (cfg.kind, &cfg.friedrichs_cache) {
            cached_friedrichs_upper(path, a)?;
        }
    }
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;

    let mut runs = Vec::new();
    for &a in &cfg.a_tilde {
        let mut upper = None;
        if cfg.kind == ProblemKind::Trace {
            upper = match (cfg.friedrichs_upper, &cfg.friedrichs_cache) {
                (Some(c), _) => Some(c),
                (None, Some(path)) => Some(cached_friedrichs_upper(path, a)?),
                (None, None) => {
                    let spec = spec_for(cfg, ProblemKind::Friedrichs, a, None)?;
                    match run_adaptive_outcome(&spec, cfg.emit_vtk) {
                        Ok(out) => {
                            emit_outputs(cfg, &out, "friedrichs-", a)?;
                            let s = summarize(ProblemKind::Friedrichs, a, &out, None);
                            report(&s);
                            s.bounds.map(|b| b.c_up)
                        }
                        Err(e) => {
                            runs.push(failed(cfg.kind, a, format!("Friedrichs stage failed: {e}")));
                            report(runs.last().unwrap());
                            continue;
                        }
                    }
                }
            };
            if upper.is_none() {
                runs.push(failed(cfg.kind, a, "Friedrichs stage produced no certified upper bound".into()));
                report(runs.last().unwrap());
                continue;
            }
        }
        let spec = spec_for(cfg, cfg.kind, a, upper)?;
        let summary = match run_adaptive_outcome(&spec, cfg.emit_vtk) {
            Ok(out) => {
                emit_outputs(cfg, &out, "", a)?;
                summarize(cfg.kind, a, &out, upper)
            }
            Err(e) => failed(cfg.kind, a, e.to_string()),
        };
        report(&summary);
        runs.push(summary);
    }

    let summary = Summary { kind: cfg.kind, runs };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Run(e.to_string()))?;
    write(cfg.out.join("summary.json"), json + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(text: &str, out: &Path) -> RunConfig {
        let mut c = parse_config(text).unwrap();
        c.out = out.to_path_buf();
        c
    }

    #[test]
    fn summary_matches_history() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("kind = friedrichs\na_tilde = 1\nerr_tol = 0.05\n", dir.path());
        let s = run(&c).unwrap();
        let b = s.runs[0].bounds.unwrap();
        let csv = fs::read_to_string(dir.path().join("history-1.csv")).unwrap();
        let last = csv.lines().last().unwrap();
        let fields: Vec<&str> = last.split(',').collect();
        assert_eq!(fields[1].parse::<usize>().unwrap(), b.n_dof);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["runs"][0]["c_up"].as_f64().unwrap(), b.c_up);
        assert_eq!(json["runs"][0]["c_low"].as_f64().unwrap(), b.c_low);
        assert_eq!(json["runs"][0]["status"], "converged");
    }

    #[test]
    fn mismatched_cache_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let f = cfg("kind = friedrichs\na_tilde = 10\nerr_tol = 0.2\n", &dir.path().join("f"));
        run(&f).unwrap();
        let cache = dir.path().join("f/summary.json");
        let text = format!("kind = trace\na_tilde = 1\nfriedrichs_cache = {}\n", cache.display());
        let t = cfg(&text, &dir.path().join("t"));
        assert!(matches!(run(&t), Err(CliError::Config(m)) if m.contains("does not match")));
        assert!(cached_friedrichs_upper(&cache, 10.0).is_ok());
    }
}
