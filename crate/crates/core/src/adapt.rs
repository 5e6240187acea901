//! Error indicators, bulk marking and the adaptive driver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_energy_matrix, assemble_target_matrix, eliminate_dirichlet, ProblemKind, ProblemSpec};
use crate::bounds::{constant_bounds, lower_bound_x2, norms_from_residuals, target_norm, BoundsResult, ResidualNorms};
use crate::eigensolve::{smallest_eigenpairs, EigenApprox};
use crate::error::{Error, Result};
use crate::flux::{build_flux_space, element_residuals, solve_flux, Eigenpair, FluxField, FunctionalWeights};
use crate::mesh::Mesh;

/// Consecutive certificate failures tolerated before giving up.
pub const MAX_CERTIFICATE_FAILURES: usize = 3;

/// Two smallest Galerkin eigenpairs on `spec.mesh`; constants are deflated for
/// the Poincare problem.
pub fn solve_galerkin(spec: &ProblemSpec) -> Result<EigenApprox> {
    let k = assemble_energy_matrix(&spec.mesh, &spec.coefficients)?;
    let m = assemble_target_matrix(&spec.mesh, spec.kind)?;
    let (k, m, _) = eliminate_dirichlet(&k, &m, &spec.mesh);
    let ones = vec![1.0; k.dim()];
    let deflation = (spec.kind == ProblemKind::Poincare).then_some(ones.as_slice());
    smallest_eigenpairs(&k, &m, 2, deflation)
}

/// `eta_K` per triangle: square roots of the local pieces of the quadratic
/// functional, so that `sum eta_K^2` is its value.
pub fn compute_indicators(spec: &ProblemSpec, pair: &Eigenpair, q: &FluxField) -> Result<Vec<f64>> {
    let w = FunctionalWeights::new(spec, pair.lambda)?;
    Ok(element_residuals(spec, pair, q)?
        .iter()
        .map(|r| (w.flux * r.flux + w.div * r.div + w.boundary * r.boundary).sqrt())
        .collect())
}

/// Smallest set of largest indicators carrying a `theta^2` share of
/// `sum eta^2`. Ties are broken by ascending triangle id; all-zero indicators
/// give an empty set.
pub fn bulk_mark(eta: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = eta.iter().map(|e| e * e).sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    let goal = theta * theta * total;
    let mut partial = 0.0;
    let mut marked = Vec::new();
    for t in order {
        marked.push(t);
        partial += eta[t] * eta[t];
        if goal <= partial {
            break;
        }
    }
    marked
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptStatus {
    Converged,
    IterationCap,
    CertificateFailure,
}

impl AdaptStatus {
    pub fn name(self) -> &'static str {
        match self {
            AdaptStatus::Converged => "converged",
            AdaptStatus::IterationCap => "iteration-cap",
            AdaptStatus::CertificateFailure => "certificate-failure",
        }
    }
}

/// One adaptive iteration. A failed certificate is recorded with
/// `c_up = inf` and `trusted = false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub ndof: usize,
    pub c_low: f64,
    pub c_up: f64,
    pub rel_err: f64,
    pub d1: f64,
    pub d2: f64,
    pub trusted: bool,
    pub marked: usize,
    pub seconds: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iter,ndof,c_low,c_up,rel_err,d1,d2,trusted,marked,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{:.6}",
            self.iter,
            self.ndof,
            self.c_low,
            self.c_up,
            self.rel_err,
            self.d1,
            self.d2,
            self.trusted,
            self.marked,
            self.seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptHistory {
    pub records: Vec<IterationRecord>,
    pub status: AdaptStatus,
}

impl AdaptHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(IterationRecord::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Everything one adaptive run produces. `bounds` is `None` only after a
/// certificate failure.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub history: AdaptHistory,
    pub bounds: Option<BoundsResult>,
    pub mesh: Mesh,
    pub eig: EigenApprox,
    pub norms: Option<ResidualNorms>,
    /// Indicators on `mesh`.
    pub indicators: Vec<f64>,
    pub divergence: Vec<f64>,
    /// Meshes and indicators of every iteration, when requested.
    pub snapshots: Vec<(Mesh, Vec<f64>)>,
}

/// Result of one solve/certify pass on a fixed mesh.
#[derive(Clone, Debug)]
pub struct Certified {
    pub eig: EigenApprox,
    pub norms: ResidualNorms,
    pub bounds: Result<BoundsResult>,
    pub indicators: Vec<f64>,
    /// Divergence of the flux at each centroid.
    pub divergence: Vec<f64>,
}

/// Galerkin solve, flux solve, bounds and indicators on `spec.mesh`.
pub fn certify(spec: &ProblemSpec) -> Result<Certified> {
    let eig = solve_galerkin(spec)?;
    let pair = Eigenpair::from_approx(&spec.mesh, &eig)?;
    let space = build_flux_space(&spec.mesh, spec.kind);
    let q = solve_flux(&space, spec, &pair)?;
    let residuals = element_residuals(spec, &pair, &q)?;
    let norms = norms_from_residuals(spec, &residuals, target_norm(spec, &pair)?)?;
    let bounds = lower_bound_x2(&norms, eig.lambda1h).map(|x2| constant_bounds(spec, &eig, x2));
    let w = FunctionalWeights::new(spec, pair.lambda)?;
    let indicators =
        residuals.iter().map(|r| (w.flux * r.flux + w.div * r.div + w.boundary * r.boundary).sqrt()).collect();
    let divergence = (0..spec.mesh.num_triangles()).map(|t| q.eval(t, spec.mesh.centroid(t)).1).collect();
    Ok(Certified { eig, norms, bounds, indicators, divergence })
}

/// Runs the adaptive loop and reports how it ended, keeping the history even
/// when the certificate fails.
pub fn run_adaptive_outcome(spec: &ProblemSpec, keep_snapshots: bool) -> Result<AdaptOutcome> {
    spec.validate()?;
    let mut spec = spec.clone();
    let mut records = Vec::new();
    let mut failures = 0;
    let mut snapshots = Vec::new();
    let mut iter = 0;
    loop {
        let start = Instant::now();
        let c = certify(&spec)?;
        if keep_snapshots {
            snapshots.push((spec.mesh.clone(), c.indicators.clone()));
        }
        let lambda = c.eig.lambda1h;
        let ndof = c.eig.vector1.len();
        let mut record = IterationRecord {
            iter,
            ndof,
            c_low: 1.0 / lambda.sqrt(),
            c_up: f64::INFINITY,
            rel_err: f64::INFINITY,
            d1: f64::INFINITY,
            d2: f64::NAN,
            trusted: false,
            marked: 0,
            seconds: 0.0,
        };
        let mut status = None;
        let last_bounds;
        match &c.bounds {
            Ok(b) => {
                failures = 0;
                record.c_up = b.c_up;
                record.rel_err = b.rel_err;
                record.d1 = b.d1;
                record.d2 = b.d2;
                record.trusted = b.trusted;
                last_bounds = Some(*b);
                if b.rel_err <= spec.params.err_tol {
                    status = Some(AdaptStatus::Converged);
                }
            }
            Err(Error::Certificate { .. }) => {
                failures += 1;
                last_bounds = None;
                if failures >= MAX_CERTIFICATE_FAILURES {
                    status = Some(AdaptStatus::CertificateFailure);
                }
            }
            Err(e) => return Err(e.clone()),
        }
        let mut marked = Vec::new();
        if status.is_none() {
            marked = bulk_mark(&c.indicators, spec.params.theta);
            if marked.is_empty() {
                status =
                    Some(if last_bounds.is_some() { AdaptStatus::Converged } else { AdaptStatus::CertificateFailure });
            } else if iter + 1 >= spec.params.max_iterations {
                status = Some(AdaptStatus::IterationCap);
                marked.clear();
            }
        }
        record.marked = marked.len();
        record.seconds = start.elapsed().as_secs_f64();
        records.push(record);

        if let Some(status) = status {
            return Ok(AdaptOutcome {
                history: AdaptHistory { records, status },
                bounds: last_bounds,
                mesh: spec.mesh,
                eig: c.eig,
                norms: Some(c.norms),
                indicators: c.indicators,
                divergence: c.divergence,
                snapshots,
            });
        }
        spec.mesh = spec.mesh.refine(&marked)?;
        iter += 1;
    }
}

/// Adaptive loop; a certificate that keeps failing becomes an error.
pub fn run_adaptive(spec: &ProblemSpec) -> Result<(AdaptHistory, BoundsResult, Mesh)> {
    let out = run_adaptive_outcome(spec, false)?;
    match out.bounds {
        Some(b) if out.history.status != AdaptStatus::CertificateFailure => Ok((out.history, b, out.mesh)),
        _ => {
            let n = out.norms.unwrap_or(ResidualNorms::new(0.0, f64::INFINITY, 1.0));
            Err(Error::Certificate { beta: n.beta, lambda_star: out.eig.lambda1h })
        }
    }
}
