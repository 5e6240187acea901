//! Residual norms, the complementarity lower bound `X2`, the two-sided bracket
//! on the constant and the closeness diagnostics.

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_target_matrix, ProblemKind, ProblemSpec};
use crate::eigensolve::EigenApprox;
use crate::error::{Error, Result};
use crate::flux::{element_residuals, friedrichs_upper, Eigenpair, ElementResidual, FluxField};

/// Default for `trusted`: `d1` must be this many times smaller than `d2`.
pub const DEFAULT_TRUST_FACTOR: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub norm_a: f64,
    pub norm_b: f64,
    /// `||gamma u||`, one for a normalized eigenvector.
    pub target_norm: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ResidualNorms {
    pub fn new(norm_a: f64, norm_b: f64, target_norm: f64) -> Self {
        ResidualNorms { norm_a, norm_b, target_norm, alpha: norm_a / target_norm, beta: norm_b / target_norm }
    }
}

/// Sums local residuals into `(A, B)`.
pub fn norms_from_residuals(
    spec: &ProblemSpec,
    residuals: &[ElementResidual],
    target_norm: f64,
) -> Result<ResidualNorms> {
    let flux: f64 = residuals.iter().map(|r| r.flux).sum();
    let div: f64 = residuals.iter().map(|r| r.div).sum();
    let boundary: f64 = residuals.iter().map(|r| r.boundary).sum();
    let (a, b) = match spec.kind {
        ProblemKind::Friedrichs | ProblemKind::Poincare => (flux.sqrt(), div.sqrt()),
        ProblemKind::Trace => (flux.sqrt() + friedrichs_upper(spec)? * div.sqrt(), boundary.sqrt()),
    };
    Ok(ResidualNorms::new(a, b, target_norm))
}

/// `||gamma u||`: the L2 norm over the domain, or over the Neumann boundary
/// for the trace problem.
pub fn target_norm(spec: &ProblemSpec, pair: &Eigenpair) -> Result<f64> {
    let m = assemble_target_matrix(&spec.mesh, spec.kind)?;
    if pair.u.len() != m.dim() {
        return Err(Error::Argument("eigenvector does not match the mesh".into()));
    }
    Ok(m.quad_form(&pair.u).max(0.0).sqrt())
}

pub fn compute_residual_norms(spec: &ProblemSpec, pair: &Eigenpair, q: &FluxField) -> Result<ResidualNorms> {
    if spec.kind == ProblemKind::Trace {
        friedrichs_upper(spec)?;
    }
    let residuals = element_residuals(spec, pair, q)?;
    norms_from_residuals(spec, &residuals, target_norm(spec, pair)?)
}

/// Positive root of `X^2 + alpha X + beta = lambda_star`, provided
/// `beta < lambda_star`.
pub fn lower_bound_x2(norms: &ResidualNorms, lambda_star: f64) -> Result<f64> {
    if !(lambda_star > 0.0) {
        return Err(Error::Argument(format!("lambda_star = {lambda_star} must be positive")));
    }
    let (alpha, beta) = (norms.alpha, norms.beta);
    if !(beta < lambda_star) {
        return Err(Error::Certificate { beta, lambda_star });
    }
    // rationalized to avoid cancellation when alpha dominates
    let gap = lambda_star - beta;
    Ok(2.0 * gap / (alpha + (alpha * alpha + 4.0 * gap).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub d1: f64,
    pub d2: f64,
    pub trusted: bool,
}

/// `d1 = (lambda_star - X2^2) / X2^2`, `d2 = (lambda2_low - lambda_star) / lambda2_up`
/// with `lambda2_low = (lambda_star + lambda2_up) / 2`; an infinite `lambda2_up`
/// gives the limit `d2 = 1/2`.
pub fn closeness_diagnostics(lambda_star: f64, lambda2_up: f64, x2: f64, trust_factor: f64) -> Diagnostics {
    let low = x2 * x2;
    let d1 = (lambda_star - low) / low;
    let d2 = if lambda2_up.is_infinite() { 0.5 } else { ((lambda_star + lambda2_up) / 2.0 - lambda_star) / lambda2_up };
    Diagnostics { d1, d2, trusted: d2 > 0.0 && d1 <= d2 / trust_factor }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub x2: f64,
    pub lambda_low: f64,
    pub lambda_up: f64,
    pub lambda2_up: f64,
    pub c_low: f64,
    pub c_up: f64,
    pub c_avg: f64,
    pub rel_err: f64,
    pub d1: f64,
    pub d2: f64,
    pub trusted: bool,
    pub n_dof: usize,
}

pub fn constant_bounds(spec: &ProblemSpec, eig: &EigenApprox, x2: f64) -> BoundsResult {
    let lambda = eig.lambda1h;
    let c_low = 1.0 / lambda.sqrt();
    let c_up = 1.0 / x2;
    let c_avg = 0.5 * (c_low + c_up);
    let diag = closeness_diagnostics(lambda, eig.lambda2h, x2, spec.params.trust_factor);
    BoundsResult {
        x2,
        lambda_low: x2 * x2,
        lambda_up: lambda,
        lambda2_up: eig.lambda2h,
        c_low,
        c_up,
        c_avg,
        rel_err: (c_up - c_low) / c_avg,
        d1: diag.d1,
        d2: diag.d2,
        trusted: diag.trusted,
        n_dof: eig.vector1.len(),
    }
}
