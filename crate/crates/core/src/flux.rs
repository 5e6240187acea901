//! First-order Raviart-Thomas flux reconstruction.
//!
//! Each triangle carries eight local functions built from monomials in
//! centroid-shifted, diameter-scaled coordinates and made dual to the degrees
//! of freedom: two normal-trace moments per edge (against the orthonormal
//! Legendre modes on `[0, 1]`, oriented from the lower to the higher vertex
//! index) and the two components of the mean over the triangle. Shared edge
//! moments make the assembled field H(div)-conforming.

use nalgebra::SMatrix;
use rayon::prelude::*;

use crate::assembly::{apply2, barycentric_gradients, Coefficients, ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryLabel, Mesh, MeshTopology, Point};
use crate::quadrature::{LineRule, TriangleRule};
use crate::sparse::{solve_spd, SparseSymMatrix, TripletBuilder};

pub const RT_ORDER: usize = 1;

/// Degrees of freedom per triangle.
pub const LOCAL_DIM: usize = 8;

fn legendre(k: usize, s: f64) -> f64 {
    match k {
        0 => 1.0,
        _ => 3f64.sqrt() * (2.0 * s - 1.0),
    }
}

/// Unit normal of an edge `[a, b]` with `a < b`: the tangent rotated clockwise.
pub fn edge_normal(mesh: &Mesh, e: [usize; 2]) -> Point {
    let pa = mesh.vertices[e[0]];
    let pb = mesh.vertices[e[1]];
    let len = mesh.edge_length(e);
    [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len]
}

/// Local RT1 basis on one triangle.
#[derive(Clone, Debug)]
pub struct Rt1Element {
    center: Point,
    scale: f64,
    /// Column `j` holds the monomial coefficients of basis function `j`.
    coeffs: [[f64; LOCAL_DIM]; LOCAL_DIM],
    /// Global slot (before constraint removal) of each local DOF.
    pub slots: [usize; LOCAL_DIM],
}

impl Rt1Element {
    fn monomials(&self, x: Point) -> ([[f64; 2]; LOCAL_DIM], [f64; LOCAL_DIM]) {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = (x[1] - self.center[1]) / self.scale;
        let h = 1.0 / self.scale;
        (
            [
                [1.0, 0.0],
                [xi, 0.0],
                [eta, 0.0],
                [0.0, 1.0],
                [0.0, xi],
                [0.0, eta],
                [xi * xi, xi * eta],
                [xi * eta, eta * eta],
            ],
            [0.0, h, 0.0, 0.0, 0.0, h, 3.0 * xi * h, 3.0 * eta * h],
        )
    }

    /// Values and divergences of the eight basis functions at `x`.
    pub fn eval(&self, x: Point) -> ([[f64; 2]; LOCAL_DIM], [f64; LOCAL_DIM]) {
        let (m, dm) = self.monomials(x);
        let mut v = [[0.0; 2]; LOCAL_DIM];
        let mut d = [0.0; LOCAL_DIM];
        for j in 0..LOCAL_DIM {
            for k in 0..LOCAL_DIM {
                let c = self.coeffs[k][j];
                v[j][0] += c * m[k][0];
                v[j][1] += c * m[k][1];
                d[j] += c * dm[k];
            }
        }
        (v, d)
    }

    /// Divergence of `sum_j c_j phi_j` as `d0 + d1 (x - xc) + d2 (y - yc)`.
    fn divergence_poly(&self, local: &[f64; LOCAL_DIM]) -> [f64; 3] {
        let h = 1.0 / self.scale;
        let mut m = [0.0; LOCAL_DIM];
        for (k, mk) in m.iter_mut().enumerate() {
            *mk = (0..LOCAL_DIM).map(|j| self.coeffs[k][j] * local[j]).sum();
        }
        [(m[1] + m[5]) * h, 3.0 * m[6] * h * h, 3.0 * m[7] * h * h]
    }
}

fn build_element(mesh: &Mesh, topo: &MeshTopology, t: usize) -> Rt1Element {
    let p = mesh.coords(t);
    let center = mesh.centroid(t);
    let scale = (0..3).map(|i| mesh.edge_length(mesh.triangles[t].edge(i))).fold(0.0, f64::max);
    let mut el = Rt1Element { center, scale, coeffs: [[0.0; LOCAL_DIM]; LOCAL_DIM], slots: [0; LOCAL_DIM] };

    let ne = topo.num_edges();
    let mut d = SMatrix::<f64, LOCAL_DIM, LOCAL_DIM>::zeros();
    let line = LineRule::gauss4();
    for i in 0..3 {
        let e = topo.triangle_edges[t][i];
        let [a, b] = topo.edges[e];
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let n = edge_normal(mesh, [a, b]);
        for (&s, &w) in line.points.iter().zip(&line.weights) {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let (m, _) = el.monomials(x);
            for k in 0..2 {
                let lk = w * legendre(k, s);
                for j in 0..LOCAL_DIM {
                    d[(2 * i + k, j)] += lk * (m[j][0] * n[0] + m[j][1] * n[1]);
                }
            }
        }
        el.slots[2 * i] = 2 * e;
        el.slots[2 * i + 1] = 2 * e + 1;
    }
    let rule = TriangleRule::degree4();
    for (x, &w) in rule.map(&p).iter().zip(&rule.weights) {
        let (m, _) = el.monomials(*x);
        for j in 0..LOCAL_DIM {
            d[(6, j)] += w * m[j][0];
            d[(7, j)] += w * m[j][1];
        }
    }
    el.slots[6] = 2 * ne + 2 * t;
    el.slots[7] = 2 * ne + 2 * t + 1;

    let inv = d.lu().try_inverse().expect("RT1 moment matrix is singular on a nondegenerate triangle");
    for k in 0..LOCAL_DIM {
        for j in 0..LOCAL_DIM {
            el.coeffs[k][j] = inv[(k, j)];
        }
    }
    el
}

/// Global RT1 space on a mesh, with `q.n = 0` imposed on the constrained edges.
#[derive(Clone, Debug)]
pub struct FluxSpace {
    pub kind: ProblemKind,
    pub mesh: Mesh,
    pub topology: MeshTopology,
    pub constrained: Vec<bool>,
    /// Slot (`2 e + k` for edges, `2 E + 2 t + c` for triangles) to DOF index.
    pub slot_dof: Vec<Option<usize>>,
    pub dim: usize,
    pub elements: Vec<Rt1Element>,
}

/// Constrained edges: Neumann edges (Friedrichs), all boundary edges
/// (Poincare), none (Trace).
pub fn build_flux_space(mesh: &Mesh, kind: ProblemKind) -> FluxSpace {
    let topology = MeshTopology::new(mesh);
    let constrained: Vec<bool> = (0..topology.num_edges())
        .map(|e| {
            let boundary = topology.edge_triangles[e].len() == 1;
            match kind {
                ProblemKind::Friedrichs => matches!(topology.edge_label[e], Some((BoundaryLabel::Neumann, _))),
                ProblemKind::Poincare => boundary,
                ProblemKind::Trace => false,
            }
        })
        .collect();
    let ne = topology.num_edges();
    let nslots = 2 * ne + 2 * mesh.num_triangles();
    let mut slot_dof = vec![None; nslots];
    let mut dim = 0;
    for (s, slot) in slot_dof.iter_mut().enumerate() {
        if s < 2 * ne && constrained[s / 2] {
            continue;
        }
        *slot = Some(dim);
        dim += 1;
    }
    let elements = (0..mesh.num_triangles()).into_par_iter().map(|t| build_element(mesh, &topology, t)).collect();
    FluxSpace { kind, mesh: mesh.clone(), topology, constrained, slot_dof, dim, elements }
}

impl FluxSpace {
    pub fn local_dofs(&self, t: usize) -> [Option<usize>; LOCAL_DIM] {
        self.elements[t].slots.map(|s| self.slot_dof[s])
    }

    pub fn num_constrained(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    /// Outward unit normal of local edge `i` of triangle `t`, and whether it
    /// agrees with the global edge orientation.
    pub fn outward_normal(&self, t: usize, i: usize) -> (Point, bool) {
        let e = self.topology.edges[self.topology.triangle_edges[t][i]];
        let n = edge_normal(&self.mesh, e);
        let c = self.mesh.centroid(t);
        let pa = self.mesh.vertices[e[0]];
        let agrees = n[0] * (pa[0] - c[0]) + n[1] * (pa[1] - c[1]) > 0.0;
        if agrees {
            (n, true)
        } else {
            ([-n[0], -n[1]], false)
        }
    }

    /// Interpolant of a vector field through the RT1 moments. Moments on
    /// constrained edges are dropped.
    pub fn interpolate<F: Fn(Point) -> [f64; 2] + Sync>(&self, f: F) -> FluxField<'_> {
        let mut coefficients = vec![0.0; self.dim];
        let line = LineRule::gauss4();
        for (e, &[a, b]) in self.topology.edges.iter().enumerate() {
            let (pa, pb) = (self.mesh.vertices[a], self.mesh.vertices[b]);
            let n = edge_normal(&self.mesh, [a, b]);
            for k in 0..2 {
                if let Some(dof) = self.slot_dof[2 * e + k] {
                    coefficients[dof] = line
                        .points
                        .iter()
                        .zip(&line.weights)
                        .map(|(&s, &w)| {
                            let v = f([pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]);
                            w * legendre(k, s) * (v[0] * n[0] + v[1] * n[1])
                        })
                        .sum();
                }
            }
        }
        let rule = TriangleRule::degree6();
        let ne = self.topology.num_edges();
        for t in 0..self.mesh.num_triangles() {
            let pts = rule.map(&self.mesh.coords(t));
            let mut mean = [0.0; 2];
            for (x, &w) in pts.iter().zip(&rule.weights) {
                let v = f(*x);
                mean[0] += w * v[0];
                mean[1] += w * v[1];
            }
            for c in 0..2 {
                if let Some(dof) = self.slot_dof[2 * ne + 2 * t + c] {
                    coefficients[dof] = mean[c];
                }
            }
        }
        FluxField { space: self, coefficients }
    }
}

/// Coefficients of a flux in a [`FluxSpace`].
#[derive(Clone, Debug)]
pub struct FluxField<'a> {
    pub space: &'a FluxSpace,
    pub coefficients: Vec<f64>,
}

impl<'a> FluxField<'a> {
    pub fn zero(space: &'a FluxSpace) -> Self {
        FluxField { space, coefficients: vec![0.0; space.dim] }
    }

    pub fn new(space: &'a FluxSpace, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != space.dim {
            return Err(Error::Argument(format!(
                "flux has {} coefficients, space has dimension {}",
                coefficients.len(),
                space.dim
            )));
        }
        Ok(FluxField { space, coefficients })
    }

    pub fn local(&self, t: usize) -> [f64; LOCAL_DIM] {
        self.space.local_dofs(t).map(|d| d.map_or(0.0, |d| self.coefficients[d]))
    }

    /// Value and divergence at a point of triangle `t`.
    pub fn eval(&self, t: usize, x: Point) -> ([f64; 2], f64) {
        let c = self.local(t);
        let (v, d) = self.space.elements[t].eval(x);
        let mut q = [0.0; 2];
        let mut div = 0.0;
        for j in 0..LOCAL_DIM {
            q[0] += c[j] * v[j][0];
            q[1] += c[j] * v[j][1];
            div += c[j] * d[j];
        }
        (q, div)
    }

    /// `q . n_e` at parameter `s` along local edge `i` of `t`, with `n_e` the
    /// global edge normal and `s` running from the lower vertex index.
    pub fn normal_trace(&self, t: usize, i: usize, s: f64) -> f64 {
        let e = self.space.topology.edges[self.space.topology.triangle_edges[t][i]];
        let (pa, pb) = (self.space.mesh.vertices[e[0]], self.space.mesh.vertices[e[1]]);
        let n = edge_normal(&self.space.mesh, e);
        let (q, _) = self.eval(t, [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]);
        q[0] * n[0] + q[1] * n[1]
    }
}

/// Linear polynomial `c0 + c1 (x - xc) + c2 (y - yc)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPoly {
    pub center: Point,
    pub c: [f64; 3],
}

impl LinearPoly {
    pub fn eval(&self, x: Point) -> f64 {
        self.c[0] + self.c[1] * (x[0] - self.center[0]) + self.c[2] * (x[1] - self.center[1])
    }
}

/// Outward normal trace on a Neumann edge, `c0 + c1 s + c2 s^2` for `s` from
/// `vertices[0]` to `vertices[1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTrace {
    pub vertices: [usize; 2],
    pub triangle: usize,
    pub c: [f64; 3],
}

impl EdgeTrace {
    pub fn eval(&self, s: f64) -> f64 {
        self.c[0] + s * (self.c[1] + s * self.c[2])
    }
}

#[derive(Clone, Debug)]
pub struct FluxTraces {
    pub divergence: Vec<LinearPoly>,
    pub neumann: Vec<EdgeTrace>,
}

/// Elementwise divergence and outward normal traces on Neumann edges.
pub fn flux_fields(q: &FluxField) -> FluxTraces {
    let space = q.space;
    let divergence = (0..space.mesh.num_triangles())
        .map(|t| LinearPoly { center: space.elements[t].center, c: space.elements[t].divergence_poly(&q.local(t)) })
        .collect();
    let mut neumann = Vec::new();
    for (t, te) in space.topology.triangle_edges.iter().enumerate() {
        for (i, &e) in te.iter().enumerate() {
            if !matches!(space.topology.edge_label[e], Some((BoundaryLabel::Neumann, _))) {
                continue;
            }
            let sign = if space.outward_normal(t, i).1 { 1.0 } else { -1.0 };
            // quadratic through s = 0, 1/2, 1
            let f0 = sign * q.normal_trace(t, i, 0.0);
            let fh = sign * q.normal_trace(t, i, 0.5);
            let f1 = sign * q.normal_trace(t, i, 1.0);
            let c2 = 2.0 * (f0 - 2.0 * fh + f1);
            let c1 = f1 - f0 - c2;
            neumann.push(EdgeTrace { vertices: space.topology.edges[e], triangle: t, c: [f0, c1, c2] });
        }
    }
    FluxTraces { divergence, neumann }
}

/// Galerkin eigenpair lifted to all mesh vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    pub u: Vec<f64>,
}

impl Eigenpair {
    /// Lifts `eig.vector1` (on the non-Dirichlet vertices of `mesh`).
    pub fn from_approx(mesh: &Mesh, eig: &crate::eigensolve::EigenApprox) -> Result<Self> {
        let map = crate::assembly::DofMap::new(mesh);
        if eig.vector1.len() != map.num_dofs() {
            return Err(Error::Argument(format!(
                "eigenvector has {} entries, mesh has {} unknowns",
                eig.vector1.len(),
                map.num_dofs()
            )));
        }
        Ok(Eigenpair { lambda: eig.lambda1h, u: map.lift(&eig.vector1) })
    }
}

/// Weights of the three residual terms of the quadratic functional
/// `flux ||grad u - A^{-1} q||_A^2 + div ||r_div||^2 + boundary ||r_N||^2_{Gamma_N}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionalWeights {
    pub flux: f64,
    pub div: f64,
    pub boundary: f64,
}

impl FunctionalWeights {
    pub fn new(spec: &ProblemSpec, lambda: f64) -> Result<Self> {
        let rho = spec.params.rho;
        match spec.kind {
            ProblemKind::Friedrichs | ProblemKind::Poincare => {
                Ok(FunctionalWeights { flux: 1.0 + 1.0 / rho, div: (1.0 + rho) / lambda, boundary: 0.0 })
            }
            ProblemKind::Trace => {
                let cf = friedrichs_upper(spec)?;
                let sigma = spec.params.sigma;
                let s = 1.0 + 1.0 / sigma;
                Ok(FunctionalWeights {
                    flux: (1.0 + 1.0 / rho) * s,
                    div: (1.0 + rho) * s * cf * cf,
                    boundary: (1.0 + sigma) / lambda,
                })
            }
        }
    }

    /// Coefficients of the normalized system: the divergence term has weight
    /// one for Friedrichs/Poincare, the boundary term for Trace.
    fn system(&self, spec: &ProblemSpec, lambda: f64) -> FunctionalWeights {
        match spec.kind {
            ProblemKind::Friedrichs | ProblemKind::Poincare => {
                FunctionalWeights { flux: lambda / spec.params.rho, div: 1.0, boundary: 0.0 }
            }
            ProblemKind::Trace => {
                FunctionalWeights { flux: self.flux / self.boundary, div: self.div / self.boundary, boundary: 1.0 }
            }
        }
    }
}

pub(crate) fn friedrichs_upper(spec: &ProblemSpec) -> Result<f64> {
    match spec.friedrichs_upper {
        Some(c) if c > 0.0 && c.is_finite() => Ok(c),
        _ => Err(Error::Config("trace problem requires a positive friedrichs_upper".into())),
    }
}

fn check_mesh(space: &FluxSpace, spec: &ProblemSpec, pair: &Eigenpair) -> Result<()> {
    if space.mesh.num_triangles() != spec.mesh.num_triangles()
        || space.mesh.num_vertices() != spec.mesh.num_vertices()
        || pair.u.len() != space.mesh.num_vertices()
    {
        return Err(Error::Argument("flux space, problem mesh and eigenvector do not share a mesh".into()));
    }
    if space.kind != spec.kind {
        return Err(Error::Argument("flux space was built for a different problem kind".into()));
    }
    Ok(())
}

/// `r_div = s(x) + div q` with `s = (lambda - c) u` (Friedrichs/Poincare) or
/// `s = -c u` (Trace).
fn div_source(kind: ProblemKind, lambda: f64, c: f64, u: f64) -> f64 {
    match kind {
        ProblemKind::Friedrichs | ProblemKind::Poincare => (lambda - c) * u,
        ProblemKind::Trace => -c * u,
    }
}

struct Local {
    dofs: [Option<usize>; LOCAL_DIM],
    mat: [[f64; LOCAL_DIM]; LOCAL_DIM],
    rhs: [f64; LOCAL_DIM],
}

fn neumann_edges(space: &FluxSpace, t: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    space.topology.triangle_edges[t].iter().enumerate().filter_map(|(i, &e)| match space.topology.edge_label[e] {
        Some((BoundaryLabel::Neumann, seg)) => Some((i, seg)),
        _ => None,
    })
}

fn local_system(
    space: &FluxSpace,
    spec: &ProblemSpec,
    coeff: &Coefficients,
    pair: &Eigenpair,
    w: &FunctionalWeights,
    t: usize,
) -> Local {
    let mesh = &space.mesh;
    let tri = &mesh.triangles[t];
    let p = mesh.coords(t);
    let area = mesh.area(t);
    let el = &space.elements[t];
    let ainv = coeff.diffusion_inverse(tri.region);
    let c = coeff.reaction(tri.region);
    let uv = tri.vertices.map(|v| pair.u[v]);
    let g = barycentric_gradients(&p);
    let grad_u =
        [uv[0] * g[0][0] + uv[1] * g[1][0] + uv[2] * g[2][0], uv[0] * g[0][1] + uv[1] * g[1][1] + uv[2] * g[2][1]];

    let mut mat = [[0.0; LOCAL_DIM]; LOCAL_DIM];
    let mut rhs = [0.0; LOCAL_DIM];
    let rule = TriangleRule::degree4();
    for (l, &wq) in rule.points.iter().zip(&rule.weights) {
        let x = [l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0], l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1]];
        let u = l[0] * uv[0] + l[1] * uv[1] + l[2] * uv[2];
        let s = div_source(spec.kind, pair.lambda, c, u);
        let (phi, dphi) = el.eval(x);
        let aphi = phi.map(|v| apply2(&ainv, v));
        let dx = wq * area;
        for i in 0..LOCAL_DIM {
            for j in 0..=i {
                mat[i][j] +=
                    dx * (w.flux * (aphi[i][0] * phi[j][0] + aphi[i][1] * phi[j][1]) + w.div * dphi[i] * dphi[j]);
            }
            rhs[i] += dx * (w.flux * (grad_u[0] * phi[i][0] + grad_u[1] * phi[i][1]) - w.div * s * dphi[i]);
        }
    }

    if w.boundary != 0.0 {
        let line = LineRule::gauss3();
        for (i, seg) in neumann_edges(space, t) {
            let alpha = coeff.robin(seg);
            let e = space.topology.edges[space.topology.triangle_edges[t][i]];
            let (pa, pb) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
            let (n, _) = space.outward_normal(t, i);
            let len = mesh.edge_length(e);
            for (&s, &wq) in line.points.iter().zip(&line.weights) {
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let u = (1.0 - s) * pair.u[e[0]] + s * pair.u[e[1]];
                let gval = (alpha - pair.lambda) * u;
                let (phi, _) = el.eval(x);
                let pn = phi.map(|v| v[0] * n[0] + v[1] * n[1]);
                let ds = wq * len;
                for a in 0..LOCAL_DIM {
                    for b in 0..=a {
                        mat[a][b] += ds * w.boundary * pn[a] * pn[b];
                    }
                    rhs[a] -= ds * w.boundary * gval * pn[a];
                }
            }
        }
    }
    for i in 0..LOCAL_DIM {
        for j in i + 1..LOCAL_DIM {
            mat[i][j] = mat[j][i];
        }
    }
    Local { dofs: space.local_dofs(t), mat, rhs }
}

/// SPD system whose solution minimizes the quadratic residual functional over
/// the flux space.
pub fn assemble_flux_system(
    space: &FluxSpace,
    spec: &ProblemSpec,
    pair: &Eigenpair,
) -> Result<(SparseSymMatrix, Vec<f64>)> {
    check_mesh(space, spec, pair)?;
    let weights = FunctionalWeights::new(spec, pair.lambda)?.system(spec, pair.lambda);
    let coeff = &spec.coefficients;
    coeff.validate(&space.mesh)?;
    let locals: Vec<Local> = (0..space.mesh.num_triangles())
        .into_par_iter()
        .map(|t| local_system(space, spec, coeff, pair, &weights, t))
        .collect();
    let mut b = TripletBuilder::with_capacity(space.dim, LOCAL_DIM * LOCAL_DIM * locals.len());
    let mut rhs = vec![0.0; space.dim];
    for l in &locals {
        b.add_local(&l.dofs, &l.mat);
        for (d, r) in l.dofs.iter().zip(&l.rhs) {
            if let Some(d) = d {
                rhs[*d] += r;
            }
        }
    }
    Ok((b.build(), rhs))
}

/// Assembles and solves the flux problem.
pub fn solve_flux<'a>(space: &'a FluxSpace, spec: &ProblemSpec, pair: &Eigenpair) -> Result<FluxField<'a>> {
    let (a, rhs) = assemble_flux_system(space, spec, pair)?;
    let x = solve_spd(&a, &rhs)?;
    FluxField::new(space, x)
}

/// Squared local residuals on one triangle: `||grad u - A^{-1} q||_{A,K}^2`,
/// `||r_div||_K^2` and the Neumann-edge term `||(alpha - lambda) u + q.n||^2`
/// on the edges of `K` (Trace only).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElementResidual {
    pub flux: f64,
    pub div: f64,
    pub boundary: f64,
}

/// Local residuals for every triangle, integrated with the given rules.
pub fn element_residuals_with(
    spec: &ProblemSpec,
    pair: &Eigenpair,
    q: &FluxField,
    rule: &TriangleRule,
    line: &LineRule,
) -> Result<Vec<ElementResidual>> {
    let space = q.space;
    check_mesh(space, spec, pair)?;
    let coeff = &spec.coefficients;
    coeff.validate(&space.mesh)?;
    let mesh = &space.mesh;
    let out = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let tri = &mesh.triangles[t];
            let p = mesh.coords(t);
            let area = mesh.area(t);
            let a = coeff.diffusion(tri.region);
            let ainv = coeff.diffusion_inverse(tri.region);
            let c = coeff.reaction(tri.region);
            let uv = tri.vertices.map(|v| pair.u[v]);
            let g = barycentric_gradients(&p);
            let grad_u = [
                uv[0] * g[0][0] + uv[1] * g[1][0] + uv[2] * g[2][0],
                uv[0] * g[0][1] + uv[1] * g[1][1] + uv[2] * g[2][1],
            ];
            let mut r = ElementResidual::default();
            for (l, &wq) in rule.points.iter().zip(&rule.weights) {
                let x = [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ];
                let u = l[0] * uv[0] + l[1] * uv[1] + l[2] * uv[2];
                let (qv, div) = q.eval(t, x);
                let aiq = apply2(&ainv, qv);
                let d = [grad_u[0] - aiq[0], grad_u[1] - aiq[1]];
                let ad = apply2(&a, d);
                r.flux += wq * area * (ad[0] * d[0] + ad[1] * d[1]);
                let rd = div_source(spec.kind, pair.lambda, c, u) + div;
                r.div += wq * area * rd * rd;
            }
            if spec.kind == ProblemKind::Trace {
                for (i, seg) in neumann_edges(space, t) {
                    let alpha = coeff.robin(seg);
                    let e = space.topology.edges[space.topology.triangle_edges[t][i]];
                    let sign = if space.outward_normal(t, i).1 { 1.0 } else { -1.0 };
                    let len = mesh.edge_length(e);
                    for (&s, &wq) in line.points.iter().zip(&line.weights) {
                        let u = (1.0 - s) * pair.u[e[0]] + s * pair.u[e[1]];
                        let rb = (alpha - pair.lambda) * u + sign * q.normal_trace(t, i, s);
                        r.boundary += wq * len * rb * rb;
                    }
                }
            }
            r
        })
        .collect();
    Ok(out)
}

/// Local residuals with the standard rules (degree 4 on triangles, 3-point
/// Gauss on edges).
pub fn element_residuals(spec: &ProblemSpec, pair: &Eigenpair, q: &FluxField) -> Result<Vec<ElementResidual>> {
    element_residuals_with(spec, pair, q, &TriangleRule::degree4(), &LineRule::gauss3())
}

/// Value of the quadratic functional at `q`.
pub fn functional_value(spec: &ProblemSpec, pair: &Eigenpair, q: &FluxField) -> Result<f64> {
    let w = FunctionalWeights::new(spec, pair.lambda)?;
    Ok(element_residuals(spec, pair, q)?
        .iter()
        .map(|r| w.flux * r.flux + w.div * r.div + w.boundary * r.boundary)
        .sum())
}
