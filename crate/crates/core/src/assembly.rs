//! P1 assembly of the energy form `a(u, v) = (A grad u, grad v) + (c u, v) + (alpha u, v)_N`,
//! of the target (domain or Neumann-boundary mass) form, and Dirichlet elimination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryLabel, Mesh, Point};
use crate::sparse::{SparseSymMatrix, TripletBuilder};

pub type Mat2 = [[f64; 2]; 2];

/// Which inequality constant is being bracketed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Friedrichs,
    Poincare,
    Trace,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Friedrichs => "friedrichs",
            ProblemKind::Poincare => "poincare",
            ProblemKind::Trace => "trace",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "friedrichs" => Ok(ProblemKind::Friedrichs),
            "poincare" | "poincaré" => Ok(ProblemKind::Poincare),
            "trace" => Ok(ProblemKind::Trace),
            other => Err(Error::Config(format!("unknown problem kind '{other}'"))),
        }
    }
}

/// Piecewise-constant coefficients: diffusion and reaction per region id,
/// Robin coefficient per boundary segment (missing entries mean zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub diffusion: Vec<Mat2>,
    pub reaction: Vec<f64>,
    pub robin: Vec<f64>,
}

impl Coefficients {
    /// `A = I` on region 0 and `A = a_tilde I` on region 1; `c = 0`, `alpha = 0`.
    pub fn checkerboard(a_tilde: f64) -> Self {
        Coefficients {
            diffusion: vec![[[1.0, 0.0], [0.0, 1.0]], [[a_tilde, 0.0], [0.0, a_tilde]]],
            reaction: vec![0.0, 0.0],
            robin: Vec::new(),
        }
    }

    pub fn scaled(&self, t: f64) -> Self {
        Coefficients {
            diffusion: self
                .diffusion
                .iter()
                .map(|d| [[t * d[0][0], t * d[0][1]], [t * d[1][0], t * d[1][1]]])
                .collect(),
            reaction: self.reaction.iter().map(|c| t * c).collect(),
            robin: self.robin.iter().map(|a| t * a).collect(),
        }
    }

    pub fn diffusion(&self, region: usize) -> Mat2 {
        self.diffusion[region]
    }

    pub fn diffusion_inverse(&self, region: usize) -> Mat2 {
        inverse2(self.diffusion[region])
    }

    pub fn reaction(&self, region: usize) -> f64 {
        self.reaction.get(region).copied().unwrap_or(0.0)
    }

    pub fn robin(&self, segment: usize) -> f64 {
        self.robin.get(segment).copied().unwrap_or(0.0)
    }

    /// Checks symmetry and positive definiteness of every diffusion matrix used
    /// by the mesh, and nonnegativity of `c` and `alpha`.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let regions = mesh.num_regions();
        if self.diffusion.len() < regions {
            return Err(Error::Coefficient(format!(
                "mesh uses {regions} regions but only {} diffusion matrices are given",
                self.diffusion.len()
            )));
        }
        for (r, d) in self.diffusion.iter().enumerate() {
            if d[0][1] != d[1][0] {
                return Err(Error::Coefficient(format!("diffusion matrix of region {r} is not symmetric")));
            }
            let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
            if !(d[0][0] > 0.0 && det > 0.0) || !det.is_finite() {
                return Err(Error::Coefficient(format!("diffusion matrix of region {r} is not positive definite")));
            }
        }
        if let Some(c) = self.reaction.iter().find(|c| !(**c >= 0.0)) {
            return Err(Error::Coefficient(format!("negative reaction coefficient {c}")));
        }
        if let Some(a) = self.robin.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::Coefficient(format!("negative Robin coefficient {a}")));
        }
        Ok(())
    }
}

pub fn inverse2(d: Mat2) -> Mat2 {
    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    [[d[1][1] / det, -d[0][1] / det], [-d[1][0] / det, d[0][0] / det]]
}

#[inline]
pub fn apply2(d: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [d[0][0] * v[0] + d[0][1] * v[1], d[1][0] * v[0] + d[1][1] * v[1]]
}

/// Adaptive-loop parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Bulk marking fraction.
    pub theta: f64,
    pub err_tol: f64,
    pub rho: f64,
    pub sigma: f64,
    /// `trusted` requires `d1 <= d2 / trust_factor`.
    pub trust_factor: f64,
    pub max_iterations: usize,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters { theta: 0.75, err_tol: 0.01, rho: 1.0, sigma: 2.0, trust_factor: 5.0, max_iterations: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub mesh: Mesh,
    pub coefficients: Coefficients,
    pub params: Parameters,
    /// Certified upper bound on the Friedrichs constant; required for `Trace`.
    pub friedrichs_upper: Option<f64>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, mesh: Mesh, coefficients: Coefficients) -> Self {
        ProblemSpec { kind, mesh, coefficients, params: Parameters::default(), friedrichs_upper: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate(&self.mesh)?;
        let p = &self.params;
        if !(p.theta > 0.0 && p.theta < 1.0) {
            return Err(Error::Config(format!("theta = {} must lie in (0, 1)", p.theta)));
        }
        if !(p.err_tol > 0.0) {
            return Err(Error::Config("err_tol must be positive".into()));
        }
        if !(p.rho > 0.0 && p.sigma > 0.0) {
            return Err(Error::Config("rho and sigma must be positive".into()));
        }
        if !(p.trust_factor > 0.0) {
            return Err(Error::Config("trust factor must be positive".into()));
        }

        let mesh = &self.mesh;
        let has_dirichlet = mesh.dirichlet_length() > 0.0;
        let has_reaction = mesh.triangles.iter().any(|t| self.coefficients.reaction(t.region) > 0.0);
        let has_robin = mesh
            .boundary_edges
            .iter()
            .any(|e| e.label == BoundaryLabel::Neumann && self.coefficients.robin(e.segment) > 0.0);

        match self.kind {
            ProblemKind::Friedrichs | ProblemKind::Trace => {
                if !(has_dirichlet || has_reaction || has_robin) {
                    return Err(Error::Config(
                        "energy form is not a scalar product: need a Dirichlet part, c > 0 somewhere, or alpha > 0 somewhere"
                            .into(),
                    ));
                }
                if self.kind == ProblemKind::Friedrichs && has_robin {
                    return Err(Error::Config("Friedrichs problems are restricted to alpha = 0".into()));
                }
            }
            ProblemKind::Poincare => {
                if has_dirichlet || has_reaction || has_robin {
                    return Err(Error::Config(
                        "Poincare problems require no Dirichlet boundary, c = 0 and alpha = 0".into(),
                    ));
                }
            }
        }
        if self.kind == ProblemKind::Trace {
            if !(mesh.neumann_length() > 0.0) {
                return Err(Error::Config("trace problem requires a Neumann boundary of positive length".into()));
            }
            match self.friedrichs_upper {
                Some(c) if c > 0.0 && c.is_finite() => {}
                _ => return Err(Error::Config("trace problem requires a positive friedrichs_upper".into())),
            }
        }
        Ok(())
    }
}

/// Gradients of the barycentric coordinates of a triangle.
pub fn barycentric_gradients(p: &[Point; 3]) -> [[f64; 2]; 3] {
    let two_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        *gi = [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area];
    }
    g
}

/// Local P1 matrix of `(A grad u, grad v) + c (u, v)` on one triangle.
pub fn local_energy(p: &[Point; 3], diffusion: &Mat2, reaction: f64) -> [[f64; 3]; 3] {
    let g = barycentric_gradients(p);
    let area = crate::mesh::signed_area(*p).abs();
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let dg = apply2(diffusion, g[i]);
        for j in 0..3 {
            k[i][j] = area * (dg[0] * g[j][0] + dg[1] * g[j][1]);
            if reaction != 0.0 {
                k[i][j] += reaction * area / 12.0 * if i == j { 2.0 } else { 1.0 };
            }
        }
    }
    k
}

pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

fn edge_mass(length: f64) -> [[f64; 2]; 2] {
    [[length / 3.0, length / 6.0], [length / 6.0, length / 3.0]]
}

/// Full (unconstrained) P1 matrix of the energy form.
pub fn assemble_energy_matrix(mesh: &Mesh, coeff: &Coefficients) -> Result<SparseSymMatrix> {
    coeff.validate(mesh)?;
    let n = mesh.num_vertices();
    let mut b = TripletBuilder::with_capacity(n, 9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let k = local_energy(&mesh.coords(t), &coeff.diffusion(tri.region), coeff.reaction(tri.region));
        b.add_local(&tri.vertices.map(Some), &k);
    }
    for e in &mesh.boundary_edges {
        let alpha = coeff.robin(e.segment);
        if e.label == BoundaryLabel::Neumann && alpha > 0.0 {
            let m = edge_mass(mesh.edge_length(e.vertices));
            let local = [[alpha * m[0][0], alpha * m[0][1]], [alpha * m[1][0], alpha * m[1][1]]];
            b.add_local(&e.vertices.map(Some), &local);
        }
    }
    Ok(b.build())
}

/// Domain mass matrix (Friedrichs, Poincare) or Neumann-boundary mass matrix (Trace).
pub fn assemble_target_matrix(mesh: &Mesh, kind: ProblemKind) -> Result<SparseSymMatrix> {
    let n = mesh.num_vertices();
    let mut b = TripletBuilder::with_capacity(n, 9 * mesh.num_triangles());
    match kind {
        ProblemKind::Friedrichs | ProblemKind::Poincare => {
            for (t, tri) in mesh.triangles.iter().enumerate() {
                b.add_local(&tri.vertices.map(Some), &local_mass(mesh.area(t)));
            }
        }
        ProblemKind::Trace => {
            let mut any = false;
            for e in mesh.boundary_edges.iter().filter(|e| e.label == BoundaryLabel::Neumann) {
                b.add_local(&e.vertices.map(Some), &edge_mass(mesh.edge_length(e.vertices)));
                any = true;
            }
            if !any {
                return Err(Error::Config("trace target needs at least one Neumann edge".into()));
            }
        }
    }
    Ok(b.build())
}

/// Map between all mesh vertices and the retained (non-Dirichlet) unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub retained: Vec<usize>,
    pub full_to_reduced: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> DofMap {
        let dirichlet = mesh.dirichlet_vertices();
        let mut retained = Vec::new();
        let mut full_to_reduced = vec![None; mesh.num_vertices()];
        for (v, &d) in dirichlet.iter().enumerate() {
            if !d {
                full_to_reduced[v] = Some(retained.len());
                retained.push(v);
            }
        }
        DofMap { retained, full_to_reduced }
    }

    pub fn num_dofs(&self) -> usize {
        self.retained.len()
    }

    /// Extends a reduced vector by zeros on the eliminated vertices.
    pub fn lift(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_to_reduced.len()];
        for (r, &v) in self.retained.iter().enumerate() {
            full[v] = reduced[r];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.retained.iter().map(|&v| full[v]).collect()
    }
}

/// Removes the rows and columns of vertices on the closed Dirichlet boundary.
pub fn eliminate_dirichlet(
    k: &SparseSymMatrix,
    m: &SparseSymMatrix,
    mesh: &Mesh,
) -> (SparseSymMatrix, SparseSymMatrix, DofMap) {
    let map = DofMap::new(mesh);
    (k.restrict(&map.retained), m.restrict(&map.retained), map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{SideLabels, Triangle};

    fn unit_triangle() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![Triangle { vertices: [0, 1, 2], region: 0, refinement_edge: 0, generation: 0 }],
            boundary_edges: vec![
                crate::mesh::BoundaryEdge { vertices: [0, 1], label: BoundaryLabel::Neumann, segment: 0 },
                crate::mesh::BoundaryEdge { vertices: [1, 2], label: BoundaryLabel::Dirichlet, segment: 1 },
                crate::mesh::BoundaryEdge { vertices: [2, 0], label: BoundaryLabel::Dirichlet, segment: 2 },
            ],
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-14 * (1.0 + b.abs())
    }

    #[test]
    fn unit_triangle_stiffness() {
        let k = assemble_energy_matrix(&unit_triangle(), &Coefficients::checkerboard(1.0)).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(k.get(i, j), expected[i][j]));
            }
        }
        let mut c = Coefficients::checkerboard(1.0);
        c.diffusion[0] = [[2.0, 0.0], [0.0, 2.0]];
        let k2 = assemble_energy_matrix(&unit_triangle(), &c).unwrap();
        for (i, j, v) in k.iter() {
            assert_eq!(k2.get(i, j), 2.0 * v);
        }
    }

    #[test]
    fn unit_triangle_mass() {
        let m = assemble_target_matrix(&unit_triangle(), ProblemKind::Friedrichs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 2.0 / 24.0 } else { 1.0 / 24.0 };
                assert!(close(m.get(i, j), e));
            }
        }
    }

    #[test]
    fn trace_target_is_edge_mass() {
        let m = assemble_target_matrix(&unit_triangle(), ProblemKind::Trace).unwrap();
        assert!(close(m.get(0, 0), 1.0 / 3.0));
        assert!(close(m.get(0, 1), 1.0 / 6.0));
        assert!(close(m.get(1, 1), 1.0 / 3.0));
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn trace_without_neumann_is_config_error() {
        let mesh = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Dirichlet)).unwrap();
        assert!(matches!(assemble_target_matrix(&mesh, ProblemKind::Trace), Err(Error::Config(_))));
    }

    #[test]
    fn center_diagonal_is_four() {
        let mesh = Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap();
        let k = assemble_energy_matrix(&mesh, &Coefficients::checkerboard(1.0)).unwrap();
        // independent route: each incident triangle contributes
        // (cot(angle at the midpoint) + cot(angle at the corner)) / 2 = (0 + 1) / 2
        let per_triangle = (0.0 + 1.0 / (std::f64::consts::FRAC_PI_4).tan()) / 2.0;
        assert!(close(k.get(8, 8), 8.0 * per_triangle));
        assert!(close(k.get(8, 8), 4.0));
    }

    #[test]
    fn mass_total_is_domain_area() {
        let mut mesh = Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap();
        for _ in 0..3 {
            let m = assemble_target_matrix(&mesh, ProblemKind::Friedrichs).unwrap();
            let total: f64 = m.iter().map(|(_, _, v)| v).sum();
            assert!((total - 4.0).abs() < 1e-13);
            mesh = mesh.refine(&[0, 3]).unwrap();
        }
    }

    #[test]
    fn dirichlet_elimination_counts() {
        let c = Coefficients::checkerboard(1.0);
        let all_d = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Dirichlet)).unwrap();
        let right_n = Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap();
        let all_n = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Neumann)).unwrap();
        for (mesh, dofs) in [(&all_d, vec![8]), (&right_n, vec![5, 8]), (&all_n, (0..9).collect())] {
            let k = assemble_energy_matrix(mesh, &c).unwrap();
            let m = assemble_target_matrix(mesh, ProblemKind::Friedrichs).unwrap();
            let (kr, mr, map) = eliminate_dirichlet(&k, &m, mesh);
            assert_eq!(map.retained, dofs);
            assert_eq!(kr.dim(), dofs.len());
            assert_eq!(mr.dim(), dofs.len());
        }
    }

    #[test]
    fn poincare_kernel_is_constant() {
        let mesh = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Neumann)).unwrap().refine(&[1, 4]).unwrap();
        let k = assemble_energy_matrix(&mesh, &Coefficients::checkerboard(7.0)).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        let r = k.matvec(&ones);
        let scale = k.diagonal().iter().cloned().fold(0.0, f64::max);
        assert!(r.iter().all(|x| x.abs() <= 1e-12 * scale));
    }

    #[test]
    fn energy_scaling_covariance() {
        let mesh = Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap().refine(&[2]).unwrap();
        let mut c = Coefficients::checkerboard(3.0);
        c.reaction = vec![0.5, 1.5];
        c.robin = vec![0.0, 2.0];
        let k = assemble_energy_matrix(&mesh, &c).unwrap();
        let k4 = assemble_energy_matrix(&mesh, &c.scaled(4.0)).unwrap();
        for (i, j, v) in k.iter() {
            assert_eq!(k4.get(i, j), 4.0 * v);
        }
        assert!(k.is_symmetric());
    }

    #[test]
    fn spec_validation() {
        let mesh = Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap();
        let c = Coefficients::checkerboard(1.0);
        assert!(ProblemSpec::new(ProblemKind::Friedrichs, mesh.clone(), c.clone()).validate().is_ok());
        assert!(ProblemSpec::new(ProblemKind::Poincare, mesh.clone(), c.clone()).validate().is_err());
        let mut trace = ProblemSpec::new(ProblemKind::Trace, mesh.clone(), c.clone());
        assert!(trace.validate().is_err());
        trace.friedrichs_upper = Some(0.58);
        assert!(trace.validate().is_ok());

        let neumann = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Neumann)).unwrap();
        assert!(ProblemSpec::new(ProblemKind::Poincare, neumann.clone(), c.clone()).validate().is_ok());
        assert!(ProblemSpec::new(ProblemKind::Friedrichs, neumann, c.clone()).validate().is_err());

        let mut bad = c.clone();
        bad.diffusion[1] = [[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(bad.validate(&mesh), Err(Error::Coefficient(_))));
    }
}
