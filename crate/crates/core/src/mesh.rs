//! Conforming triangulations with labeled boundaries and newest-vertex bisection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

impl BoundaryLabel {
    pub fn as_char(self) -> char {
        match self {
            BoundaryLabel::Dirichlet => 'D',
            BoundaryLabel::Neumann => 'N',
        }
    }
}

/// A boundary edge. `segment` groups edges into boundary pieces (the sides of
/// the initial polygon); per-segment Robin coefficients are indexed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub label: BoundaryLabel,
    pub segment: usize,
}

/// A counterclockwise triangle. The refinement edge is the edge opposite
/// `vertices[refinement_edge]`, that vertex being the newest one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub region: usize,
    pub refinement_edge: usize,
    pub generation: u32,
}

impl Triangle {
    /// Local edge `i` is the edge opposite local vertex `i`.
    pub fn edge(&self, i: usize) -> [usize; 2] {
        [self.vertices[(i + 1) % 3], self.vertices[(i + 2) % 3]]
    }

    pub fn refinement_edge_vertices(&self) -> [usize; 2] {
        self.edge(self.refinement_edge)
    }
}

#[inline]
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

/// Labels for the four sides of the square, indexed bottom, right, top, left.
/// A side left as `None` is a configuration error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SideLabels(pub [Option<BoundaryLabel>; 4]);

impl SideLabels {
    pub fn all(label: BoundaryLabel) -> Self {
        SideLabels([Some(label); 4])
    }

    /// Dirichlet everywhere except the right side `x = 1`.
    pub fn right_neumann() -> Self {
        use BoundaryLabel::*;
        SideLabels([Some(Dirichlet), Some(Neumann), Some(Dirichlet), Some(Dirichlet)])
    }
}

impl Mesh {
    /// The eight-triangle criss-cross mesh of `(-1, 1)^2`: four corners, four
    /// edge midpoints and the center. Region 1 marks the quadrants with
    /// `x1 * x2 > 0`, region 0 the others.
    pub fn criss_cross_square(sides: SideLabels) -> Result<Mesh> {
        let mut labels = [BoundaryLabel::Dirichlet; 4];
        for (i, side) in sides.0.iter().enumerate() {
            labels[i] = side.ok_or_else(|| Error::Config(format!("boundary side {} has no label", SIDE_NAMES[i])))?;
        }

        let vertices = vec![
            [-1.0, -1.0],
            [1.0, -1.0],
            [1.0, 1.0],
            [-1.0, 1.0],
            [0.0, -1.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [-1.0, 0.0],
            [0.0, 0.0],
        ];
        let triples = [[4, 1, 8], [4, 8, 0], [5, 2, 8], [5, 8, 1], [6, 3, 8], [6, 8, 2], [7, 0, 8], [7, 8, 3]];
        let triangles = triples
            .iter()
            .map(|&v| {
                let c = centroid(&vertices, v);
                Triangle {
                    vertices: v,
                    region: usize::from(c[0] * c[1] > 0.0),
                    refinement_edge: longest_edge(&vertices, v),
                    generation: 0,
                }
            })
            .collect();

        let sides_edges = [[0, 4, 1], [1, 5, 2], [2, 6, 3], [3, 7, 0]];
        let mut boundary_edges = Vec::with_capacity(8);
        for (segment, s) in sides_edges.iter().enumerate() {
            for pair in [[s[0], s[1]], [s[1], s[2]]] {
                boundary_edges.push(BoundaryEdge { vertices: pair, label: labels[segment], segment });
            }
        }

        Ok(Mesh { vertices, triangles, boundary_edges })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn coords(&self, t: usize) -> [Point; 3] {
        let v = self.triangles[t].vertices;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(self.coords(t))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn centroid(&self, t: usize) -> Point {
        centroid(&self.vertices, self.triangles[t].vertices)
    }

    pub fn edge_length(&self, e: [usize; 2]) -> f64 {
        let a = self.vertices[e[0]];
        let b = self.vertices[e[1]];
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn area_by_region(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for t in 0..self.num_triangles() {
            *out.entry(self.triangles[t].region).or_insert(0.0) += self.area(t);
        }
        out
    }

    pub fn num_regions(&self) -> usize {
        self.triangles.iter().map(|t| t.region + 1).max().unwrap_or(0)
    }

    pub fn neumann_length(&self) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.label == BoundaryLabel::Neumann)
            .map(|e| self.edge_length(e.vertices))
            .sum()
    }

    pub fn dirichlet_length(&self) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.label == BoundaryLabel::Dirichlet)
            .map(|e| self.edge_length(e.vertices))
            .sum()
    }

    /// Vertices on the closure of the Dirichlet boundary, including the
    /// endpoints shared with Neumann edges.
    pub fn dirichlet_vertices(&self) -> Vec<bool> {
        let mut on = vec![false; self.num_vertices()];
        for e in &self.boundary_edges {
            if e.label == BoundaryLabel::Dirichlet {
                on[e.vertices[0]] = true;
                on[e.vertices[1]] = true;
            }
        }
        on
    }

    /// Relabels every boundary edge of the given segment.
    pub fn set_segment_label(&mut self, segment: usize, label: BoundaryLabel) {
        for e in self.boundary_edges.iter_mut().filter(|e| e.segment == segment) {
            e.label = label;
        }
    }

    /// Newest-vertex bisection of every triangle in `marked`, followed by the
    /// conforming closure. Output vertices extend the input vertices.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh> {
        let nt = self.num_triangles();
        if let Some(&bad) = marked.iter().find(|&&t| t >= nt) {
            return Err(Error::Argument(format!("triangle id {bad} out of range (mesh has {nt})")));
        }
        if marked.is_empty() {
            return Ok(self.clone());
        }

        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for i in 0..3 {
                let [a, b] = tri.edge(i);
                edge_tris.entry(edge_key(a, b)).or_default().push(t);
            }
        }

        // Closure: a triangle with any marked edge must have its refinement edge marked.
        let mut marked_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut work: Vec<(usize, usize)> = Vec::new();
        for &t in marked {
            let [a, b] = self.triangles[t].refinement_edge_vertices();
            if marked_edges.insert(edge_key(a, b)) {
                work.push(edge_key(a, b));
            }
        }
        while let Some(e) = work.pop() {
            for &t in &edge_tris[&e] {
                let [a, b] = self.triangles[t].refinement_edge_vertices();
                let k = edge_key(a, b);
                if marked_edges.insert(k) {
                    work.push(k);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(marked_edges.len());
        for &(a, b) in &marked_edges {
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            midpoint.insert((a, b), vertices.len());
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }

        let mut triangles = Vec::with_capacity(nt + 2 * marked_edges.len());
        for tri in &self.triangles {
            bisect_recursive(*tri, &midpoint, &mut triangles);
        }

        let mut boundary_edges = Vec::with_capacity(self.boundary_edges.len() + 8);
        for e in &self.boundary_edges {
            let [a, b] = e.vertices;
            match midpoint.get(&edge_key(a, b)) {
                Some(&m) => {
                    boundary_edges.push(BoundaryEdge { vertices: [a, m], ..*e });
                    boundary_edges.push(BoundaryEdge { vertices: [m, b], ..*e });
                }
                None => boundary_edges.push(*e),
            }
        }

        Ok(Mesh { vertices, triangles, boundary_edges })
    }

    /// Bisects every triangle at least once; closure may bisect some twice.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let all: Vec<usize> = (0..self.num_triangles()).collect();
        self.refine(&all)
    }
}

fn bisect_recursive(tri: Triangle, midpoint: &HashMap<(usize, usize), usize>, out: &mut Vec<Triangle>) {
    let r = tri.refinement_edge;
    let p = tri.vertices[r];
    let a = tri.vertices[(r + 1) % 3];
    let b = tri.vertices[(r + 2) % 3];
    match midpoint.get(&edge_key(a, b)) {
        Some(&m) => {
            let child = |v: [usize; 3]| Triangle {
                vertices: v,
                region: tri.region,
                refinement_edge: 0,
                generation: tri.generation + 1,
            };
            bisect_recursive(child([m, p, a]), midpoint, out);
            bisect_recursive(child([m, b, p]), midpoint, out);
        }
        None => out.push(tri),
    }
}

pub const SIDE_NAMES: [&str; 4] = ["bottom", "right", "top", "left"];

pub fn signed_area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

fn centroid(vertices: &[Point], v: [usize; 3]) -> Point {
    let mut c = [0.0; 2];
    for &i in &v {
        c[0] += vertices[i][0] / 3.0;
        c[1] += vertices[i][1] / 3.0;
    }
    c
}

/// Index of the vertex opposite the longest edge; ties go to the smallest
/// opposite-vertex (global) index.
pub fn longest_edge(vertices: &[Point], v: [usize; 3]) -> usize {
    let len2 = |i: usize| {
        let a = vertices[v[(i + 1) % 3]];
        let b = vertices[v[(i + 2) % 3]];
        (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)
    };
    let mut best = 0;
    for i in 1..3 {
        let (li, lb) = (len2(i), len2(best));
        if li > lb || (li == lb && v[i] < v[best]) {
            best = i;
        }
    }
    best
}

/// Edge enumeration and adjacency of a mesh.
#[derive(Clone, Debug)]
pub struct MeshTopology {
    /// Edges as sorted vertex pairs, in ascending order.
    pub edges: Vec<[usize; 2]>,
    /// Global edge index of local edge `i` (opposite vertex `i`) of each triangle.
    pub triangle_edges: Vec<[usize; 3]>,
    /// Triangles adjacent to each edge (one or two).
    pub edge_triangles: Vec<Vec<usize>>,
    /// Boundary label of each edge, `None` for interior edges.
    pub edge_label: Vec<Option<(BoundaryLabel, usize)>>,
}

impl MeshTopology {
    pub fn new(mesh: &Mesh) -> MeshTopology {
        let mut keys: Vec<(usize, usize)> = Vec::with_capacity(3 * mesh.num_triangles());
        for tri in &mesh.triangles {
            for i in 0..3 {
                let [a, b] = tri.edge(i);
                keys.push(edge_key(a, b));
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let index: HashMap<(usize, usize), usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut triangle_edges = Vec::with_capacity(mesh.num_triangles());
        let mut edge_triangles = vec![Vec::with_capacity(2); keys.len()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let mut te = [0; 3];
            for (i, slot) in te.iter_mut().enumerate() {
                let [a, b] = tri.edge(i);
                let e = index[&edge_key(a, b)];
                *slot = e;
                edge_triangles[e].push(t);
            }
            triangle_edges.push(te);
        }
        let mut edge_label = vec![None; keys.len()];
        for be in &mesh.boundary_edges {
            if let Some(&e) = index.get(&edge_key(be.vertices[0], be.vertices[1])) {
                edge_label[e] = Some((be.label, be.segment));
            }
        }

        MeshTopology {
            edges: keys.into_iter().map(|(a, b)| [a, b]).collect(),
            triangle_edges,
            edge_triangles,
            edge_label,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    VertexOutOfRange { triangle: usize },
    NegativeArea { triangle: usize, area: f64 },
    NonconformingEdge { edge: [usize; 2] },
    EdgeOverused { edge: [usize; 2], count: usize },
    InconsistentOrientation { edge: [usize; 2] },
    UnlabeledBoundaryEdge { edge: [usize; 2] },
    DuplicateBoundaryEdge { edge: [usize; 2] },
    BoundaryEdgeNotOnBoundary { edge: [usize; 2] },
    BadRefinementEdge { triangle: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VertexOutOfRange { triangle } => write!(f, "vertex index out of range in triangle {triangle}"),
            Violation::NegativeArea { triangle, area } => {
                write!(f, "negative area in triangle {triangle} (signed area {area:e})")
            }
            Violation::NonconformingEdge { edge } => write!(f, "nonconforming edge {edge:?}"),
            Violation::EdgeOverused { edge, count } => write!(f, "edge {edge:?} shared by {count} triangles"),
            Violation::InconsistentOrientation { edge } => write!(f, "inconsistent orientation across edge {edge:?}"),
            Violation::UnlabeledBoundaryEdge { edge } => write!(f, "boundary edge {edge:?} has no label"),
            Violation::DuplicateBoundaryEdge { edge } => write!(f, "boundary edge {edge:?} labeled more than once"),
            Violation::BoundaryEdgeNotOnBoundary { edge } => {
                write!(f, "labeled edge {edge:?} is not a boundary edge")
            }
            Violation::BadRefinementEdge { triangle } => write!(f, "invalid refinement edge in triangle {triangle}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConformityReport {
    pub violations: Vec<Violation>,
}

impl ConformityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ConformityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        writeln!(f, "fail ({} violations)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a mesh without modifying it.
pub fn check_conformity(mesh: &Mesh) -> ConformityReport {
    let mut violations = Vec::new();
    let nv = mesh.num_vertices();

    // Directed edge uses: (sorted key) -> list of (triangle, forward?)
    let mut uses: BTreeMap<(usize, usize), Vec<bool>> = BTreeMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.vertices.iter().any(|&v| v >= nv) {
            violations.push(Violation::VertexOutOfRange { triangle: t });
            continue;
        }
        if tri.refinement_edge > 2 {
            violations.push(Violation::BadRefinementEdge { triangle: t });
        }
        let a = mesh.signed_area(t);
        if a <= 0.0 {
            violations.push(Violation::NegativeArea { triangle: t, area: a });
        }
        for i in 0..3 {
            let [p, q] = tri.edge(i);
            uses.entry(edge_key(p, q)).or_default().push(p < q);
        }
    }

    let mut labeled: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for be in &mesh.boundary_edges {
        *labeled.entry(edge_key(be.vertices[0], be.vertices[1])).or_insert(0) += 1;
    }
    for (&(a, b), &count) in &labeled {
        if count > 1 {
            violations.push(Violation::DuplicateBoundaryEdge { edge: [a, b] });
        }
        if uses.get(&(a, b)).map(Vec::len) != Some(1) {
            violations.push(Violation::BoundaryEdgeNotOnBoundary { edge: [a, b] });
        }
    }

    let mut single: Vec<(usize, usize)> = Vec::new();
    for (&(a, b), dirs) in &uses {
        match dirs.len() {
            1 => single.push((a, b)),
            2 => {
                if dirs[0] == dirs[1] {
                    violations.push(Violation::InconsistentOrientation { edge: [a, b] });
                }
            }
            n => violations.push(Violation::EdgeOverused { edge: [a, b], count: n }),
        }
    }

    // A hanging node leaves single-use edges inside the domain; they show up
    // either as unlabeled single edges or as a vertex lying inside one.
    let mut endpoint_set: BTreeSet<usize> = BTreeSet::new();
    for &(a, b) in &single {
        endpoint_set.insert(a);
        endpoint_set.insert(b);
    }
    let endpoints: Vec<usize> = endpoint_set.into_iter().collect();
    for &(a, b) in &single {
        let hanging = endpoints
            .iter()
            .any(|&v| v != a && v != b && point_inside_segment(mesh.vertices[v], mesh.vertices[a], mesh.vertices[b]));
        if hanging {
            violations.push(Violation::NonconformingEdge { edge: [a, b] });
        } else if !labeled.contains_key(&(a, b)) {
            violations.push(Violation::UnlabeledBoundaryEdge { edge: [a, b] });
        }
    }

    ConformityReport { violations }
}

fn point_inside_segment(p: Point, a: Point, b: Point) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let cross = ab[0] * ap[1] - ab[1] * ap[0];
    if cross.abs() > 1e-12 * len2 {
        return false;
    }
    let s = (ab[0] * ap[0] + ab[1] * ap[1]) / len2;
    s > 1e-12 && s < 1.0 - 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;

    fn initial() -> Mesh {
        Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap()
    }

    #[test]
    fn initial_mesh_counts() {
        let m = initial();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
        assert_eq!(m.boundary_edges.len(), 8);
        let neumann = m.boundary_edges.iter().filter(|e| e.label == BoundaryLabel::Neumann).count();
        assert_eq!(neumann, 2);
        assert_eq!(m.triangles.iter().filter(|t| t.region == 1).count(), 4);
        assert!(check_conformity(&m).passed());
    }

    #[test]
    fn initial_refinement_edges_are_diagonals() {
        let m = initial();
        for tri in &m.triangles {
            let e = tri.refinement_edge_vertices();
            assert!((m.edge_length(e) - 2f64.sqrt()).abs() < 1e-15);
            assert!(e.contains(&8));
        }
    }

    #[test]
    fn all_dirichlet_relabels_only() {
        let m = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Dirichlet)).unwrap();
        assert!(m.boundary_edges.iter().all(|e| e.label == BoundaryLabel::Dirichlet));
        assert_eq!(m.vertices, initial().vertices);
    }

    #[test]
    fn missing_side_label_is_config_error() {
        let mut sides = SideLabels::right_neumann();
        sides.0[2] = None;
        assert!(matches!(Mesh::criss_cross_square(sides), Err(Error::Config(_))));
    }

    #[test]
    fn refine_all_initial() {
        let m = initial().refine_uniform().unwrap();
        assert_eq!(m.num_triangles(), 16);
        assert_eq!(m.num_vertices(), 13);
        assert_eq!(m.boundary_edges.len(), 8);
        assert!(check_conformity(&m).passed());
    }

    #[test]
    fn refine_empty_is_identity() {
        let m = initial();
        assert_eq!(m.refine(&[]).unwrap(), m);
    }

    #[test]
    fn refine_single_triangle_closure() {
        let m = initial();
        for t in 0..8 {
            let r = m.refine(&[t]).unwrap();
            let report = check_conformity(&r);
            assert!(report.passed(), "{report}");
            let parent = m.triangles[t].vertices;
            assert!(!r.triangles.iter().any(|c| c.vertices == parent));
        }
    }

    #[test]
    fn refine_rejects_out_of_range() {
        assert!(matches!(initial().refine(&[8]), Err(Error::Argument(_))));
    }

    #[test]
    fn uniform_refinement_doubles() {
        let mut m = initial();
        for _ in 0..4 {
            let r = m.refine_uniform().unwrap();
            assert_eq!(r.num_triangles(), 2 * m.num_triangles());
            m = r;
        }
        assert!(check_conformity(&m).passed());
    }

    #[test]
    fn clockwise_triangle_fails() {
        let mut m = initial();
        m.triangles[3].vertices.swap(1, 2);
        let report = check_conformity(&m);
        assert!(!report.passed());
        assert!(report.to_string().contains("negative area"));
    }

    #[test]
    fn hanging_node_fails() {
        // split triangle 0 through the midpoint of its refinement edge only
        let mut m = initial();
        let tri = m.triangles[0];
        let [a, b] = tri.refinement_edge_vertices();
        let p = tri.vertices[tri.refinement_edge];
        let pa = m.vertices[a];
        let pb = m.vertices[b];
        let mid = m.vertices.len();
        m.vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        m.triangles[0] = Triangle { vertices: [mid, p, a], refinement_edge: 0, ..tri };
        m.triangles.push(Triangle { vertices: [mid, b, p], refinement_edge: 0, ..tri });
        let report = check_conformity(&m);
        assert!(!report.passed());
        assert!(report.to_string().contains("nonconforming edge"), "{report}");
    }

    #[test]
    fn topology_of_initial_mesh() {
        let m = initial();
        let topo = MeshTopology::new(&m);
        assert_eq!(topo.num_edges(), 16);
        let boundary = topo.edge_triangles.iter().filter(|t| t.len() == 1).count();
        assert_eq!(boundary, 8);
        assert!(topo.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dirichlet_closure_includes_corners() {
        let m = initial();
        let d = m.dirichlet_vertices();
        assert!(d[1] && d[2]);
        assert!(!d[5] && !d[8]);
        assert_eq!(d.iter().filter(|&&x| x).count(), 7);
    }
}
