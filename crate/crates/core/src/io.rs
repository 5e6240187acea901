//! Plain-text mesh files and legacy VTK export.
//!
//! Mesh file grammar (blank lines and `#` comments ignored):
//!
//! ```text
//! <nv>
//! x y                      (nv lines)
//! <nt>
//! v0 v1 v2 region [gen]    (nt lines, counterclockwise, refinement edge v1-v2)
//! <nb>
//! v0 v1 D|N [segment]      (nb lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryEdge, BoundaryLabel, Mesh, Triangle};

/// Serializes a mesh; coordinates keep 17 significant digits.
pub fn mesh_to_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vertices");
    let _ = writeln!(s, "{}", mesh.num_vertices());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{:.16e} {:.16e}", p[0], p[1]);
    }
    let _ = writeln!(s, "# triangles: v0 v1 v2 region generation");
    let _ = writeln!(s, "{}", mesh.num_triangles());
    for t in &mesh.triangles {
        let r = t.refinement_edge;
        let v = [t.vertices[r], t.vertices[(r + 1) % 3], t.vertices[(r + 2) % 3]];
        let _ = writeln!(s, "{} {} {} {} {}", v[0], v[1], v[2], t.region, t.generation);
    }
    let _ = writeln!(s, "# boundary edges: v0 v1 label segment");
    let _ = writeln!(s, "{}", mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let _ = writeln!(s, "{} {} {} {}", e.vertices[0], e.vertices[1], e.label.as_char(), e.segment);
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Ok(line.split_whitespace().collect());
            }
        }
        Err(Error::Parse { line: self.last + 1, msg: "unexpected end of file".into() })
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.last, msg: msg.into() }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let f = self.next_fields()?;
        match f.as_slice() {
            [n] => n.parse().map_err(|_| self.err(format!("expected {what} count, found {n:?}"))),
            _ => Err(self.err(format!("expected a single {what} count"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("invalid {what} {s:?}")))
    }
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };

    let nv = lines.count("vertex")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let f = lines.next_fields()?;
        if f.len() != 2 {
            return Err(lines.err("vertex line needs \"x y\""));
        }
        let p = [lines.parse::<f64>(f[0], "coordinate")?, lines.parse::<f64>(f[1], "coordinate")?];
        if !p.iter().all(|c| c.is_finite()) {
            return Err(lines.err("non-finite coordinate"));
        }
        vertices.push(p);
    }

    let nt = lines.count("triangle")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let f = lines.next_fields()?;
        if !(f.len() == 4 || f.len() == 5) {
            return Err(lines.err("triangle line needs \"v0 v1 v2 region [generation]\""));
        }
        let mut v = [0usize; 3];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = lines.parse(f[k], "vertex index")?;
            if *slot >= nv {
                return Err(lines.err(format!("vertex index {} out of range", *slot)));
            }
        }
        let region = lines.parse(f[3], "region id")?;
        let generation = if f.len() == 5 { lines.parse(f[4], "generation")? } else { 0 };
        triangles.push(Triangle { vertices: v, region, refinement_edge: 0, generation });
    }

    let nb = lines.count("boundary edge")?;
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let f = lines.next_fields()?;
        if !(f.len() == 3 || f.len() == 4) {
            return Err(lines.err("boundary line needs \"v0 v1 label [segment]\""));
        }
        let a: usize = lines.parse(f[0], "vertex index")?;
        let b: usize = lines.parse(f[1], "vertex index")?;
        if a >= nv || b >= nv {
            return Err(lines.err("boundary vertex index out of range"));
        }
        let label = match f[2].to_ascii_lowercase().as_str() {
            "d" | "dirichlet" => BoundaryLabel::Dirichlet,
            "n" | "neumann" => BoundaryLabel::Neumann,
            other => return Err(lines.err(format!("unknown boundary label {other:?}"))),
        };
        let segment = if f.len() == 4 { lines.parse(f[3], "segment")? } else { 0 };
        boundary_edges.push(BoundaryEdge { vertices: [a, b], label, segment });
    }
    if lines.next_fields().is_ok() {
        return Err(lines.err("trailing content after boundary edges"));
    }
    Ok(Mesh { vertices, triangles, boundary_edges })
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_string(mesh))?;
    Ok(())
}

/// Legacy ASCII unstructured grid with the region id and any extra
/// per-triangle arrays as cell data.
pub fn vtk_string(mesh: &Mesh, cell_data: &[(&str, &[f64])]) -> Result<String> {
    for (name, data) in cell_data {
        if data.len() != mesh.num_triangles() {
            return Err(Error::Argument(format!(
                "cell data {name:?} has {} values for {} triangles",
                data.len(),
                mesh.num_triangles()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Argument(format!("invalid cell data name {name:?}")));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "eigenbound mesh");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.num_vertices());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{:.16e} {:.16e} 0", p[0], p[1]);
    }
    let nt = mesh.num_triangles();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t.vertices[0], t.vertices[1], t.vertices[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "5");
    }
    let _ = writeln!(s, "CELL_DATA {nt}");
    let _ = writeln!(s, "SCALARS region int 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for t in &mesh.triangles {
        let _ = writeln!(s, "{}", t.region);
    }
    for (name, data) in cell_data {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for v in *data {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
    Ok(s)
}

pub fn export_vtk(mesh: &Mesh, cell_data: &[(&str, &[f64])], path: &Path) -> Result<()> {
    let s = vtk_string(mesh, cell_data)?;
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SideLabels;

    fn initial() -> Mesh {
        Mesh::criss_cross_square(SideLabels::right_neumann()).unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let mut mesh = initial();
        assert_eq!(parse_mesh(&mesh_to_string(&mesh)).unwrap(), mesh);
        for marked in [vec![0], vec![3, 4], vec![1, 7, 9]] {
            mesh = mesh.refine(&marked).unwrap();
            assert_eq!(parse_mesh(&mesh_to_string(&mesh)).unwrap(), mesh);
        }
        // irrational coordinates survive too
        mesh.vertices[0][0] = std::f64::consts::PI / 3.0;
        assert_eq!(parse_mesh(&mesh_to_string(&mesh)).unwrap().vertices[0][0], std::f64::consts::PI / 3.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let mesh = initial().refine_uniform().unwrap();
        write_mesh(&mesh, &path).unwrap();
        assert_eq!(read_mesh(&path).unwrap(), mesh);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_mesh("3\n0 0\n1 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_mesh("1\n0 zero\n").unwrap_err();
        assert_eq!(err, Error::Parse { line: 2, msg: "invalid coordinate \"zero\"".into() });
        let err = parse_mesh("1\n0 0\n1\n0 0 5 0\n0\n").unwrap_err();
        assert!(err.to_string().contains("out of range"));
        assert!(parse_mesh("").is_err());
    }

    #[test]
    fn minimal_format_is_accepted() {
        let text = "3\n0 0\n1 0\n0 1\n1\n0 1 2 0\n3\n0 1 D\n1 2 N\n2 0 d\n";
        let mesh = parse_mesh(text).unwrap();
        assert_eq!(mesh.num_triangles(), 1);
        assert_eq!(mesh.boundary_edges[1].label, BoundaryLabel::Neumann);
        assert!(crate::mesh::check_conformity(&mesh).passed());
    }

    #[test]
    fn vtk_counts() {
        let mesh = initial();
        let eta = vec![0.5; 8];
        let s = vtk_string(&mesh, &[("eta", &eta)]).unwrap();
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert!(s.contains("CELL_DATA 8"));
        assert!(s.contains("SCALARS eta double 1"));
        assert_eq!(s.lines().filter(|l| *l == "5").count(), 8);
    }

    #[test]
    fn vtk_rejects_wrong_length() {
        let err = vtk_string(&initial(), &[("eta", &[1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
