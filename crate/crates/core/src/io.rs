//! File emission: legacy-ASCII VTK snapshots, CSV tables, and interface
//! polylines. All writers are deterministic so identical runs produce
//! byte-identical files.

use crate::cda::IterationRecord;
use crate::eit::Discretization;
use crate::mesh::Mesh;
use crate::validation::LevelRow;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Legacy-ASCII VTK unstructured grid (cell type 5) with optional point and
/// cell data attached.
pub fn write_vtk(
    path: &Path,
    mesh: &Mesh,
    point_scalars: &[(&str, &[f64])],
    point_vectors: &[(&str, &[f64])],
    cell_scalars: &[(&str, &[f64])],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("certdesc snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:.12e} {:.12e} 0", p.x, p.y);
    }
    let m = mesh.n_triangles();
    let _ = writeln!(out, "CELLS {} {}", m, 4 * m);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {m}");
    for _ in 0..m {
        out.push_str("5\n");
    }
    if !point_scalars.is_empty() || !point_vectors.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
        for (name, values) in point_scalars {
            assert_eq!(values.len(), mesh.n_vertices());
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for v in *values {
                let _ = writeln!(out, "{v:.12e}");
            }
        }
        for (name, values) in point_vectors {
            assert_eq!(values.len(), 2 * mesh.n_vertices());
            let _ = writeln!(out, "VECTORS {name} double");
            for v in 0..mesh.n_vertices() {
                let _ = writeln!(out, "{:.12e} {:.12e} 0", values[2 * v], values[2 * v + 1]);
            }
        }
    }
    if !cell_scalars.is_empty() {
        let _ = writeln!(out, "CELL_DATA {m}");
        for (name, values) in cell_scalars {
            assert_eq!(values.len(), m);
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for v in *values {
                let _ = writeln!(out, "{v:.12e}");
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub const ITERATIONS_HEADER: &str = "iteration,elements,dhj_theta,ebar,j,mu";

pub fn write_iterations_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(ITERATIONS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.iteration, r.elements, r.dhj_theta, r.ebar, r.j_value, r.mu
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub const CONVERGENCE_HEADER: &str = "level,discretization,dofs,exact_error,estimate,effectivity";

pub fn write_convergence_csv(path: &Path, rows: &[LevelRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for r in rows {
        let disc = match r.disc {
            Discretization::Cg => "cg",
            Discretization::Dg => "dg",
        };
        let _ = writeln!(
            out,
            "{},{},{},{:.12e},{:.12e},{:.12e}",
            r.level, disc, r.dofs, r.exact_error, r.estimate, r.effectivity
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_iterations_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ITERATIONS_HEADER => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "iterations csv: unexpected header {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::InvalidInput(format!(
                "iterations csv: expected 6 columns, found {}",
                cols.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("iterations csv: bad number `{s}`")))
        };
        out.push(IterationRecord {
            iteration: cols[0]
                .parse()
                .map_err(|_| Error::InvalidInput("iterations csv: bad iteration".into()))?,
            elements: cols[1]
                .parse()
                .map_err(|_| Error::InvalidInput("iterations csv: bad element count".into()))?,
            dhj_theta: parse_f(cols[2])?,
            ebar: parse_f(cols[3])?,
            j_value: parse_f(cols[4])?,
            mu: parse_f(cols[5])?,
            certified: true,
            refine_rounds: 0,
        });
    }
    Ok(out)
}

/// Interface loops as plain polylines: one `x y` line per vertex, loops
/// separated by blank lines.
pub fn write_interface_txt(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = String::new();
    for (i, lp) in mesh.interface_loops.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for &v in lp {
            let p = mesh.vertices[v];
            let _ = writeln!(out, "{:.12e} {:.12e}", p.x, p.y);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Element-average vectors of an RT field as VTK cell data (two scalar
/// components, since legacy VTK cell vectors are awkward in many viewers).
pub fn rt_cell_averages(field: &crate::spaces::Field) -> (Vec<f64>, Vec<f64>) {
    let mesh = &field.mesh;
    let c = crate::Vec2::new(1.0 / 3.0, 1.0 / 3.0);
    let mut vx = Vec::with_capacity(mesh.n_triangles());
    let mut vy = Vec::with_capacity(mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let (v, _) = field.eval_rt(t, &[c])[0];
        vx.push(v.x);
        vy.push(v.y);
    }
    (vx, vy)
}
