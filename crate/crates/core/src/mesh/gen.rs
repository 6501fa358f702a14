//! Disk mesh generation: boundary polygon + interface polylines + interior
//! lattice, triangulated with a constrained Delaunay triangulation.

use super::{Mesh, Region};
use crate::{Error, Result, Vec2};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

/// Closed polyline approximating a circle, `n` segments, CCW.
pub fn circle_polyline(center: Vec2, radius: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            center + radius * Vec2::new(a.cos(), a.sin())
        })
        .collect()
}

/// Closed polyline approximating an axis-aligned ellipse, CCW.
pub fn ellipse_polyline(center: Vec2, rx: f64, ry: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            center + Vec2::new(rx * a.cos(), ry * a.sin())
        })
        .collect()
}

/// Conforming triangulation of the disk of radius `outer_radius` with the
/// given interface loops resolved as mesh edge cycles.
///
/// The external boundary is the polygon inscribed in the circle with segment
/// length <= `target_h`; interior vertices sit on a hexagonal lattice of
/// spacing `target_h`, thinned near the constraint edges.
pub fn generate_disk_mesh(
    outer_radius: f64,
    inclusion_loops: &[Vec<Vec2>],
    target_h: f64,
) -> Result<Mesh> {
    if !(target_h > 0.0) || !(outer_radius > 0.0) {
        return Err(Error::InvalidInput(
            "outer_radius and target_h must be positive".into(),
        ));
    }
    validate_loops(outer_radius, inclusion_loops)?;

    let n_boundary = ((2.0 * std::f64::consts::PI * outer_radius / target_h).ceil() as usize).max(12);
    let boundary = circle_polyline(Vec2::zeros(), outer_radius, n_boundary);

    // interior lattice, thinned near constraints
    let inradius = outer_radius * (std::f64::consts::PI / n_boundary as f64).cos();
    let margin = 0.45 * target_h;
    let row_h = target_h * 3.0f64.sqrt() / 2.0;
    let n_rows = (outer_radius / row_h).ceil() as i64;
    let mut lattice = Vec::new();
    for j in -n_rows..=n_rows {
        let y = j as f64 * row_h;
        let offset = if j.rem_euclid(2) == 1 { 0.5 * target_h } else { 0.0 };
        let n_cols = (outer_radius / target_h).ceil() as i64 + 1;
        for i in -n_cols..=n_cols {
            let p = Vec2::new(i as f64 * target_h + offset, y);
            if p.norm() > inradius - margin {
                continue;
            }
            let near_loop = inclusion_loops.iter().any(|lp| {
                polyline_distance(lp, p) < margin
            });
            if !near_loop {
                lattice.push(p);
            }
        }
    }

    // constrained Delaunay triangulation
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, p: Vec2| {
        cdt.insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::Geometry(format!("point insertion failed: {e:?}")))
    };
    let mut boundary_handles = Vec::with_capacity(boundary.len());
    for &p in &boundary {
        boundary_handles.push(insert(&mut cdt, p)?);
    }
    let mut loop_handles = Vec::with_capacity(inclusion_loops.len());
    for lp in inclusion_loops {
        let mut hs = Vec::with_capacity(lp.len());
        for &p in lp {
            hs.push(insert(&mut cdt, p)?);
        }
        loop_handles.push(hs);
    }
    for &p in &lattice {
        insert(&mut cdt, p)?;
    }
    for i in 0..boundary_handles.len() {
        let (a, b) = (
            boundary_handles[i],
            boundary_handles[(i + 1) % boundary_handles.len()],
        );
        if a != b {
            cdt.add_constraint(a, b);
        }
    }
    for (li, hs) in loop_handles.iter().enumerate() {
        for i in 0..hs.len() {
            let (a, b) = (hs[i], hs[(i + 1) % hs.len()]);
            if a == b {
                continue;
            }
            if !cdt.can_add_constraint(a, b) {
                return Err(Error::MesherConformity {
                    loop_index: li,
                    detail: "constraint segment conflicts with an existing constraint".into(),
                });
            }
            cdt.add_constraint(a, b);
        }
    }

    let vertices: Vec<Vec2> = cdt
        .vertices()
        .map(|v| Vec2::new(v.position().x, v.position().y))
        .collect();
    let mut triangles = Vec::with_capacity(cdt.num_inner_faces());
    for f in cdt.inner_faces() {
        let vs = f.vertices();
        let tri = [vs[0].index(), vs[1].index(), vs[2].index()];
        triangles.push(longest_edge_first(&vertices, tri));
    }

    let region: Vec<Region> = triangles
        .iter()
        .map(|tri| {
            let c = (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
            let inside = inclusion_loops.iter().any(|lp| point_in_polygon(lp, c));
            if inside {
                Region::Inclusion
            } else {
                Region::Background
            }
        })
        .collect();

    let mesh = Mesh::from_raw(vertices, triangles, region)?;

    // every loop segment must now be an interface edge
    for (li, hs) in loop_handles.iter().enumerate() {
        for i in 0..hs.len() {
            let (a, b) = (hs[i].index(), hs[(i + 1) % hs.len()].index());
            let found = mesh.edges.iter().any(|e| {
                let mut v = e.v;
                v.sort_unstable();
                v == [a.min(b), a.max(b)]
                    && e.t_plus
                        .map(|tp| mesh.region[e.t_minus] != mesh.region[tp])
                        .unwrap_or(false)
            });
            if !found {
                return Err(Error::MesherConformity {
                    loop_index: li,
                    detail: format!("loop segment ({a}, {b}) is not an interface edge"),
                });
            }
        }
    }

    Ok(mesh)
}

/// Rotate the vertex triple (preserving orientation) so the refinement edge
/// `(v0, v1)` is the longest edge.
fn longest_edge_first(vertices: &[Vec2], tri: [usize; 3]) -> [usize; 3] {
    let mut best = 0;
    let mut best_len = -1.0;
    for k in 0..3 {
        let a = vertices[tri[(k + 1) % 3]];
        let b = vertices[tri[(k + 2) % 3]];
        let l = (b - a).norm_squared();
        if l > best_len {
            best_len = l;
            best = k;
        }
    }
    [tri[(best + 1) % 3], tri[(best + 2) % 3], tri[best]]
}

fn validate_loops(outer_radius: f64, loops: &[Vec<Vec2>]) -> Result<()> {
    for (i, lp) in loops.iter().enumerate() {
        if lp.len() < 3 {
            return Err(Error::Geometry(format!(
                "inclusion loop {i} has fewer than 3 points"
            )));
        }
        for (j, &p) in lp.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Geometry(format!("loop {i} point {j} is not finite")));
            }
            if p.norm() >= outer_radius * (1.0 - 1e-9) {
                return Err(Error::Geometry(format!(
                    "loop {i} point {j} is not strictly inside the disk"
                )));
            }
        }
        for j in 0..lp.len() {
            let q = lp[(j + 1) % lp.len()];
            if (q - lp[j]).norm() < 1e-12 * outer_radius {
                return Err(Error::Geometry(format!(
                    "loop {i} has a degenerate segment at {j}"
                )));
            }
        }
        // self intersection of non-adjacent segments
        let n = lp.len();
        for a in 0..n {
            for b in a + 1..n {
                if b == a || (b + 1) % n == a || (a + 1) % n == b {
                    continue;
                }
                if segments_intersect(lp[a], lp[(a + 1) % n], lp[b], lp[(b + 1) % n]) {
                    return Err(Error::Geometry(format!(
                        "loop {i} self-intersects (segments {a} and {b})"
                    )));
                }
            }
        }
    }
    for i in 0..loops.len() {
        for j in i + 1..loops.len() {
            let (a, b) = (&loops[i], &loops[j]);
            for s in 0..a.len() {
                for t in 0..b.len() {
                    if segments_intersect(
                        a[s],
                        a[(s + 1) % a.len()],
                        b[t],
                        b[(t + 1) % b.len()],
                    ) {
                        return Err(Error::Geometry(format!(
                            "inclusion loops {i} and {j} intersect"
                        )));
                    }
                }
            }
            if point_in_polygon(a, b[0]) || point_in_polygon(b, a[0]) {
                return Err(Error::Geometry(format!(
                    "inclusion loops {i} and {j} overlap (one contains the other)"
                )));
            }
        }
    }
    Ok(())
}

/// Even-odd ray casting.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn polyline_distance(poly: &[Vec2], p: Vec2) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        best = best.min(segment_distance(poly[i], poly[(i + 1) % n], p));
    }
    best
}

fn segment_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + t * d)).norm()
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).perp(&(r - p));
    let (o1, o2) = (o(a, b, c), o(a, b, d));
    let (o3, o4) = (o(c, d, a), o(c, d, b));
    if ((o1 > 0.0) != (o2 > 0.0)) && ((o3 > 0.0) != (o4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| {
        o(p, q, r).abs() < 1e-14
            && r.x >= p.x.min(q.x) - 1e-14
            && r.x <= p.x.max(q.x) + 1e-14
            && r.y >= p.y.min(q.y) - 1e-14
            && r.y <= p.y.max(q.y) + 1e-14
    };
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}
