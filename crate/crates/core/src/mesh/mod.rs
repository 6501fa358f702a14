//! Conforming triangulations of a disk with an interior interface.
//!
//! Meshes are immutable: refinement, deformation and generation all return
//! new `Mesh` values, so they can be shared read-only across threads.
//!
//! Conventions:
//! - triangles are counterclockwise; the newest-vertex-bisection refinement
//!   edge of a triangle is `(v[0], v[1])` and `v[2]` is its newest vertex;
//! - `edges[e].v` is directed as encountered in the CCW traversal of
//!   `t_minus`, so the unit normal `edge_normal(e)` points from `T-(e)`
//!   into `T+(e)` (outward on the boundary).

mod format;
mod gen;
mod refine;

pub use format::{read_mesh_text, write_mesh_text};
pub use gen::{circle_polyline, ellipse_polyline, generate_disk_mesh};
pub use refine::refine;

use crate::{Error, Result, Vec2};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Inclusion,
}

#[derive(Clone, Copy, Debug)]
pub struct Edge {
    /// Endpoints, directed as in the CCW traversal of `t_minus`.
    pub v: [usize; 2],
    pub t_minus: usize,
    pub t_plus: Option<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.t_plus.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub region: Vec<Region>,
    pub edges: Vec<Edge>,
    /// Per triangle: edge index opposite each local vertex.
    pub tri_edges: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    /// Triangles incident to each vertex, ascending.
    pub vertex_tris: Vec<Vec<usize>>,
    /// Ordered external boundary loops (domain on the left).
    pub boundary_loops: Vec<Vec<usize>>,
    /// Ordered interface loops (inclusion on the left).
    pub interface_loops: Vec<Vec<usize>>,
}

impl Mesh {
    /// Build a mesh from raw arrays, classifying edges and extracting the
    /// boundary and interface loops. Triangle vertex order is preserved
    /// (it carries the bisection convention).
    pub fn from_raw(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        region: Vec<Region>,
    ) -> Result<Mesh> {
        if region.len() != triangles.len() {
            return Err(Error::MeshInvariant(format!(
                "region labels ({}) do not match triangle count ({})",
                region.len(),
                triangles.len()
            )));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::MeshInvariant(format!(
                    "triangle {t} references a vertex out of range"
                )));
            }
            let area = signed_area(&vertices, tri);
            if area <= 0.0 {
                return Err(Error::MeshInvariant(format!(
                    "triangle {t} has non-positive signed area {area:.3e}"
                )));
            }
        }

        // Edge table: first encounter fixes direction and t_minus.
        let mut edge_of: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
        let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 2);
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                match edge_of.get(&key) {
                    None => {
                        edge_of.insert(key, edges.len());
                        tri_edges[t][k] = edges.len();
                        edges.push(Edge {
                            v: [a, b],
                            t_minus: t,
                            t_plus: None,
                        });
                    }
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.t_plus.is_some() {
                            return Err(Error::MeshInvariant(format!(
                                "edge {:?} shared by more than two triangles",
                                key
                            )));
                        }
                        if edge.v != [b, a] {
                            return Err(Error::MeshInvariant(format!(
                                "inconsistent orientation across edge {:?}",
                                key
                            )));
                        }
                        edge.t_plus = Some(t);
                        tri_edges[t][k] = e;
                    }
                }
            }
        }

        let mut boundary_vertex = vec![false; nv];
        for e in &edges {
            if e.is_boundary() {
                boundary_vertex[e.v[0]] = true;
                boundary_vertex[e.v[1]] = true;
            }
        }

        let mut vertex_tris = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[v].push(t);
            }
        }

        let boundary_loops = extract_loops(
            nv,
            edges
                .iter()
                .filter(|e| e.is_boundary())
                .map(|e| (e.v[0], e.v[1])),
            "boundary",
        )?;

        let interface_loops = extract_loops(
            nv,
            edges.iter().filter_map(|e| {
                let tp = e.t_plus?;
                if region[e.t_minus] != region[tp] {
                    // orient with the inclusion on the left
                    if region[e.t_minus] == Region::Inclusion {
                        Some((e.v[0], e.v[1]))
                    } else {
                        Some((e.v[1], e.v[0]))
                    }
                } else {
                    None
                }
            }),
            "interface",
        )?;

        let mesh = Mesh {
            vertices,
            triangles,
            region,
            edges,
            tri_edges,
            boundary_vertex,
            vertex_tris,
            boundary_loops,
            interface_loops,
        };

        // Triangle areas must tile the polygonal domain.
        let tri_sum: f64 = (0..mesh.triangles.len()).map(|t| mesh.area(t)).sum();
        let poly = mesh
            .boundary_loops
            .iter()
            .map(|l| shoelace(&mesh.vertices, l))
            .sum::<f64>();
        if (tri_sum - poly).abs() > 1e-12 * tri_sum.max(1.0) {
            return Err(Error::MeshInvariant(format!(
                "triangle areas sum to {tri_sum:.15e} but the boundary polygon encloses {poly:.15e}"
            )));
        }

        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t)
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    pub fn tri_vertices(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn edge_len(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].v;
        (self.vertices[b] - self.vertices[a]).norm()
    }

    /// Unit normal pointing from `T-(e)` to `T+(e)` (outward on the boundary).
    pub fn edge_normal(&self, e: usize) -> Vec2 {
        let [a, b] = self.edges[e].v;
        let d = self.vertices[b] - self.vertices[a];
        Vec2::new(d.y, -d.x) / d.norm()
    }

    pub fn edge_midpoint(&self, e: usize) -> Vec2 {
        let [a, b] = self.edges[e].v;
        0.5 * (self.vertices[a] + self.vertices[b])
    }

    /// Canonical parametrization endpoints of an edge: from the lower vertex
    /// index to the higher. Shared by both incident elements.
    pub fn edge_canonical(&self, e: usize) -> (usize, usize) {
        let [a, b] = self.edges[e].v;
        (a.min(b), a.max(b))
    }

    /// Point at canonical parameter `t` in [0,1] along edge `e`.
    pub fn edge_point(&self, e: usize, t: f64) -> Vec2 {
        let (lo, hi) = self.edge_canonical(e);
        (1.0 - t) * self.vertices[lo] + t * self.vertices[hi]
    }

    /// +1 if `t` is `T-(e)` of its `k`-th edge (its outward normal equals
    /// the global edge normal), -1 otherwise.
    pub fn edge_sign(&self, t: usize, k: usize) -> f64 {
        if self.edges[self.tri_edges[t][k]].t_minus == t {
            1.0
        } else {
            -1.0
        }
    }

    /// Length of the shortest edge incident to `v`.
    pub fn min_edge_at_vertex(&self, v: usize) -> f64 {
        let mut best = f64::INFINITY;
        for &t in &self.vertex_tris[v] {
            for k in 0..3 {
                let e = self.tri_edges[t][k];
                if self.edges[e].v.contains(&v) {
                    best = best.min(self.edge_len(e));
                }
            }
        }
        best
    }

    /// The patch of triangles around vertex `v` with its edge partition.
    pub fn vertex_patch(&self, v: usize) -> VertexPatch {
        let tris = self.vertex_tris[v].clone();
        let center_local = tris
            .iter()
            .map(|&t| self.triangles[t].iter().position(|&w| w == v).unwrap())
            .collect();
        let mut seen = Vec::new();
        let mut interior_edges = Vec::new();
        let mut patch_boundary_edges = Vec::new();
        let mut external_edges = Vec::new();
        for &t in &tris {
            for k in 0..3 {
                let e = self.tri_edges[t][k];
                if seen.contains(&e) {
                    continue;
                }
                seen.push(e);
                let edge = &self.edges[e];
                if edge.is_boundary() {
                    external_edges.push(e);
                } else if edge.v.contains(&v) {
                    interior_edges.push(e);
                } else {
                    patch_boundary_edges.push(e);
                }
            }
        }
        interior_edges.sort_unstable();
        patch_boundary_edges.sort_unstable();
        external_edges.sort_unstable();
        VertexPatch {
            center: v,
            tris,
            center_local,
            interior_edges,
            patch_boundary_edges,
            external_edges,
        }
    }

    /// Deform vertex positions by `mu * theta` (theta interleaved per vertex,
    /// `[x0, y0, x1, y1, ...]`). Fails without touching the mesh if any
    /// triangle's area drops below `quality_floor` times its old area.
    pub fn deform(&self, theta: &[f64], mu: f64, quality_floor: f64) -> Result<Mesh> {
        let nv = self.n_vertices();
        if theta.len() != 2 * nv {
            return Err(Error::InvalidInput(format!(
                "deformation field has {} entries, expected {}",
                theta.len(),
                2 * nv
            )));
        }
        let scale = theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (v, flag) in self.boundary_vertex.iter().enumerate() {
            if *flag {
                let mag = theta[2 * v].hypot(theta[2 * v + 1]);
                if mag > 1e-12 * (1.0 + scale) {
                    return Err(Error::InvalidInput(format!(
                        "deformation field does not vanish on the external boundary (vertex {v}, |theta| = {mag:.3e})"
                    )));
                }
            }
        }
        let vertices: Vec<Vec2> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(v, p)| p + mu * Vec2::new(theta[2 * v], theta[2 * v + 1]))
            .collect();
        for (t, tri) in self.triangles.iter().enumerate() {
            let new_area = signed_area(&vertices, tri);
            let old_area = self.signed_area(t);
            if new_area < quality_floor * old_area {
                return Err(Error::QualityFailure {
                    triangle: t,
                    ratio: new_area / old_area,
                    floor: quality_floor,
                });
            }
        }
        Mesh::from_raw(vertices, self.triangles.clone(), self.region.clone())
    }
}

#[derive(Clone, Debug)]
pub struct VertexPatch {
    pub center: usize,
    pub tris: Vec<usize>,
    /// Local index of the center vertex within each patch triangle.
    pub center_local: Vec<usize>,
    /// Edges containing the center, interior to the domain.
    pub interior_edges: Vec<usize>,
    /// Patch-boundary edges (opposite the center), interior to the domain.
    pub patch_boundary_edges: Vec<usize>,
    /// Patch edges on the external boundary.
    pub external_edges: Vec<usize>,
}

impl VertexPatch {
    /// Value and gradient of the hat function of the center on patch
    /// triangle `i` (triangle-local constant gradient).
    pub fn hat(&self, mesh: &Mesh, i: usize, p: Vec2) -> (f64, Vec2) {
        let t = self.tris[i];
        let [a, b, c] = mesh.tri_vertices(t);
        let grads = p1_gradients(a, b, c);
        let lam = barycentric(a, b, c, p);
        let k = self.center_local[i];
        (lam[k], grads[k])
    }
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
pub fn barycentric(a: Vec2, b: Vec2, c: Vec2, p: Vec2) -> [f64; 3] {
    let d = 2.0 * tri_area(a, b, c);
    let l0 = ((b - p).perp(&(c - p))) / d;
    let l1 = ((c - p).perp(&(a - p))) / d;
    let l2 = 1.0 - l0 - l1;
    [l0, l1, l2]
}

/// Gradients of the three barycentric coordinates on triangle `(a, b, c)`.
pub fn p1_gradients(a: Vec2, b: Vec2, c: Vec2) -> [Vec2; 3] {
    let d = 2.0 * tri_area(a, b, c);
    [
        perp(c - b) / d,
        perp(a - c) / d,
        perp(b - a) / d,
    ]
}

fn perp(v: Vec2) -> Vec2 {
    // rotate by +90 degrees; for CCW triangles this makes grad(lambda_k)
    // point from the opposite edge toward vertex k
    Vec2::new(-v.y, v.x)
}

pub fn tri_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * (b - a).perp(&(c - a))
}

fn signed_area(vertices: &[Vec2], tri: &[usize; 3]) -> f64 {
    tri_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]])
}

fn shoelace(vertices: &[Vec2], loop_: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..loop_.len() {
        let p = vertices[loop_[i]];
        let q = vertices[loop_[(i + 1) % loop_.len()]];
        s += p.perp(&q);
    }
    0.5 * s
}

/// Chain directed edges into loops. Vertices may have at most one outgoing
/// and one incoming edge; chains that terminate on the domain boundary are
/// returned as open vertex paths (interfaces cut by the boundary), closed
/// chains as cycles.
fn extract_loops(
    nv: usize,
    directed: impl Iterator<Item = (usize, usize)>,
    what: &str,
) -> Result<Vec<Vec<usize>>> {
    let mut next = vec![usize::MAX; nv];
    let mut has_incoming = vec![false; nv];
    let mut involved = Vec::new();
    for (a, b) in directed {
        if next[a] != usize::MAX {
            return Err(Error::MeshInvariant(format!(
                "{what} edges do not form disjoint chains (vertex {a} has two outgoing edges)"
            )));
        }
        next[a] = b;
        has_incoming[b] = true;
        involved.push(a);
    }
    involved.sort_unstable();
    let mut visited = vec![false; nv];
    let mut loops = Vec::new();
    // open chains first (sources without an incoming edge), then cycles
    for pass in 0..2 {
        for &start in &involved {
            if visited[start] || (pass == 0 && has_incoming[start]) {
                continue;
            }
            let mut chain = Vec::new();
            let mut v = start;
            loop {
                if v != start && visited[v] {
                    return Err(Error::MeshInvariant(format!(
                        "{what} chains merge at vertex {v}"
                    )));
                }
                visited[v] = true;
                chain.push(v);
                let w = next[v];
                if w == usize::MAX {
                    break; // open chain ends
                }
                if w == start {
                    break; // cycle closes
                }
                v = w;
            }
            loops.push(chain);
        }
    }
    Ok(loops)
}

/// A coarse mesh, a fine mesh derived from it, and the element ancestry map.
#[derive(Clone)]
pub struct MeshPair {
    pub coarse: Arc<Mesh>,
    pub fine: Arc<Mesh>,
    /// For each fine triangle, the coarse triangle it descends from.
    pub ancestor: Vec<usize>,
}

impl MeshPair {
    /// One uniform bisection round of `coarse`, then extra refinement of the
    /// descendants of `extra_marked` (coarse indices).
    pub fn build(coarse: Arc<Mesh>, extra_marked: &[usize]) -> MeshPair {
        let all: Vec<usize> = (0..coarse.n_triangles()).collect();
        let (fine, anc) = refine::refine_tracked(&coarse, &all);
        let mut pair = MeshPair {
            coarse,
            fine: Arc::new(fine),
            ancestor: anc,
        };
        if !extra_marked.is_empty() {
            let marked: Vec<usize> = pair
                .ancestor
                .iter()
                .enumerate()
                .filter(|(_, a)| extra_marked.contains(a))
                .map(|(t, _)| t)
                .collect();
            pair = pair.refine_fine(&marked);
        }
        pair
    }

    /// Refine the fine mesh, keeping the ancestry map consistent.
    pub fn refine_fine(&self, marked: &[usize]) -> MeshPair {
        let (fine, anc) = refine::refine_tracked(&self.fine, marked);
        let ancestor = anc.iter().map(|&p| self.ancestor[p]).collect();
        MeshPair {
            coarse: self.coarse.clone(),
            fine: Arc::new(fine),
            ancestor,
        }
    }

    /// Interpolation of coarse P1 data at the fine vertices.
    pub fn prolongator(&self) -> Prolongator {
        let mut weights = Vec::with_capacity(self.fine.n_vertices());
        for fv in 0..self.fine.n_vertices() {
            let ft = self.fine.vertex_tris[fv][0];
            let ct = self.ancestor[ft];
            let [a, b, c] = self.coarse.triangles[ct];
            let lam = barycentric(
                self.coarse.vertices[a],
                self.coarse.vertices[b],
                self.coarse.vertices[c],
                self.fine.vertices[fv],
            );
            weights.push(([a, b, c], lam));
        }
        Prolongator { weights }
    }
}

/// Barycentric interpolation table from coarse to fine P1 vertex data.
pub struct Prolongator {
    weights: Vec<([usize; 3], [f64; 3])>,
}

impl Prolongator {
    pub fn prolong_scalar(&self, coarse: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|(vs, lam)| {
                lam[0] * coarse[vs[0]] + lam[1] * coarse[vs[1]] + lam[2] * coarse[vs[2]]
            })
            .collect()
    }

    /// Interleaved 2-vector data.
    pub fn prolong_vec2(&self, coarse: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (vs, lam) in &self.weights {
            for c in 0..2 {
                out.push(
                    lam[0] * coarse[2 * vs[0] + c]
                        + lam[1] * coarse[2 * vs[1] + c]
                        + lam[2] * coarse[2 * vs[2] + c],
                );
            }
        }
        out
    }

    /// Transpose action: restrict a fine linear-form vector to coarse dofs.
    pub fn restrict_vec2(&self, fine: &[f64], n_coarse_vertices: usize) -> Vec<f64> {
        let mut out = vec![0.0; 2 * n_coarse_vertices];
        for (fv, (vs, lam)) in self.weights.iter().enumerate() {
            for c in 0..2 {
                let f = fine[2 * fv + c];
                for k in 0..3 {
                    out[2 * vs[k] + c] += lam[k] * f;
                }
            }
        }
        out
    }
}
