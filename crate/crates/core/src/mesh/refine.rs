//! Newest-vertex bisection with conformity closure.
//!
//! The refinement edge of a triangle is `(v[0], v[1])`. Children inherit
//! region labels and ancestry; the initial assignment (longest edge first,
//! set up by the generator) keeps the closure recursion short.

use super::{Mesh, Region};
use crate::Vec2;
use std::collections::HashMap;

/// Bisect every marked triangle at least once, closing hanging nodes.
pub fn refine(mesh: &Mesh, marked: &[usize]) -> Mesh {
    refine_tracked(mesh, marked).0
}

/// Same as [`refine`], also returning for each new triangle the index of the
/// original triangle it descends from.
pub(crate) fn refine_tracked(mesh: &Mesh, marked: &[usize]) -> (Mesh, Vec<usize>) {
    let mut work = Work {
        verts: mesh.vertices.clone(),
        tris: mesh.triangles.clone(),
        region: mesh.region.clone(),
        ancestor: (0..mesh.n_triangles()).collect(),
        alive: vec![true; mesh.n_triangles()],
        edge_tri: HashMap::with_capacity(mesh.n_edges() * 2),
    };
    for (_t, tri) in work.tris.iter().enumerate() {
        for k in 0..3 {
            let key = key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
            work.edge_tri.entry(key).or_insert([None, None]);
        }
    }
    // registration pass (separate to appease the borrow checker)
    for t in 0..work.tris.len() {
        work.register(t);
    }

    let mut order: Vec<usize> = marked.to_vec();
    order.sort_unstable();
    order.dedup();
    for t in order {
        assert!(t < mesh.n_triangles(), "marked triangle out of range");
        if work.alive[t] {
            work.bisect_with_closure(t);
        }
    }

    let mut tris = Vec::new();
    let mut region = Vec::new();
    let mut ancestor = Vec::new();
    for t in 0..work.tris.len() {
        if work.alive[t] {
            tris.push(work.tris[t]);
            region.push(work.region[t]);
            ancestor.push(work.ancestor[t]);
        }
    }
    let mesh = Mesh::from_raw(work.verts, tris, region)
        .expect("bisection preserved mesh invariants");
    (mesh, ancestor)
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Work {
    verts: Vec<Vec2>,
    tris: Vec<[usize; 3]>,
    region: Vec<Region>,
    ancestor: Vec<usize>,
    alive: Vec<bool>,
    edge_tri: HashMap<(usize, usize), [Option<usize>; 2]>,
}

impl Work {
    fn register(&mut self, t: usize) {
        let tri = self.tris[t];
        for k in 0..3 {
            let slot = self
                .edge_tri
                .entry(key(tri[(k + 1) % 3], tri[(k + 2) % 3]))
                .or_insert([None, None]);
            if slot[0].is_none() {
                slot[0] = Some(t);
            } else {
                assert!(slot[1].is_none(), "edge shared by three triangles");
                slot[1] = Some(t);
            }
        }
    }

    fn unregister(&mut self, t: usize) {
        let tri = self.tris[t];
        for k in 0..3 {
            let slot = self
                .edge_tri
                .get_mut(&key(tri[(k + 1) % 3], tri[(k + 2) % 3]))
                .unwrap();
            if slot[0] == Some(t) {
                slot[0] = slot[1];
            }
            slot[1] = None;
        }
    }

    fn neighbor_across(&self, t: usize, e: (usize, usize)) -> Option<usize> {
        let slot = self.edge_tri.get(&e)?;
        match *slot {
            [Some(a), Some(b)] => {
                if a == t {
                    Some(b)
                } else if b == t {
                    Some(a)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Bisect `t0`, recursively bisecting neighbors first until the pair
    /// across the refinement edge is compatible.
    fn bisect_with_closure(&mut self, t0: usize) {
        let mut stack = vec![t0];
        while let Some(&t) = stack.last() {
            if !self.alive[t] {
                stack.pop();
                continue;
            }
            let [a, b, _] = self.tris[t];
            let e = key(a, b);
            match self.neighbor_across(t, e) {
                None => {
                    self.bisect_pair(t, None);
                    stack.pop();
                }
                Some(n) => {
                    let [na, nb, _] = self.tris[n];
                    if key(na, nb) == e {
                        self.bisect_pair(t, Some(n));
                        stack.pop();
                    } else {
                        assert!(
                            stack.len() <= self.tris.len() + 8,
                            "refinement closure did not terminate"
                        );
                        stack.push(n);
                    }
                }
            }
        }
    }

    /// Split the refinement edge of `t` (shared with the compatible
    /// neighbor `n`, if any) at its midpoint.
    fn bisect_pair(&mut self, t: usize, n: Option<usize>) {
        let [a, b, c] = self.tris[t];
        let m = self.verts.len();
        self.verts.push(0.5 * (self.verts[a] + self.verts[b]));
        self.unregister(t);
        self.alive[t] = false;
        self.spawn([c, a, m], t);
        self.spawn([b, c, m], t);
        if let Some(n) = n {
            let [na, nb, nc] = self.tris[n]; // directed (b, a, c') by conformity
            debug_assert_eq!(key(na, nb), key(a, b));
            self.unregister(n);
            self.alive[n] = false;
            self.spawn([nc, na, m], n);
            self.spawn([nb, nc, m], n);
        }
    }

    fn spawn(&mut self, tri: [usize; 3], parent: usize) {
        let t = self.tris.len();
        self.tris.push(tri);
        self.region.push(self.region[parent]);
        self.ancestor.push(self.ancestor[parent]);
        self.alive.push(true);
        self.register(t);
    }
}
