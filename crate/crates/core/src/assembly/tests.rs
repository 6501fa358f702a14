use super::*;
use crate::mesh::tests::{square_grid, validation_disk};
use crate::mesh::{Mesh, Region};
use crate::spaces::interpolate_broken;
use std::sync::Arc;

#[test]
fn swip_weights_formulas() {
    let (am, ap) = swip_weights(3.0, 3.0, WeightRule::HarmonicSwip).unwrap();
    assert_eq!((am, ap), (0.5, 0.5));
    let (am, ap) = swip_weights(1.0, 10.0, WeightRule::HarmonicSwip).unwrap();
    assert!((am - 10.0 / 11.0).abs() < 1e-15);
    assert!((ap - 1.0 / 11.0).abs() < 1e-15);
    assert!((am + ap - 1.0).abs() < 1e-15);
    assert!(swip_weights(-1.0, 2.0, WeightRule::HarmonicSwip).is_err());
}

#[test]
fn swip_penalty_formulas() {
    assert!((swip_penalty(1.0, 1.0, 10.0, WeightRule::HarmonicSwip) - 5.0).abs() < 1e-15);
    assert!(
        (swip_penalty(1.0, 10.0, 10.0, WeightRule::HarmonicSwip) - 100.0 / 11.0).abs() < 1e-14
    );
    // symmetric in the two conductivities
    assert_eq!(
        swip_penalty(2.0, 7.0, 10.0, WeightRule::HarmonicSwip),
        swip_penalty(7.0, 2.0, 10.0, WeightRule::HarmonicSwip)
    );
}

fn reference_triangle() -> Arc<Mesh> {
    let vertices = vec![
        crate::Vec2::new(0.0, 0.0),
        crate::Vec2::new(1.0, 0.0),
        crate::Vec2::new(0.0, 1.0),
    ];
    Arc::new(Mesh::from_raw(vertices, vec![[0, 1, 2]], vec![Region::Background]).unwrap())
}

#[test]
fn cg_single_triangle_matches_hand_matrix() {
    let mesh = reference_triangle();
    let mat = cg_matrix(&mesh, &[1.0], 1);
    // stiffness of the unit reference triangle plus its mass matrix
    let stiff = [
        [1.0, -0.5, -0.5],
        [-0.5, 0.5, 0.0],
        [-0.5, 0.0, 0.5],
    ];
    let mass_scale = 1.0 / 24.0;
    let mass = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
    for i in 0..3 {
        for j in 0..3 {
            let expect = stiff[i][j] + mass_scale * mass[i][j];
            assert!(
                (mat.get(i, j) - expect).abs() < 1e-13,
                "entry ({i},{j}): {} vs {expect}",
                mat.get(i, j)
            );
        }
    }
}

#[test]
fn cg_zero_neumann_data_gives_zero_solution() {
    let mesh = Arc::new(validation_disk(1.0));
    let k = vec![1.0; mesh.n_triangles()];
    let sys = assemble_cg(&mesh, &k, 1, CgBc::Neumann { g: &|_| 0.0 });
    let x = solve(&sys).unwrap();
    assert!(x.iter().all(|&v| v == 0.0));
}

#[test]
fn cg_dirichlet_solver_consistency() {
    let mesh = Arc::new(validation_disk(0.9));
    let k: Vec<f64> = mesh
        .region
        .iter()
        .map(|r| if *r == Region::Inclusion { 10.0 } else { 1.0 })
        .collect();
    let sys = assemble_cg(&mesh, &k, 1, CgBc::Dirichlet { u_d: &|_| 2.5 });
    let x = solve(&sys).unwrap();
    let r = residual(&sys.matrix, &x, &sys.rhs);
    assert!(norm(&r) <= 1e-10 * norm(&sys.rhs).max(1.0));
    // boundary nodes carry the data exactly
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            assert!((x[v] - 2.5).abs() < 1e-12);
        }
    }
}

#[test]
fn matrices_are_symmetric() {
    let mesh = Arc::new(validation_disk(1.1));
    let k: Vec<f64> = mesh
        .region
        .iter()
        .map(|r| if *r == Region::Inclusion { 10.0 } else { 1.0 })
        .collect();
    let params = DgParams::default();
    assert!(cg_matrix(&mesh, &k, 2).symmetry_defect() < 1e-12);
    assert!(dg_matrix(&mesh, &k, 1, 1.0, &params).symmetry_defect() < 1e-12);
    assert!(dg_matrix(&mesh, &k, 1, 0.0, &params).symmetry_defect() < 1e-12);
    assert!(dg_matrix(&mesh, &k, 2, 0.0, &params).symmetry_defect() < 1e-12);
}

#[test]
fn assembly_is_deterministic() {
    let mesh = Arc::new(validation_disk(1.0));
    let k = vec![1.0; mesh.n_triangles()];
    let a = dg_matrix(&mesh, &k, 2, 0.0, &DgParams::default());
    let b = dg_matrix(&mesh, &k, 2, 0.0, &DgParams::default());
    assert_eq!(a.indices, b.indices);
    assert_eq!(a.data, b.data);
}

#[test]
fn dg_single_triangle_neumann_equals_cg() {
    let mesh = reference_triangle();
    let cg = cg_matrix(&mesh, &[2.0], 1);
    let dg = dg_matrix(&mesh, &[2.0], 1, 1.0, &DgParams::default());
    for i in 0..3 {
        for j in 0..3 {
            assert!((cg.get(i, j) - dg.get(i, j)).abs() < 1e-14);
        }
    }
}

#[test]
fn dg_energy_of_continuous_field_matches_cg() {
    // jump terms vanish on a globally continuous function, so the dG energy
    // reduces to the conforming one
    let mesh = Arc::new(square_grid(6, true));
    let k: Vec<f64> = mesh
        .region
        .iter()
        .map(|r| if *r == Region::Inclusion { 10.0 } else { 1.0 })
        .collect();
    let f = |p: crate::Vec2| 1.0 + p.x + 0.5 * p.y * p.x;
    let u_cg = crate::spaces::interpolate_cg(&mesh, 2, f);
    let u_dg = interpolate_broken(&mesh, 2, f);
    let a_cg = cg_matrix(&mesh, &k, 2);
    let a_dg = dg_matrix(&mesh, &k, 2, 1.0, &DgParams::default());
    let e_cg: f64 = {
        let ax = a_cg.matvec(&u_cg.coeffs);
        u_cg.coeffs.iter().zip(&ax).map(|(a, b)| a * b).sum()
    };
    let e_dg: f64 = {
        let ax = a_dg.matvec(&u_dg.coeffs);
        u_dg.coeffs.iter().zip(&ax).map(|(a, b)| a * b).sum()
    };
    assert!(
        (e_cg - e_dg).abs() < 1e-11 * e_cg.abs().max(1.0),
        "cg {e_cg} vs dg {e_dg}"
    );
}

#[test]
fn swip_manufactured_interface_solution_converges() {
    // u = sin(x) / k(x), with k jumping across x = 0: u and k u_x are both
    // continuous, f = -div(k grad u) + u, g = k grad u . n
    let (k_in, k_out) = (5.0, 1.0);
    let exact = |p: crate::Vec2, inside: bool| p.x.sin() / if inside { k_in } else { k_out };
    let params = DgParams::default();
    let mut errs = Vec::new();
    for n in [4usize, 8, 16] {
        let mesh = Arc::new(square_grid(n, true));
        let k: Vec<f64> = mesh
            .region
            .iter()
            .map(|r| if *r == Region::Inclusion { k_in } else { k_out })
            .collect();
        let f = |t: usize, p: crate::Vec2| -> (crate::Vec2, f64) {
            let kt = if p.x < 0.0 { k_in } else { k_out };
            let _ = t;
            (crate::Vec2::zeros(), p.x.sin() + p.x.sin() / kt)
        };
        let g = |p: crate::Vec2| -> f64 {
            if (p.x - 1.0).abs() < 1e-12 {
                p.x.cos()
            } else if (p.x + 1.0).abs() < 1e-12 {
                -p.x.cos()
            } else {
                0.0
            }
        };
        let matrix = dg_matrix(&mesh, &k, 1, 1.0, &params);
        let mut rhs = dg_neumann_rhs(&mesh, 1, &g);
        for (r, v) in rhs.iter_mut().zip(volume_rhs(&mesh, 1, true, 6, &f)) {
            *r += v;
        }
        let sol = solve(&SparseSystem { matrix, rhs }).unwrap();
        let field = crate::spaces::Field::from_coeffs(
            crate::spaces::SpaceDescriptor::broken(1),
            mesh.clone(),
            sol,
        );
        // broken H1 seminorm error
        let rule = crate::quad::QuadRule::triangle(6);
        let mut err2 = 0.0;
        for t in 0..mesh.n_triangles() {
            let [a, b, c] = mesh.tri_vertices(t);
            let jac = 2.0 * mesh.area(t);
            let inside = mesh.region[t] == Region::Inclusion;
            let kt = if inside { k_in } else { k_out };
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let p = a + (b - a) * q.x + (c - a) * q.y;
                let (_, grad) = field.eval_scalar(t, &[*q])[0];
                let gex = crate::Vec2::new(p.x.cos() / kt, 0.0);
                let _ = exact;
                err2 += w * jac * (grad - gex).norm_squared();
            }
        }
        errs.push(err2.sqrt());
    }
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 0.75, "H1 rate {rate}, errors {errs:?}");
    }
}

#[test]
fn solve_small_systems() {
    let ident = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
    let x = solve(&SparseSystem {
        matrix: ident,
        rhs: vec![3.0, -1.0, 0.5],
    })
    .unwrap();
    assert_eq!(x, vec![3.0, -1.0, 0.5]);

    let a = CsrMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
    let x = solve(&SparseSystem {
        matrix: a,
        rhs: vec![3.0, 3.0],
    })
    .unwrap();
    assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
}

#[test]
fn solve_assembled_spd_system_to_tolerance() {
    let mesh = Arc::new(validation_disk(1.3));
    let k = vec![1.0; mesh.n_triangles()];
    let mat = cg_matrix(&mesh, &k, 1);
    let rhs: Vec<f64> = (0..mat.n).map(|i| ((i * 31 + 7) % 13) as f64 - 6.0).collect();
    let fact = Factorization::new(mat).unwrap();
    let x = fact.solve(&rhs).unwrap();
    let r = residual(fact.matrix(), &x, &rhs);
    assert!(norm(&r) <= 1e-10 * norm(&rhs));
}

#[test]
fn patch_saddle_solver_against_dense_oracle() {
    // zero rhs
    let a = DMatrix::<f64>::from_fn(5, 5, |i, j| {
        if i == j {
            3.0
        } else {
            1.0 / (1.0 + (i as f64 - j as f64).abs())
        }
    });
    let zero = solve_patch_saddle(a.clone(), DVector::zeros(5)).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));

    // saddle-shaped block system vs full-pivot dense oracle
    let m = DMatrix::<f64>::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 });
    let b = DMatrix::<f64>::from_fn(2, 4, |i, j| (i + j) as f64 * 0.5 - 0.7);
    let mut sys = DMatrix::<f64>::zeros(6, 6);
    sys.view_mut((0, 0), (4, 4)).copy_from(&m);
    sys.view_mut((4, 0), (2, 4)).copy_from(&b);
    sys.view_mut((0, 4), (4, 2)).copy_from(&(-b.transpose()));
    let rhs = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
    let x = solve_patch_saddle(sys.clone(), rhs.clone()).unwrap();
    let oracle = sys.full_piv_lu().solve(&rhs).unwrap();
    assert!((x - oracle).norm() < 1e-11);
}

#[test]
fn quadrature_exactness_floor() {
    // the volume rules used in assembly are exact to degree >= 4 and the
    // edge rules to degree >= 5
    let vol = QuadRule::triangle(4);
    assert!(vol.degree >= 4);
    let edge = QuadRule::edge(5);
    assert!(edge.degree >= 5);
}
