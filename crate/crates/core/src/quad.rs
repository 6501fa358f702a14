//! Quadrature on the reference triangle {(x,y): x,y >= 0, x+y <= 1} and the
//! unit interval.
//!
//! Low degrees use standard symmetric rules; higher degrees fall back to a
//! collapsed (Duffy) tensor Gauss rule so any requested exactness is
//! available. Weights sum to the reference measure (1/2 for the triangle,
//! 1 for the interval).

use crate::Vec2;

#[derive(Clone, Debug)]
pub struct QuadRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    /// Symmetric rule on the reference triangle, exact for polynomials of
    /// total degree `degree`.
    pub fn triangle(degree: usize) -> QuadRule {
        match degree {
            0 | 1 => {
                QuadRule {
                    points: vec![Vec2::new(1.0 / 3.0, 1.0 / 3.0)],
                    weights: vec![0.5],
                    degree: 1,
                }
            }
            2 => {
                let a = 1.0 / 6.0;
                let b = 2.0 / 3.0;
                QuadRule {
                    points: vec![Vec2::new(a, a), Vec2::new(b, a), Vec2::new(a, b)],
                    weights: vec![1.0 / 6.0; 3],
                    degree: 2,
                }
            }
            3 | 4 => {
                // Dunavant degree 4, 6 points, all weights positive.
                let (a1, w1) = (0.445_948_490_915_965, 0.223_381_589_678_011);
                let (a2, w2) = (0.091_576_213_509_771, 0.109_951_743_655_322);
                let mut points = Vec::with_capacity(6);
                let mut weights = Vec::with_capacity(6);
                for &(a, w) in &[(a1, w1), (a2, w2)] {
                    let c = 1.0 - 2.0 * a;
                    points.push(Vec2::new(a, a));
                    points.push(Vec2::new(c, a));
                    points.push(Vec2::new(a, c));
                    weights.extend_from_slice(&[w * 0.5, w * 0.5, w * 0.5]);
                }
                QuadRule {
                    points,
                    weights,
                    degree: 4,
                }
            }
            5 => {
                // Dunavant degree 5, 7 points.
                let mut points = vec![Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
                let mut weights = vec![0.225 * 0.5];
                let (a1, w1) = (0.470_142_064_105_115, 0.132_394_152_788_506);
                let (a2, w2) = (0.101_286_507_323_456, 0.125_939_180_544_827);
                for &(a, w) in &[(a1, w1), (a2, w2)] {
                    let c = 1.0 - 2.0 * a;
                    points.push(Vec2::new(a, a));
                    points.push(Vec2::new(c, a));
                    points.push(Vec2::new(a, c));
                    weights.extend_from_slice(&[w * 0.5, w * 0.5, w * 0.5]);
                }
                QuadRule {
                    points,
                    weights,
                    degree: 5,
                }
            }
            d => Self::duffy(d),
        }
    }

    /// Collapsed tensor-product Gauss rule of arbitrary exactness degree.
    fn duffy(degree: usize) -> QuadRule {
        let nx = degree / 2 + 2; // 2*nx - 1 >= degree + 1
        let ny = degree / 2 + 1; // 2*ny - 1 >= degree
        let gx = gauss_legendre_unit(nx);
        let gy = gauss_legendre_unit(ny);
        let mut points = Vec::with_capacity(nx * ny);
        let mut weights = Vec::with_capacity(nx * ny);
        for (&u, &wu) in gx.0.iter().zip(&gx.1) {
            for (&v, &wv) in gy.0.iter().zip(&gy.1) {
                points.push(Vec2::new(u, v * (1.0 - u)));
                weights.push(wu * wv * (1.0 - u));
            }
        }
        QuadRule {
            points,
            weights,
            degree,
        }
    }

    /// Gauss rule on [0,1], exact for degree `degree` polynomials.
    pub fn edge(degree: usize) -> EdgeQuad {
        let n = degree / 2 + 1;
        let (points, weights) = gauss_legendre_unit(n);
        EdgeQuad {
            points,
            weights,
            degree: 2 * n - 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EdgeQuad {
    /// Parameter values in [0,1].
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Gauss-Legendre nodes and weights on [0,1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n starting from the Chebyshev-like guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        ws[i] = w;
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = w;
    }
    // map [-1,1] -> [0,1]
    for x in xs.iter_mut() {
        *x = 0.5 * (*x + 1.0);
    }
    for w in ws.iter_mut() {
        *w *= 0.5;
    }
    (xs, ws)
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(p: u32, q: u32) -> f64 {
        // \int_T x^p y^q = p! q! / (p+q+2)!
        let fact = |m: u32| (1..=m as u64).product::<u64>() as f64;
        fact(p) * fact(q) / fact(p + q + 2)
    }

    #[test]
    fn triangle_rules_integrate_monomials_exactly() {
        for degree in [1usize, 2, 4, 5, 6, 8, 10] {
            let rule = QuadRule::triangle(degree);
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 0.5).abs() < 1e-14, "degree {degree} weight sum {wsum}");
            for p in 0..=degree as u32 {
                for q in 0..=(degree as u32 - p) {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(pt, w)| w * pt.x.powi(p as i32) * pt.y.powi(q as i32))
                        .sum();
                    let exact = monomial_integral(p, q);
                    assert!(
                        (num - exact).abs() < 1e-14,
                        "degree {degree} monomial x^{p} y^{q}: {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn edge_rules_integrate_monomials_exactly() {
        for degree in [1usize, 3, 5, 9, 15] {
            let rule = QuadRule::edge(degree);
            assert!(rule.degree >= degree);
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-14);
            for p in 0..=rule.degree as u32 {
                let num: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(p as i32))
                    .sum();
                let exact = 1.0 / (p as f64 + 1.0);
                assert!(
                    (num - exact).abs() < 1e-14,
                    "degree {degree} monomial t^{p}: {num} vs {exact}"
                );
            }
        }
    }
}
