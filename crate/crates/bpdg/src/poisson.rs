//! Charge density, current, and the closed-form 1D Poisson solutions.
//!
//! Sources are piecewise polynomials on the x-mesh, so Φ and E follow from
//! exact antiderivatives accumulated left to right.

use crate::band::BandModel;
use crate::error::{Error, Result};
use crate::field::DgField;
use crate::mesh::TensorMesh;
use crate::quadrature::{legendre, QuadratureRule};
use std::f64::consts::PI;

/// Relative tolerance of the periodic compatibility condition.
pub const TOL_COMPAT: f64 = 1e-10;

/// Per-cell polynomials in the local offset s = x − x_left.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    pub edges: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            r[i + j] += x * y;
        }
    }
    r
}

fn poly_add_scaled(a: &mut Vec<f64>, b: &[f64], s: f64) {
    if a.len() < b.len() {
        a.resize(b.len(), 0.0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

#[inline]
fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * s + v)
}

impl PiecewisePoly {
    pub fn zero(edges: &[f64]) -> Self {
        PiecewisePoly {
            edges: edges.to_vec(),
            coefs: vec![vec![0.0]; edges.len() - 1],
        }
    }

    pub fn constant(edges: &[f64], v: f64) -> Self {
        PiecewisePoly {
            edges: edges.to_vec(),
            coefs: vec![vec![v]; edges.len() - 1],
        }
    }

    /// Builds cell polynomials from Legendre coefficients on each cell's reference interval.
    pub fn from_legendre(edges: &[f64], leg: &[Vec<f64>]) -> Self {
        let coefs = leg
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let h = edges[i + 1] - edges[i];
                let xi = vec![-1.0, 2.0 / h];
                let mut p_prev = vec![1.0];
                let mut p_cur = xi.clone();
                let mut out = vec![0.0; c.len().max(1)];
                poly_add_scaled(&mut out, &p_prev, c[0]);
                if c.len() > 1 {
                    poly_add_scaled(&mut out, &p_cur, c[1]);
                }
                for n in 1..c.len().saturating_sub(1) {
                    let nf = n as f64;
                    let mut next = poly_mul(&xi, &p_cur);
                    for v in &mut next {
                        *v *= (2.0 * nf + 1.0) / (nf + 1.0);
                    }
                    poly_add_scaled(&mut next, &p_prev, -nf / (nf + 1.0));
                    poly_add_scaled(&mut out, &next, c[n + 1]);
                    p_prev = p_cur;
                    p_cur = next;
                }
                out
            })
            .collect();
        PiecewisePoly {
            edges: edges.to_vec(),
            coefs,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn degree(&self) -> usize {
        self.coefs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    #[inline]
    pub fn eval_in(&self, i: usize, x: f64) -> f64 {
        horner(&self.coefs[i], x - self.edges[i])
    }

    /// Evaluation at x; a point on an interior edge uses the lower cell.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let i = TensorMesh::locate(&self.edges, x)
            .ok_or_else(|| Error::Domain(format!("x = {x} outside [{}, {}]", self.edges[0], self.edges[self.n_cells()])))?;
        Ok(self.eval_in(i, x))
    }

    pub fn derivative(&self) -> Self {
        let coefs = self
            .coefs
            .iter()
            .map(|c| {
                if c.len() <= 1 {
                    vec![0.0]
                } else {
                    c.iter().enumerate().skip(1).map(|(j, v)| j as f64 * v).collect()
                }
            })
            .collect();
        PiecewisePoly {
            edges: self.edges.clone(),
            coefs,
        }
    }

    /// Continuous antiderivative with value `start` at the left end.
    pub fn antiderivative(&self, start: f64) -> Self {
        let mut acc = start;
        let mut coefs = Vec::with_capacity(self.n_cells());
        for (i, c) in self.coefs.iter().enumerate() {
            let mut a = vec![acc];
            for (j, v) in c.iter().enumerate() {
                a.push(v / (j as f64 + 1.0));
            }
            acc = horner(&a, self.edges[i + 1] - self.edges[i]);
            coefs.push(a);
        }
        PiecewisePoly {
            edges: self.edges.clone(),
            coefs,
        }
    }

    pub fn integral(&self) -> f64 {
        let f = self.antiderivative(0.0);
        f.eval_in(self.n_cells() - 1, self.edges[self.n_cells()])
    }

    /// ∫ self·g over the domain, by Gauss quadrature with n points per cell.
    pub fn integrate_with(&self, n: usize, g: impl Fn(f64) -> f64) -> f64 {
        let rule = QuadratureRule::gauss_legendre(n).expect("valid rule");
        (0..self.n_cells())
            .map(|i| rule.integrate_on(self.edges[i], self.edges[i + 1], |x| self.eval_in(i, x) * g(x)))
            .sum()
    }

    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        let coefs = self
            .coefs
            .iter()
            .zip(&other.coefs)
            .map(|(a, b)| {
                let mut r = a.clone();
                poly_add_scaled(&mut r, b, s);
                r
            })
            .collect();
        PiecewisePoly {
            edges: self.edges.clone(),
            coefs,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        PiecewisePoly {
            edges: self.edges.clone(),
            coefs: self.coefs.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        }
    }

    /// Adds the global polynomial a0 + a1 x (in absolute x).
    pub fn add_affine(&self, a0: f64, a1: f64) -> Self {
        let coefs = self
            .coefs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut r = c.clone();
                poly_add_scaled(&mut r, &[a0 + a1 * self.edges[i], a1], 1.0);
                r
            })
            .collect();
        PiecewisePoly {
            edges: self.edges.clone(),
            coefs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DopingKind {
    Uniform(f64),
    /// n⁺ outside [left, right], n inside.
    NPlusNNPlus { n_plus: f64, n: f64, junctions: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopingProfile {
    pub kind: DopingKind,
    pub q: f64,
    pub epsilon_perm: f64,
}

impl DopingProfile {
    pub fn new(kind: DopingKind, q: f64, epsilon_perm: f64) -> Result<Self> {
        let ok = match &kind {
            DopingKind::Uniform(v) => *v >= 0.0,
            DopingKind::NPlusNNPlus { n_plus, n, junctions } => *n_plus >= 0.0 && *n >= 0.0 && junctions.0 <= junctions.1,
        };
        if !ok {
            return Err(Error::Config("doping must be nonnegative with ordered junctions".into()));
        }
        if !(q > 0.0 && epsilon_perm > 0.0) {
            return Err(Error::Config("q and epsilon_perm must be positive".into()));
        }
        Ok(DopingProfile { kind, q, epsilon_perm })
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            DopingKind::Uniform(v) => v,
            DopingKind::NPlusNNPlus { n_plus, n, junctions } => {
                if x < junctions.0 || x > junctions.1 {
                    n_plus
                } else {
                    n
                }
            }
        }
    }

    /// q/ε.
    pub fn coupling(&self) -> f64 {
        self.q / self.epsilon_perm
    }

    /// L² projection onto per-cell polynomials of the given degree, splitting cells at junctions.
    pub fn to_piecewise(&self, edges: &[f64], degree: usize) -> PiecewisePoly {
        let rule = QuadratureRule::gauss_legendre(degree + 4).expect("valid rule");
        let breaks: Vec<f64> = match self.kind {
            DopingKind::Uniform(_) => vec![],
            DopingKind::NPlusNNPlus { junctions, .. } => vec![junctions.0, junctions.1],
        };
        let leg: Vec<Vec<f64>> = (0..edges.len() - 1)
            .map(|i| {
                let (a, b) = (edges[i], edges[i + 1]);
                let mut pts = vec![a];
                pts.extend(breaks.iter().copied().filter(|&v| v > a && v < b));
                pts.push(b);
                (0..=degree)
                    .map(|d| {
                        let mut s = 0.0;
                        for w in pts.windows(2) {
                            let mid = 0.5 * (w[0] + w[1]);
                            let val = self.value(mid);
                            s += rule.integrate_on(w[0], w[1], |x| val * legendre(d, 2.0 * (x - a) / (b - a) - 1.0).0);
                        }
                        s * (2 * d + 1) as f64 / (b - a)
                    })
                    .collect()
            })
            .collect();
        PiecewisePoly::from_legendre(edges, &leg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoissonBc {
    Dirichlet { phi0: f64 },
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSolution {
    pub phi: PiecewisePoly,
    pub e: PiecewisePoly,
    pub bc: PoissonBc,
    /// ∫(N − ρ) removed before a neutralized periodic solve; zero otherwise.
    pub imbalance: f64,
}

impl PotentialSolution {
    pub fn zero(edges: &[f64], bc: PoissonBc) -> Self {
        PotentialSolution {
            phi: PiecewisePoly::zero(edges),
            e: PiecewisePoly::zero(edges),
            bc,
            imbalance: 0.0,
        }
    }

    /// A prescribed potential Φ = Σ a_j x^j, E = −Φ'.
    pub fn from_global_poly(edges: &[f64], a: &[f64], bc: PoissonBc) -> Self {
        let coefs = (0..edges.len() - 1)
            .map(|i| {
                // re-expand around the left edge
                let x0 = edges[i];
                let mut out = vec![0.0; a.len().max(1)];
                for (j, &aj) in a.iter().enumerate() {
                    let mut binom = 1.0;
                    for r in 0..=j {
                        out[r] += aj * binom * x0.powi((j - r) as i32);
                        binom = binom * (j - r) as f64 / (r + 1) as f64;
                    }
                }
                out
            })
            .collect();
        let phi = PiecewisePoly {
            edges: edges.to_vec(),
            coefs,
        };
        let e = phi.derivative().scaled(-1.0);
        PotentialSolution { phi, e, bc, imbalance: 0.0 }
    }
}

/// Source s = N − ρ.
fn source(rho: &PiecewisePoly, doping: &PiecewisePoly) -> Result<PiecewisePoly> {
    if rho.edges != doping.edges {
        return Err(Error::MeshMismatch("density and doping live on different x-meshes".into()));
    }
    Ok(doping.add_scaled(rho, -1.0))
}

/// Dirichlet problem −Φ'' = (q/ε)(N − ρ), Φ(0) = 0, Φ(L) = Φ₀.
pub fn solve_dirichlet(rho: &PiecewisePoly, doping: &PiecewisePoly, coupling: f64, phi0: f64) -> Result<PotentialSolution> {
    let s = source(rho, doping)?;
    let len = *s.edges.last().unwrap();
    let s1 = s.antiderivative(0.0);
    let s2 = s1.antiderivative(0.0);
    let s2l = s2.eval_in(s2.n_cells() - 1, len);
    let slope = (phi0 + coupling * s2l) / len;
    let phi = s2.scaled(-coupling).add_affine(0.0, slope);
    let e = s1.scaled(coupling).add_affine(-slope, 0.0);
    Ok(PotentialSolution {
        phi,
        e,
        bc: PoissonBc::Dirichlet { phi0 },
        imbalance: 0.0,
    })
}

fn periodic_from_source(s: &PiecewisePoly, coupling: f64, imbalance: f64) -> PotentialSolution {
    let len = *s.edges.last().unwrap();
    let s1 = s.antiderivative(0.0);
    let s2 = s1.antiderivative(0.0);
    let s2l = s2.eval_in(s2.n_cells() - 1, len);
    let nq = s.degree() / 2 + 3;
    let b = s.integrate_with(nq, |x| (x - len) * x / (2.0 * len));
    let phi = s2.scaled(-coupling).add_affine(coupling * b, coupling * s2l / len);
    let e = s1.scaled(coupling).add_affine(-coupling * s2l / len, 0.0);
    PotentialSolution {
        phi,
        e,
        bc: PoissonBc::Periodic,
        imbalance,
    }
}

/// Zero-average periodic problem; rejects sources violating ∫(N − ρ) = 0.
pub fn solve_periodic(rho: &PiecewisePoly, doping: &PiecewisePoly, coupling: f64) -> Result<PotentialSolution> {
    let s = source(rho, doping)?;
    let imbalance = s.integral();
    let scale = doping.integral().abs().max(f64::MIN_POSITIVE);
    if imbalance.abs() > TOL_COMPAT * scale {
        return Err(Error::Compatibility {
            imbalance,
            tolerance: TOL_COMPAT * scale,
        });
    }
    Ok(periodic_from_source(&s, coupling, 0.0))
}

/// Periodic solve after subtracting the mean of N − ρ; the removed imbalance is recorded.
pub fn solve_periodic_neutralized(rho: &PiecewisePoly, doping: &PiecewisePoly, coupling: f64) -> Result<PotentialSolution> {
    let s = source(rho, doping)?;
    let imbalance = s.integral();
    let len = *s.edges.last().unwrap() - s.edges[0];
    let s = s.add_affine(-imbalance / len, 0.0);
    Ok(periodic_from_source(&s, coupling, imbalance))
}

/// Legendre x-coefficients of 2π ∫∫ w(p, μ) f p² dp dμ per x-cell, where
/// `pm[k][b]` = ∫ w_p P_b p² dp and `mm[m][c]` = ∫ w_μ P_c dμ.
fn x_moment(field: &DgField, pm: &[Vec<f64>], mm: &[Vec<f64>]) -> PiecewisePoly {
    let sp = &field.space;
    let mesh = &sp.mesh;
    let nb1 = sp.nb1;
    let leg: Vec<Vec<f64>> = (0..mesh.n_x())
        .map(|i| {
            let mut out = vec![0.0; nb1];
            for k in 0..mesh.n_p() {
                for m in 0..mesh.n_mu() {
                    let c = field.cell(mesh.cell_index(i, k, m));
                    for (a, o) in out.iter_mut().enumerate() {
                        for b in 0..nb1 {
                            for cc in 0..nb1 {
                                *o += c[sp.mode(a, b, cc)] * pm[k][b] * mm[m][cc];
                            }
                        }
                    }
                }
            }
            out.iter().map(|v| 2.0 * PI * v).collect()
        })
        .collect();
    PiecewisePoly::from_legendre(&mesh.x_edges, &leg)
}

/// ρ(x) = 2π ∫∫ f p² dp dμ.
pub fn compute_density(field: &DgField) -> PiecewisePoly {
    let sp = &field.space;
    let mesh = &sp.mesh;
    let mm: Vec<Vec<f64>> = (0..mesh.n_mu())
        .map(|m| (0..sp.nb1).map(|c| if c == 0 { mesh.dmu(m) } else { 0.0 }).collect())
        .collect();
    x_moment(field, &sp.p_moments, &mm)
}

/// J(x) = 2π ∫∫ v(p) μ f p² dp dμ.
pub fn current(field: &DgField, band: &BandModel) -> PiecewisePoly {
    let sp = &field.space;
    let mesh = &sp.mesh;
    let rule = &sp.proj_rule;
    let pm: Vec<Vec<f64>> = (0..mesh.n_p())
        .map(|k| {
            (0..sp.nb1)
                .map(|b| {
                    rule.integrate(|xi| {
                        let p = mesh.p_at(k, xi);
                        0.5 * mesh.dp(k) * band.v(p) * p * p * legendre(b, xi).0
                    })
                })
                .collect()
        })
        .collect();
    let mm: Vec<Vec<f64>> = (0..mesh.n_mu())
        .map(|m| {
            (0..sp.nb1)
                .map(|c| rule.integrate(|xi| 0.5 * mesh.dmu(m) * mesh.mu_at(m, xi) * legendre(c, xi).0))
                .collect()
        })
        .collect();
    x_moment(field, &pm, &mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DgSpace;

    fn edges(n: usize, l: f64) -> Vec<f64> {
        (0..=n).map(|j| l * j as f64 / n as f64).collect()
    }

    #[test]
    fn legendre_conversion() {
        let e = edges(2, 1.0);
        let pp = PiecewisePoly::from_legendre(&e, &[vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 0.0]]);
        let x = 0.3;
        let xi = 2.0 * x / 0.5 - 1.0;
        let expect = 1.0 + 2.0 * xi + 3.0 * 0.5 * (3.0 * xi * xi - 1.0);
        assert!((pp.eval(x).unwrap() - expect).abs() < 1e-13);
        assert!((pp.eval(0.7).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_zero_source() {
        let e = edges(4, 1.0);
        let n = PiecewisePoly::constant(&e, 2.0);
        let sol = solve_dirichlet(&n, &n, 1.0, 1.0).unwrap();
        for &x in &[0.0, 0.13, 0.5, 0.99, 1.0] {
            assert!((sol.phi.eval(x).unwrap() - x).abs() < 1e-14);
            assert!((sol.e.eval(x).unwrap() + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_constant_source() {
        let e = edges(5, 2.0);
        let c = 0.7;
        let qe = 3.0;
        let n = PiecewisePoly::constant(&e, 1.0 + c);
        let rho = PiecewisePoly::constant(&e, 1.0);
        let sol = solve_dirichlet(&rho, &n, qe, 0.0).unwrap();
        for &x in &[0.0, 0.4, 1.1, 2.0] {
            assert!((sol.phi.eval(x).unwrap() - qe * c * x * (2.0 - x) / 2.0).abs() < 1e-13);
            assert!((sol.e.eval(x).unwrap() - qe * c * (x - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn periodic_cosine() {
        // N − ρ = A cos(2πx/L), projected to quadratics on a fine mesh
        let l = 1.0;
        let e = edges(64, l);
        let a = 0.3;
        let qe = 2.0;
        let leg: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let rule = QuadratureRule::gauss_legendre(8).unwrap();
                (0..3)
                    .map(|d| {
                        rule.integrate_on(e[i], e[i + 1], |x| {
                            (1.0 + a * (2.0 * PI * x / l).cos()) * legendre(d, 2.0 * (x - e[i]) / (e[i + 1] - e[i]) - 1.0).0
                        }) * (2 * d + 1) as f64
                            / (e[i + 1] - e[i])
                    })
                    .collect()
            })
            .collect();
        let n = PiecewisePoly::from_legendre(&e, &leg);
        let rho = PiecewisePoly::constant(&e, 1.0);
        let sol = solve_periodic(&rho, &n, qe).unwrap();
        let k2 = (l / (2.0 * PI)).powi(2);
        for &x in &[0.05, 0.31, 0.5, 0.77] {
            let exact = qe * a * k2 * (2.0 * PI * x / l).cos();
            assert!((sol.phi.eval(x).unwrap() - exact).abs() < 1e-6);
        }
        assert!(sol.phi.integral().abs() < 1e-12);
    }

    #[test]
    fn periodic_rejects_imbalance() {
        let e = edges(4, 2.0);
        let n = PiecewisePoly::constant(&e, 1.5);
        let rho = PiecewisePoly::constant(&e, 1.0);
        match solve_periodic(&rho, &n, 1.0) {
            Err(Error::Compatibility { imbalance, .. }) => assert!((imbalance - 1.0).abs() < 1e-14),
            other => panic!("expected compatibility error, got {other:?}"),
        }
        let ok = solve_periodic_neutralized(&rho, &n, 1.0).unwrap();
        assert!((ok.imbalance - 1.0).abs() < 1e-14);
        assert!(ok.phi.eval(0.7).unwrap().abs() < 1e-14);
    }

    #[test]
    fn density_of_constant() {
        let sp = DgSpace::new(TensorMesh::build(3, 4, 2, 1.0, 1.5).unwrap(), 1).unwrap();
        let f = DgField::project(&sp, |_, _, _| 0.8);
        let rho = compute_density(&f);
        let expect = 2.0 * PI * 0.8 * 1.5f64.powi(3) / 3.0 * 2.0;
        assert!((rho.eval(0.4).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn current_of_odd_field() {
        let band = BandModel::parabolic(1.0, 1.5).unwrap();
        let sp = DgSpace::new(TensorMesh::build(2, 3, 2, 1.0, 1.5).unwrap(), 1).unwrap();
        let even = DgField::project(&sp, |_, p, _| 1.0 + p);
        let j = current(&even, &band);
        assert!(j.eval(0.3).unwrap().abs() < 1e-14);
        // f = μ g(p), g = 1: J = 2π (2/3) ∫ p³ dp
        let odd = DgField::project(&sp, |_, _, mu| mu);
        let expect = 2.0 * PI * (2.0 / 3.0) * 1.5f64.powi(4) / 4.0;
        assert!((current(&odd, &band).eval(0.3).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn neutral_periodic_is_zero() {
        let e = edges(3, 1.0);
        let n = PiecewisePoly::constant(&e, 1.0);
        let sol = solve_periodic(&n, &n, 5.0).unwrap();
        assert!(sol.phi.eval(0.4).unwrap().abs() < 1e-15 && sol.e.eval(0.4).unwrap().abs() < 1e-15);
    }

    #[test]
    fn global_poly_potential() {
        let e = edges(3, 1.0);
        let sol = PotentialSolution::from_global_poly(&e, &[0.1, -0.4, 0.3], PoissonBc::Periodic);
        let x = 0.77;
        assert!((sol.phi.eval(x).unwrap() - (0.1 - 0.4 * x + 0.3 * x * x)).abs() < 1e-14);
        assert!((sol.e.eval(x).unwrap() - (0.4 - 0.6 * x)).abs() < 1e-14);
    }
}
