//! Gauss-Legendre and Gauss-Lobatto rules on the reference interval [-1, 1].
//!
//! Nodes come from Newton iteration on Legendre polynomials.

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    GaussLegendre,
    GaussLobatto,
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub n: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Legendre polynomial P_n and its derivative at x, by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint value of P_n'(±1) = ±^(n+1) n(n+1)/2
        let s = if x > 0.0 { 1.0 } else if n % 2 == 0 { -1.0 } else { 1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Builds a rule of the given kind with `n` nodes.
pub fn quadrature(kind: RuleKind, n: usize) -> Result<QuadratureRule> {
    match kind {
        RuleKind::GaussLegendre => QuadratureRule::gauss_legendre(n),
        RuleKind::GaussLobatto => QuadratureRule::gauss_lobatto(n),
    }
}

impl QuadratureRule {
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 || n > 200 {
            return Err(Error::Config(format!("unsupported Gauss-Legendre node count {n}")));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(QuadratureRule {
            kind: RuleKind::GaussLegendre,
            n,
            nodes,
            weights,
        })
    }

    pub fn gauss_lobatto(n: usize) -> Result<Self> {
        if !(2..=200).contains(&n) {
            return Err(Error::Config(format!("unsupported Gauss-Lobatto node count {n}")));
        }
        let nm = n - 1;
        let nmf = nm as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        nodes[0] = -1.0;
        nodes[nm] = 1.0;
        // interior nodes are the roots of P'_{n-1}
        for i in 1..n.div_ceil(2) {
            let mut x = -(std::f64::consts::PI * i as f64 / nmf).cos();
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = legendre(nm, x);
                // d/dx of P' via the Legendre ODE: (1-x^2) P'' = 2x P' - n(n+1) P
                let d2p = (2.0 * x * dp - nmf * (nmf + 1.0) * p) / (1.0 - x * x);
                let dx = dp / d2p;
                x -= dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
            nodes[i] = x;
            nodes[nm - i] = -x;
        }
        if n % 2 == 1 {
            nodes[nm / 2] = 0.0;
        }
        for i in 0..n {
            let (p, _) = legendre(nm, nodes[i]);
            weights[i] = 2.0 / (nmf * (nmf + 1.0) * p * p);
        }
        Ok(QuadratureRule {
            kind: RuleKind::GaussLobatto,
            n,
            nodes,
            weights,
        })
    }

    /// Highest polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        match self.kind {
            RuleKind::GaussLegendre => 2 * self.n - 1,
            RuleKind::GaussLobatto => 2 * self.n - 3,
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integral over [a, b] by affine mapping.
    pub fn integrate_on(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        h * self.integrate(|s| f(c + h * s))
    }

    /// Endpoint weight normalized so the weights sum to one.
    pub fn end_weight(&self) -> f64 {
        0.5 * self.weights[0]
    }
}

/// Smallest Lobatto count whose rule integrates degree `deg` exactly.
pub fn lobatto_count_for_degree(deg: usize) -> usize {
    (deg + 3).div_ceil(2).max(2)
}

/// Composite Gauss integral of `f` over [a, b] with `pieces` subintervals.
pub fn composite(rule: &QuadratureRule, a: f64, b: f64, pieces: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|j| {
            let lo = a + j as f64 * h;
            rule.integrate_on(lo, lo + h, &f)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_moment(k: usize) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    #[test]
    fn lobatto3_nodes_and_weights() {
        let r = QuadratureRule::gauss_lobatto(3).unwrap();
        let expect_n = [-1.0, 0.0, 1.0];
        let expect_w = [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        for i in 0..3 {
            assert!((r.nodes[i] - expect_n[i]).abs() < 1e-15);
            assert!((r.weights[i] - expect_w[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn legendre2_nodes_and_weights() {
        let r = QuadratureRule::gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0] + s).abs() < 1e-15 && (r.nodes[1] - s).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-14 && (r.weights[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn moments_exact_to_degree() {
        for n in 1..=12 {
            for kind in [RuleKind::GaussLegendre, RuleKind::GaussLobatto] {
                if kind == RuleKind::GaussLobatto && n < 2 {
                    continue;
                }
                let r = quadrature(kind, n).unwrap();
                let sum: f64 = r.weights.iter().sum();
                assert!((sum - 2.0).abs() < 1e-14);
                for k in 0..=r.degree() {
                    let q = r.integrate(|x| x.powi(k as i32));
                    let e = exact_moment(k);
                    assert!((q - e).abs() <= 1e-13 * e.abs().max(1.0), "{kind:?} n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn lobatto_endpoints() {
        for n in 2..10 {
            let r = QuadratureRule::gauss_lobatto(n).unwrap();
            assert_eq!(r.nodes[0], -1.0);
            assert_eq!(r.nodes[n - 1], 1.0);
            assert_eq!(r.weights[0], r.weights[n - 1]);
        }
    }

    #[test]
    fn unsupported_counts() {
        assert!(QuadratureRule::gauss_lobatto(1).is_err());
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }

    #[test]
    fn lobatto_count() {
        assert_eq!(lobatto_count_for_degree(1), 2);
        assert_eq!(lobatto_count_for_degree(2), 3);
        assert_eq!(lobatto_count_for_degree(3), 3);
        assert_eq!(lobatto_count_for_degree(4), 4);
    }
}
