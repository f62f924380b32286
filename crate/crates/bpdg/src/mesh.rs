//! Tensor mesh over (x, p, μ) with the p²-weighted measure dV = p² dp dμ dx.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    pub x_edges: Vec<f64>,
    pub p_edges: Vec<f64>,
    pub mu_edges: Vec<f64>,
    pub length: f64,
    pub p_max: f64,
}

fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    let mut e: Vec<f64> = (0..=n).map(|j| a + j as f64 * h).collect();
    e[n] = b;
    e
}

fn check_increasing(name: &str, e: &[f64]) -> Result<()> {
    if e.len() < 2 {
        return Err(Error::Config(format!("{name}: need at least one cell")));
    }
    for w in e.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Config(format!("{name}: edges must be strictly increasing")));
        }
    }
    Ok(())
}

impl TensorMesh {
    /// Uniform mesh on [0, L] x [0, p_max] x [-1, 1].
    pub fn build(n_x: usize, n_p: usize, n_mu: usize, length: f64, p_max: f64) -> Result<Self> {
        let mut bad = Vec::new();
        if n_x == 0 {
            bad.push("n_x must be at least 1".to_string());
        }
        if n_p == 0 {
            bad.push("n_p must be at least 1".to_string());
        }
        if n_mu == 0 {
            bad.push("n_mu must be at least 1".to_string());
        }
        if !(length > 0.0 && length.is_finite()) {
            bad.push(format!("length must be positive, got {length}"));
        }
        if !(p_max > 0.0 && p_max.is_finite()) {
            bad.push(format!("p_max must be positive, got {p_max}"));
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        Self::from_edges(
            uniform(0.0, length, n_x),
            uniform(0.0, p_max, n_p),
            uniform(-1.0, 1.0, n_mu),
        )
    }

    pub fn from_edges(x_edges: Vec<f64>, p_edges: Vec<f64>, mu_edges: Vec<f64>) -> Result<Self> {
        check_increasing("x_edges", &x_edges)?;
        check_increasing("p_edges", &p_edges)?;
        check_increasing("mu_edges", &mu_edges)?;
        if x_edges[0] != 0.0 {
            return Err(Error::Config("x_edges must start at 0".into()));
        }
        if p_edges[0] != 0.0 {
            return Err(Error::Config("p_edges must start at 0".into()));
        }
        if mu_edges[0] != -1.0 || *mu_edges.last().unwrap() != 1.0 {
            return Err(Error::Config("mu_edges must span [-1, 1]".into()));
        }
        let length = *x_edges.last().unwrap();
        let p_max = *p_edges.last().unwrap();
        Ok(TensorMesh {
            x_edges,
            p_edges,
            mu_edges,
            length,
            p_max,
        })
    }

    pub fn n_x(&self) -> usize {
        self.x_edges.len() - 1
    }
    pub fn n_p(&self) -> usize {
        self.p_edges.len() - 1
    }
    pub fn n_mu(&self) -> usize {
        self.mu_edges.len() - 1
    }
    pub fn n_cells(&self) -> usize {
        self.n_x() * self.n_p() * self.n_mu()
    }

    /// Linear cell index, x slowest and μ fastest.
    #[inline]
    pub fn cell_index(&self, i: usize, k: usize, m: usize) -> usize {
        (i * self.n_p() + k) * self.n_mu() + m
    }

    pub fn cell_of_index(&self, c: usize) -> (usize, usize, usize) {
        let m = c % self.n_mu();
        let r = c / self.n_mu();
        (r / self.n_p(), r % self.n_p(), m)
    }

    pub fn check_cell(&self, i: usize, k: usize, m: usize) -> Result<()> {
        if i >= self.n_x() || k >= self.n_p() || m >= self.n_mu() {
            return Err(Error::Index(format!(
                "cell ({i}, {k}, {m}) outside {}x{}x{} mesh",
                self.n_x(),
                self.n_p(),
                self.n_mu()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self, i: usize) -> f64 {
        self.x_edges[i + 1] - self.x_edges[i]
    }
    #[inline]
    pub fn dp(&self, k: usize) -> f64 {
        self.p_edges[k + 1] - self.p_edges[k]
    }
    #[inline]
    pub fn dmu(&self, m: usize) -> f64 {
        self.mu_edges[m + 1] - self.mu_edges[m]
    }

    /// Physical coordinate of a reference point ξ in [-1, 1].
    #[inline]
    pub fn x_at(&self, i: usize, xi: f64) -> f64 {
        self.x_edges[i] + 0.5 * (xi + 1.0) * self.dx(i)
    }
    #[inline]
    pub fn p_at(&self, k: usize, xi: f64) -> f64 {
        self.p_edges[k] + 0.5 * (xi + 1.0) * self.dp(k)
    }
    #[inline]
    pub fn mu_at(&self, m: usize, xi: f64) -> f64 {
        self.mu_edges[m] + 0.5 * (xi + 1.0) * self.dmu(m)
    }

    /// p²-weighted volume of the p-slab, (p₊³ − p₋³)/3.
    #[inline]
    pub fn p_volume(&self, k: usize) -> f64 {
        let (a, b) = (self.p_edges[k], self.p_edges[k + 1]);
        (b * b * b - a * a * a) / 3.0
    }

    /// V_ikm = Δx_i (p₊³ − p₋³)/3 Δμ_m.
    pub fn cell_volume(&self, i: usize, k: usize, m: usize) -> Result<f64> {
        self.check_cell(i, k, m)?;
        Ok(self.volume(i, k, m))
    }

    #[inline]
    pub(crate) fn volume(&self, i: usize, k: usize, m: usize) -> f64 {
        self.dx(i) * self.p_volume(k) * self.dmu(m)
    }

    /// Locates the cell containing `v` among `edges`. A value on an interior
    /// edge goes to the lower cell.
    pub fn locate(edges: &[f64], v: f64) -> Option<usize> {
        let n = edges.len() - 1;
        if v < edges[0] || v > edges[n] {
            return None;
        }
        // first edge index j with edges[j] >= v
        let j = edges.partition_point(|&e| e < v);
        Some(if j == 0 { 0 } else { j - 1 })
    }

    /// Local coordinate of `v` in cell `c` of `edges`.
    #[inline]
    pub fn local(edges: &[f64], c: usize, v: f64) -> f64 {
        2.0 * (v - edges[c]) / (edges[c + 1] - edges[c]) - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule;

    #[test]
    fn single_cell() {
        let m = TensorMesh::build(1, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.x_edges, vec![0.0, 1.0]);
        assert_eq!(m.mu_edges, vec![-1.0, 1.0]);
        assert!((m.cell_volume(0, 0, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_x_cells() {
        let m = TensorMesh::build(2, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.x_edges, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn small_device_mesh() {
        let m = TensorMesh::build(4, 4, 4, 1e-6, 0.3).unwrap();
        assert_eq!(m.n_cells(), 64);
        for c in 0..64 {
            let (i, k, mm) = m.cell_of_index(c);
            assert!(m.cell_volume(i, k, mm).unwrap() > 0.0);
        }
    }

    #[test]
    fn volume_matches_quadrature() {
        let m = TensorMesh::from_edges(vec![0.0, 1.0], vec![0.0, 1.0, 2.0], vec![-1.0, 0.0, 1.0]).unwrap();
        let v = m.cell_volume(0, 1, 1).unwrap();
        assert!((v - 7.0 / 3.0).abs() < 1e-14);
        let g = QuadratureRule::gauss_legendre(3).unwrap();
        let q = g.integrate_on(1.0, 2.0, |p| p * p);
        assert!((v - q).abs() < 1e-14);
    }

    #[test]
    fn total_volume() {
        let m = TensorMesh::build(5, 7, 3, 2.0, 1.5).unwrap();
        let mut s = 0.0;
        for c in 0..m.n_cells() {
            let (i, k, mm) = m.cell_of_index(c);
            s += m.cell_volume(i, k, mm).unwrap();
        }
        let exact = 2.0 * 1.5f64.powi(3) / 3.0 * 2.0;
        assert!((s - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TensorMesh::build(0, 1, 1, 1.0, 1.0).is_err());
        assert!(TensorMesh::build(1, 1, 1, -1.0, 1.0).is_err());
        assert!(TensorMesh::build(1, 1, 1, 1.0, 0.0).is_err());
        let m = TensorMesh::build(2, 2, 2, 1.0, 1.0).unwrap();
        assert!(m.cell_volume(2, 0, 0).is_err());
    }

    #[test]
    fn locate_tie_goes_low() {
        let e = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(TensorMesh::locate(&e, 1.0), Some(0));
        assert_eq!(TensorMesh::locate(&e, 0.0), Some(0));
        assert_eq!(TensorMesh::locate(&e, 2.5), Some(2));
        assert_eq!(TensorMesh::locate(&e, 3.0), Some(2));
        assert_eq!(TensorMesh::locate(&e, 3.1), None);
    }
}
