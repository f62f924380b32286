//! Piecewise tensor-Legendre fields on the (x, p, μ) mesh under the p²-weighted product.
//!
//! Each cell carries (k+1)³ modal coefficients, mode (a, b, c) stored at
//! `(a (k+1) + b)(k+1) + c`, so x is the slowest direction.

use crate::error::{Error, Result};
use crate::mesh::TensorMesh;
use crate::quadrature::{legendre, QuadratureRule};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Basis values (or derivatives) of P_0..P_k at a list of reference points, row per point.
#[derive(Debug, Clone)]
pub struct Tab {
    pub n: usize,
    pub nb1: usize,
    pub v: Vec<f64>,
}

impl Tab {
    pub fn values(points: &[f64], nb1: usize) -> Self {
        let mut v = Vec::with_capacity(points.len() * nb1);
        for &x in points {
            for a in 0..nb1 {
                v.push(legendre(a, x).0);
            }
        }
        Tab { n: points.len(), nb1, v }
    }

    /// Derivatives d/dξ P_a, multiplied by `scale`.
    pub fn derivs(points: &[f64], nb1: usize, scale: f64) -> Self {
        let mut v = Vec::with_capacity(points.len() * nb1);
        for &x in points {
            for a in 0..nb1 {
                v.push(scale * legendre(a, x).1);
            }
        }
        Tab { n: points.len(), nb1, v }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Tab {
            n: self.n,
            nb1: self.nb1,
            v: self.v.iter().map(|x| x * s).collect(),
        }
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[f64] {
        &self.v[q * self.nb1..(q + 1) * self.nb1]
    }
}

/// Evaluates a cell polynomial on the tensor grid tx × tp × tm, out[(qx·np + qp)·nm + qm].
pub fn eval_tensor(coef: &[f64], tx: &Tab, tp: &Tab, tm: &Tab, out: &mut [f64], scratch: &mut Vec<f64>) {
    let nb = tx.nb1;
    let (nx, np, nm) = (tx.n, tp.n, tm.n);
    let s1 = nb * nb * nm;
    let s2 = nb * np * nm;
    scratch.clear();
    scratch.resize(s1 + s2, 0.0);
    let (t1, t2) = scratch.split_at_mut(s1);
    for ab in 0..nb * nb {
        let c = &coef[ab * nb..(ab + 1) * nb];
        for qm in 0..nm {
            let r = tm.row(qm);
            let mut s = 0.0;
            for j in 0..nb {
                s += c[j] * r[j];
            }
            t1[ab * nm + qm] = s;
        }
    }
    for a in 0..nb {
        for qp in 0..np {
            let r = tp.row(qp);
            for qm in 0..nm {
                let mut s = 0.0;
                for b in 0..nb {
                    s += t1[(a * nb + b) * nm + qm] * r[b];
                }
                t2[(a * np + qp) * nm + qm] = s;
            }
        }
    }
    for qx in 0..nx {
        let r = tx.row(qx);
        for qpm in 0..np * nm {
            let mut s = 0.0;
            for a in 0..nb {
                s += t2[a * np * nm + qpm] * r[a];
            }
            out[qx * np * nm + qpm] = s;
        }
    }
}

/// Transpose of [`eval_tensor`]: coef[abc] += Σ_q vals[q] tx[qx,a] tp[qp,b] tm[qm,c].
pub fn accumulate_tensor(vals: &[f64], tx: &Tab, tp: &Tab, tm: &Tab, coef: &mut [f64], scratch: &mut Vec<f64>) {
    let nb = tx.nb1;
    let (nx, np, nm) = (tx.n, tp.n, tm.n);
    let s1 = nb * np * nm;
    let s2 = nb * nb * nm;
    scratch.clear();
    scratch.resize(s1 + s2, 0.0);
    let (t1, t2) = scratch.split_at_mut(s1);
    for qx in 0..nx {
        let r = tx.row(qx);
        for a in 0..nb {
            let ra = r[a];
            if ra == 0.0 {
                continue;
            }
            for qpm in 0..np * nm {
                t1[a * np * nm + qpm] += ra * vals[qx * np * nm + qpm];
            }
        }
    }
    for a in 0..nb {
        for qp in 0..np {
            let r = tp.row(qp);
            for b in 0..nb {
                for qm in 0..nm {
                    t2[(a * nb + b) * nm + qm] += r[b] * t1[(a * np + qp) * nm + qm];
                }
            }
        }
    }
    for ab in 0..nb * nb {
        for qm in 0..nm {
            let r = tm.row(qm);
            let t = t2[ab * nm + qm];
            for c in 0..nb {
                coef[ab * nb + c] += t * r[c];
            }
        }
    }
}

/// Applies A_x ⊗ A_p ⊗ A_m (each nb1×nb1, row-major) to one cell block in place.
pub fn apply_kron3(ax: &[f64], ap: &[f64], am: &[f64], nb: usize, v: &mut [f64]) {
    let mut t = [0.0f64; 27];
    let n3 = nb * nb * nb;
    // μ direction
    for ab in 0..nb * nb {
        for c in 0..nb {
            let mut s = 0.0;
            for c2 in 0..nb {
                s += am[c * nb + c2] * v[ab * nb + c2];
            }
            t[ab * nb + c] = s;
        }
    }
    // p direction
    for a in 0..nb {
        for b in 0..nb {
            for c in 0..nb {
                let mut s = 0.0;
                for b2 in 0..nb {
                    s += ap[b * nb + b2] * t[(a * nb + b2) * nb + c];
                }
                v[(a * nb + b) * nb + c] = s;
            }
        }
    }
    // x direction
    t[..n3].copy_from_slice(&v[..n3]);
    for a in 0..nb {
        for bc in 0..nb * nb {
            let mut s = 0.0;
            for a2 in 0..nb {
                s += ax[a * nb + a2] * t[a2 * nb * nb + bc];
            }
            v[a * nb * nb + bc] = s;
        }
    }
}

/// Inverts a small symmetric positive-definite matrix (row-major).
pub fn spd_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Invariant("Gram matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    Ok(out)
}

/// Solves a small SPD system.
pub fn spd_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Invariant("Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(b)).iter().copied().collect())
}

/// Per-direction inverse mass factors; the cell mass matrix is their Kronecker product.
#[derive(Debug, Clone)]
pub struct TensorMass {
    pub nb1: usize,
    pub x_inv: Vec<Vec<f64>>,
    pub p_inv: Vec<Vec<f64>>,
    pub mu_inv: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

impl TensorMass {
    pub fn from_factors(nb1: usize, x: Vec<Vec<f64>>, p: Vec<Vec<f64>>, mu: Vec<Vec<f64>>) -> Result<Self> {
        let inv = |v: &Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> { v.iter().map(|m| spd_inverse(m, nb1)).collect() };
        Ok(TensorMass {
            nb1,
            x_inv: inv(&x)?,
            p_inv: inv(&p)?,
            mu_inv: inv(&mu)?,
            x,
            p,
            mu,
        })
    }

    /// Multiplies every cell block of `r` by the inverse mass matrix.
    pub fn apply_inverse(&self, mesh: &TensorMesh, r: &mut [f64]) {
        let nb = self.nb1.pow(3);
        let (np, nm) = (mesh.n_p(), mesh.n_mu());
        r.par_chunks_mut(nb).enumerate().for_each(|(c, blk)| {
            let m = c % nm;
            let k = (c / nm) % np;
            let i = c / (nm * np);
            apply_kron3(&self.x_inv[i], &self.p_inv[k], &self.mu_inv[m], self.nb1, blk);
        });
    }

    /// c^T M c summed over cells.
    pub fn quadratic_form(&self, mesh: &TensorMesh, c: &[f64]) -> f64 {
        let nb = self.nb1.pow(3);
        let (np, nm) = (mesh.n_p(), mesh.n_mu());
        let parts: Vec<f64> = c
            .par_chunks(nb)
            .enumerate()
            .map(|(cell, blk)| {
                let m = cell % nm;
                let k = (cell / nm) % np;
                let i = cell / (nm * np);
                let mut w = [0.0; 27];
                w[..nb].copy_from_slice(blk);
                apply_kron3(&self.x[i], &self.p[k], &self.mu[m], self.nb1, &mut w[..nb]);
                blk.iter().zip(&w[..nb]).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        parts.iter().sum()
    }
}

/// Mesh, degree and the fixed p²-weighted Gram factors.
#[derive(Debug)]
pub struct DgSpace {
    pub mesh: TensorMesh,
    pub degree: usize,
    pub nb1: usize,
    pub nb: usize,
    pub mass: TensorMass,
    /// ∫_{p-cell} P_b(ξ(p)) p² dp, per p-cell.
    pub p_moments: Vec<Vec<f64>>,
    /// Gauss rule used for projection of non-polynomial functions.
    pub proj_rule: QuadratureRule,
}

/// 1D mass factor ∫ P_a P_b w over a cell of width h; `weight` takes the reference coordinate.
pub fn weighted_factor(nb1: usize, rule: &QuadratureRule, h: f64, weight: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut m = vec![0.0; nb1 * nb1];
    for (&xi, &wq) in rule.nodes.iter().zip(&rule.weights) {
        let w = wq * 0.5 * h * weight(xi);
        let vals: Vec<f64> = (0..nb1).map(|a| legendre(a, xi).0).collect();
        for a in 0..nb1 {
            for b in 0..nb1 {
                m[a * nb1 + b] += w * vals[a] * vals[b];
            }
        }
    }
    m
}

impl DgSpace {
    pub fn new(mesh: TensorMesh, degree: usize) -> Result<Arc<Self>> {
        if !(1..=2).contains(&degree) {
            return Err(Error::Config(format!("degree must be 1 or 2, got {degree}")));
        }
        let nb1 = degree + 1;
        let exact = QuadratureRule::gauss_legendre(degree + 2)?;
        let diag = |h: f64| -> Vec<f64> {
            let mut m = vec![0.0; nb1 * nb1];
            for a in 0..nb1 {
                m[a * nb1 + a] = h / (2 * a + 1) as f64;
            }
            m
        };
        let x: Vec<Vec<f64>> = (0..mesh.n_x()).map(|i| diag(mesh.dx(i))).collect();
        let mu: Vec<Vec<f64>> = (0..mesh.n_mu()).map(|m| diag(mesh.dmu(m))).collect();
        let p: Vec<Vec<f64>> = (0..mesh.n_p())
            .map(|k| {
                weighted_factor(nb1, &exact, mesh.dp(k), |xi| {
                    let pp = mesh.p_at(k, xi);
                    pp * pp
                })
            })
            .collect();
        let p_moments = (0..mesh.n_p())
            .map(|k| {
                (0..nb1)
                    .map(|b| {
                        exact.integrate(|xi| {
                            let pp = mesh.p_at(k, xi);
                            0.5 * mesh.dp(k) * legendre(b, xi).0 * pp * pp
                        })
                    })
                    .collect()
            })
            .collect();
        let mass = TensorMass::from_factors(nb1, x, p, mu)?;
        Ok(Arc::new(DgSpace {
            mesh,
            degree,
            nb1,
            nb: nb1 * nb1 * nb1,
            mass,
            p_moments,
            proj_rule: QuadratureRule::gauss_legendre(degree + 6)?,
        }))
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_cells() * self.nb
    }

    #[inline]
    pub fn mode(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.nb1 + b) * self.nb1 + c
    }
}

#[derive(Debug, Clone)]
pub struct DgField {
    pub space: Arc<DgSpace>,
    pub coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(space: &Arc<DgSpace>) -> Self {
        DgField {
            space: space.clone(),
            coeffs: vec![0.0; space.n_dofs()],
        }
    }

    pub fn from_coeffs(space: &Arc<DgSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::MeshMismatch(format!(
                "expected {} coefficients, got {}",
                space.n_dofs(),
                coeffs.len()
            )));
        }
        Ok(DgField {
            space: space.clone(),
            coeffs,
        })
    }

    /// p²-weighted L² projection of `f(x, p, μ)`.
    pub fn project<F>(space: &Arc<DgSpace>, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> f64 + Sync,
    {
        let sp = space.as_ref();
        let mesh = &sp.mesh;
        let rule = &sp.proj_rule;
        let tab = Tab::values(&rule.nodes, sp.nb1);
        let nq = rule.n;
        let mut coeffs = vec![0.0; sp.n_dofs()];
        coeffs.par_chunks_mut(sp.nb).enumerate().for_each(|(cell, blk)| {
            let (i, k, m) = mesh.cell_of_index(cell);
            let mut vals = vec![0.0; nq * nq * nq];
            let jac = 0.125 * mesh.dx(i) * mesh.dp(k) * mesh.dmu(m);
            for qx in 0..nq {
                let x = mesh.x_at(i, rule.nodes[qx]);
                for qp in 0..nq {
                    let p = mesh.p_at(k, rule.nodes[qp]);
                    for qm in 0..nq {
                        let mu = mesh.mu_at(m, rule.nodes[qm]);
                        let w = rule.weights[qx] * rule.weights[qp] * rule.weights[qm] * jac;
                        vals[(qx * nq + qp) * nq + qm] = w * p * p * f(x, p, mu);
                    }
                }
            }
            let mut scratch = Vec::new();
            accumulate_tensor(&vals, &tab, &tab, &tab, blk, &mut scratch);
            let ms = &sp.mass;
            apply_kron3(&ms.x_inv[i], &ms.p_inv[k], &ms.mu_inv[m], sp.nb1, blk);
        });
        DgField {
            space: space.clone(),
            coeffs,
        }
    }

    #[inline]
    pub fn cell(&self, c: usize) -> &[f64] {
        &self.coeffs[c * self.space.nb..(c + 1) * self.space.nb]
    }

    #[inline]
    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        let nb = self.space.nb;
        &mut self.coeffs[c * nb..(c + 1) * nb]
    }

    /// Value at local coordinates (ξ_x, ξ_p, ξ_μ) ∈ [-1,1]³ of cell (i, k, m).
    pub fn evaluate(&self, i: usize, k: usize, m: usize, local: [f64; 3]) -> Result<f64> {
        self.space.mesh.check_cell(i, k, m)?;
        if local.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("local coordinates {local:?} outside [-1,1]³")));
        }
        Ok(self.eval_local(self.space.mesh.cell_index(i, k, m), local))
    }

    #[inline]
    pub fn eval_local(&self, cell: usize, local: [f64; 3]) -> f64 {
        let nb1 = self.space.nb1;
        let c = self.cell(cell);
        let lx: Vec<f64> = (0..nb1).map(|a| legendre(a, local[0]).0).collect();
        let lp: Vec<f64> = (0..nb1).map(|a| legendre(a, local[1]).0).collect();
        let lm: Vec<f64> = (0..nb1).map(|a| legendre(a, local[2]).0).collect();
        let mut s = 0.0;
        for a in 0..nb1 {
            for b in 0..nb1 {
                for cc in 0..nb1 {
                    s += c[(a * nb1 + b) * nb1 + cc] * lx[a] * lp[b] * lm[cc];
                }
            }
        }
        s
    }

    /// Value at a physical point, locating the owning cell (ties go to the lower cell).
    pub fn eval_at(&self, x: f64, p: f64, mu: f64) -> Result<f64> {
        let mesh = &self.space.mesh;
        let (i, k, m) = match (
            TensorMesh::locate(&mesh.x_edges, x),
            TensorMesh::locate(&mesh.p_edges, p),
            TensorMesh::locate(&mesh.mu_edges, mu),
        ) {
            (Some(i), Some(k), Some(m)) => (i, k, m),
            _ => return Err(Error::Domain(format!("point ({x}, {p}, {mu}) outside the mesh"))),
        };
        let loc = [
            TensorMesh::local(&mesh.x_edges, i, x),
            TensorMesh::local(&mesh.p_edges, k, p),
            TensorMesh::local(&mesh.mu_edges, m, mu),
        ];
        Ok(self.eval_local(mesh.cell_index(i, k, m), loc))
    }

    /// p²-weighted mean over a cell.
    pub fn cell_average(&self, i: usize, k: usize, m: usize) -> Result<f64> {
        self.space.mesh.check_cell(i, k, m)?;
        Ok(self.avg(self.space.mesh.cell_index(i, k, m)))
    }

    #[inline]
    pub fn avg(&self, cell: usize) -> f64 {
        let sp = &self.space;
        let (_, k, _) = sp.mesh.cell_of_index(cell);
        let c = self.cell(cell);
        let mut s = 0.0;
        for b in 0..sp.nb1 {
            s += c[sp.mode(0, b, 0)] * sp.p_moments[k][b];
        }
        s / sp.mesh.p_volume(k)
    }

    /// ∫ f p² dp dμ dx over one cell.
    #[inline]
    pub fn cell_mass(&self, cell: usize) -> f64 {
        let (i, k, m) = self.space.mesh.cell_of_index(cell);
        self.avg(cell) * self.space.mesh.volume(i, k, m)
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.space.mesh.n_cells()).map(|c| self.cell_mass(c)).sum()
    }

    /// ||f||² in L²_{p²} from the Gram matrix.
    pub fn norm_sq(&self) -> f64 {
        self.space.mass.quadratic_form(&self.space.mesh, &self.coeffs)
    }

    pub fn axpy(&mut self, a: f64, other: &[f64]) {
        for (y, x) in self.coeffs.iter_mut().zip(other) {
            *y += a * x;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for y in &mut self.coeffs {
            *y *= a;
        }
    }

    /// self ← a·self + b·other.
    pub fn lincomb(&mut self, a: f64, b: f64, other: &DgField) {
        for (y, x) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *y = a * *y + b * x;
        }
    }

    pub fn same_space(&self, other: &DgField) -> bool {
        Arc::ptr_eq(&self.space, &other.space) || self.space.mesh == other.space.mesh && self.space.degree == other.space.degree
    }
}
