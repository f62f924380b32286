//! DG transport operator for ∂_t f + ∂·(β f) = 0 with
//! β = (p² μ v, −qE p² μ, −qE p (1−μ²)) in the measure dx dp dμ.
//!
//! Two weak forms share the same fluxes. The standard form tests against
//! g ∈ V_h with weight p². The entropy-weighted form tests against g e^H,
//! H = ε(p) − qΦ(x), and is written in skew-symmetric split form so that
//! (f, f) pairs produce exactly the upwind jump dissipation under quadrature.

use crate::band::BandModel;
use crate::error::{Error, Result};
use crate::field::{accumulate_tensor, eval_tensor, weighted_factor, DgField, DgSpace, Tab, TensorMass};
use crate::poisson::PotentialSolution;
use crate::quadrature::QuadratureRule;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Advection speeds of the reduced system.
#[derive(Debug, Clone, Copy)]
pub struct TransportCoefficients {
    pub q: f64,
}

impl TransportCoefficients {
    /// H_x = μ ∂_pε.
    pub fn h_x(&self, band: &BandModel, p: f64, mu: f64) -> f64 {
        mu * band.v(p)
    }
    /// H_p = −qEμ.
    pub fn h_p(&self, e: f64, mu: f64) -> f64 {
        -self.q * e * mu
    }
    /// H_μ = −qE.
    pub fn h_mu(&self, e: f64) -> f64 {
        -self.q * e
    }
}

/// x = 0 upwind selection: left trace for μ > 0.
pub fn upwind_flux_x(mu: f64, eps_prime: f64, f_minus: f64, f_plus: f64) -> f64 {
    eps_prime * (0.5 * (mu + mu.abs()) * f_minus + 0.5 * (mu - mu.abs()) * f_plus)
}

pub fn upwind_flux_p(q: f64, e: f64, mu: f64, f_minus: f64, f_plus: f64) -> f64 {
    let h = -q * e * mu;
    0.5 * (h + h.abs()) * f_minus + 0.5 * (h - h.abs()) * f_plus
}

pub fn upwind_flux_mu(q: f64, e: f64, f_minus: f64, f_plus: f64) -> f64 {
    let h = -q * e;
    0.5 * (h + h.abs()) * f_minus + 0.5 * (h - h.abs()) * f_plus
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XBoundary {
    Periodic,
    /// Inflow of a Maxwellian carrying the given contact densities.
    DiodeInflow { left_density: f64, right_density: f64 },
}

/// The p = 0 and μ = ±1 faces carry no flux; p = p_max has a zero ghost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub x: XBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Standard,
    Entropy,
}

/// Potential-dependent data sampled at the operator's x-nodes.
#[derive(Debug, Clone)]
pub struct StageData {
    /// E at x Gauss nodes, per x-cell.
    pub e: Vec<Vec<f64>>,
    /// e^{−qΦ} at x Gauss nodes, per x-cell (ones for the standard form).
    pub wx: Vec<Vec<f64>>,
    /// e^{−qΦ} at x-edges.
    pub wx_edge: Vec<f64>,
    pub weighting: Weighting,
}

#[derive(Debug)]
pub struct TransportOperator {
    pub space: Arc<DgSpace>,
    pub band: BandModel,
    pub coeffs: TransportCoefficients,
    pub bc: BoundarySpec,
    pub rule: QuadratureRule,
    tv: Tab,
    td: Tab,
    tl: Tab,
    tr: Tab,
    /// physical p Gauss nodes per p-cell
    pq: Vec<Vec<f64>>,
    vq: Vec<Vec<f64>>,
    /// e^{ε} at p Gauss nodes and at p-edges
    ep: Vec<Vec<f64>>,
    ep_edge: Vec<f64>,
    muq: Vec<Vec<f64>>,
    /// Inflow ghost at the x-boundaries, per p-cell and p node.
    ghost_left: Vec<Vec<f64>>,
    ghost_right: Vec<Vec<f64>>,
}

/// Z = 4π ∫₀^{p_max} e^{−ε} p² dp, the density of the unit Maxwellian on the mesh.
pub fn maxwellian_density(band: &BandModel, space: &DgSpace) -> f64 {
    let rule = QuadratureRule::gauss_legendre(12).expect("valid rule");
    let mesh = &space.mesh;
    let s: f64 = (0..mesh.n_p())
        .map(|k| rule.integrate_on(mesh.p_edges[k], mesh.p_edges[k + 1], |p| (-band.eps(p)).exp() * p * p))
        .sum();
    4.0 * PI * s
}

impl TransportOperator {
    pub fn new(space: &Arc<DgSpace>, band: BandModel, q: f64, bc: BoundarySpec, n_quad: usize) -> Result<Self> {
        let rule = QuadratureRule::gauss_legendre(n_quad)?;
        let nb1 = space.nb1;
        let mesh = &space.mesh;
        let pq: Vec<Vec<f64>> = (0..mesh.n_p())
            .map(|k| rule.nodes.iter().map(|&s| mesh.p_at(k, s)).collect())
            .collect();
        let vq = pq.iter().map(|r| r.iter().map(|&p| band.v(p)).collect()).collect();
        let ep = pq.iter().map(|r| r.iter().map(|&p| band.eps(p).exp()).collect()).collect();
        let ep_edge = mesh.p_edges.iter().map(|&p| band.eps(p).exp()).collect();
        let muq = (0..mesh.n_mu())
            .map(|m| rule.nodes.iter().map(|&s| mesh.mu_at(m, s)).collect())
            .collect();
        let z = maxwellian_density(&band, space);
        let ghost = |dens: f64| -> Vec<Vec<f64>> {
            pq.iter()
                .map(|r: &Vec<f64>| r.iter().map(|&p| dens * (-band.eps(p)).exp() / z).collect())
                .collect()
        };
        let (gl, gr) = match bc.x {
            XBoundary::Periodic => (ghost(0.0), ghost(0.0)),
            XBoundary::DiodeInflow {
                left_density,
                right_density,
            } => (ghost(left_density), ghost(right_density)),
        };
        Ok(TransportOperator {
            space: space.clone(),
            band,
            coeffs: TransportCoefficients { q },
            bc,
            tv: Tab::values(&rule.nodes, nb1),
            td: Tab::derivs(&rule.nodes, nb1, 1.0),
            tl: Tab::values(&[-1.0], nb1),
            tr: Tab::values(&[1.0], nb1),
            rule,
            pq,
            vq,
            ep,
            ep_edge,
            muq,
            ghost_left: gl,
            ghost_right: gr,
        })
    }

    /// Samples E and the x part of e^H at this operator's nodes.
    pub fn stage_data(&self, pot: &PotentialSolution, weighting: Weighting) -> Result<StageData> {
        let mesh = &self.space.mesh;
        if pot.e.edges != mesh.x_edges {
            return Err(Error::MeshMismatch("potential and field use different x-meshes".into()));
        }
        let q = self.coeffs.q;
        let e = (0..mesh.n_x())
            .map(|i| self.rule.nodes.iter().map(|&s| pot.e.eval_in(i, mesh.x_at(i, s))).collect())
            .collect();
        let (wx, wx_edge) = match weighting {
            Weighting::Standard => (vec![vec![1.0; self.rule.n]; mesh.n_x()], vec![1.0; mesh.n_x() + 1]),
            Weighting::Entropy => {
                let wx = (0..mesh.n_x())
                    .map(|i| {
                        self.rule
                            .nodes
                            .iter()
                            .map(|&s| (-q * pot.phi.eval_in(i, mesh.x_at(i, s))).exp())
                            .collect()
                    })
                    .collect();
                let mut we: Vec<f64> = (0..mesh.n_x()).map(|i| (-q * pot.phi.eval_in(i, mesh.x_edges[i])).exp()).collect();
                let n = mesh.n_x();
                we.push((-q * pot.phi.eval_in(n - 1, mesh.x_edges[n])).exp());
                (wx, we)
            }
        };
        Ok(StageData {
            e,
            wx,
            wx_edge,
            weighting,
        })
    }

    /// Residual R_ℓ = transport weak form tested against every basis function.
    pub fn residual(&self, field: &DgField, data: &StageData) -> Result<Vec<f64>> {
        if !Arc::ptr_eq(&field.space, &self.space) && field.space.mesh != self.space.mesh {
            return Err(Error::MeshMismatch("field and transport operator use different meshes".into()));
        }
        let nb = self.space.nb;
        let mut out = vec![0.0; self.space.n_dofs()];
        out.par_chunks_mut(nb).enumerate().for_each(|(cell, blk)| {
            self.cell_residual(field, data, cell, blk);
        });
        Ok(out)
    }

    /// Γ_T/Δt for one cell: the residual tested against 1, divided by V.
    pub fn cell_average_increment(&self, field: &DgField, data: &StageData, i: usize, k: usize, m: usize) -> Result<f64> {
        let mesh = &self.space.mesh;
        let v = mesh.cell_volume(i, k, m)?;
        let mut blk = vec![0.0; self.space.nb];
        self.cell_residual(field, data, mesh.cell_index(i, k, m), &mut blk);
        Ok(blk[0] / v)
    }

    fn cell_residual(&self, field: &DgField, data: &StageData, cell: usize, r: &mut [f64]) {
        let sp = &self.space;
        let mesh = &sp.mesh;
        let (i, k, m) = mesh.cell_of_index(cell);
        let n = self.rule.n;
        let w = &self.rule.weights;
        let q = self.coeffs.q;
        let (dx, dp, dmu) = (mesh.dx(i), mesh.dp(k), mesh.dmu(m));
        let entropy = data.weighting == Weighting::Entropy;
        let coef = field.cell(cell);
        let mut scratch = Vec::new();
        let mut scratch2 = Vec::new();
        let n3 = n * n * n;
        let mut f = vec![0.0; n3];
        eval_tensor(coef, &self.tv, &self.tv, &self.tv, &mut f, &mut scratch);

        let (pq, vq, muq, eq) = (&self.pq[k], &self.vq[k], &self.muq[m], &data.e[i]);
        let jac = 0.125 * dx * dp * dmu;
        let mut vx = vec![0.0; n3];
        let mut vp = vec![0.0; n3];
        let mut vm = vec![0.0; n3];
        let mut vg = vec![0.0; n3];
        let (mut gx, mut gp, mut gm) = (vec![0.0; n3], vec![0.0; n3], vec![0.0; n3]);
        let tdx = self.td.scaled(2.0 / dx);
        let tdp = self.td.scaled(2.0 / dp);
        let tdm = self.td.scaled(2.0 / dmu);
        if entropy {
            eval_tensor(coef, &tdx, &self.tv, &self.tv, &mut gx, &mut scratch);
            eval_tensor(coef, &self.tv, &tdp, &self.tv, &mut gp, &mut scratch);
            eval_tensor(coef, &self.tv, &self.tv, &tdm, &mut gm, &mut scratch);
        }
        for a in 0..n {
            for b in 0..n {
                let p = pq[b];
                for c in 0..n {
                    let idx = (a * n + b) * n + c;
                    let mu = muq[c];
                    let bx = p * p * mu * vq[b];
                    let bp = -q * eq[a] * p * p * mu;
                    let bm = -q * eq[a] * p * (1.0 - mu * mu);
                    let mut wq = w[a] * w[b] * w[c] * jac;
                    if entropy {
                        wq *= 0.5 * data.wx[i][a] * self.ep[k][b];
                        vg[idx] = -wq * (bx * gx[idx] + bp * gp[idx] + bm * gm[idx]);
                    }
                    vx[idx] = wq * bx * f[idx];
                    vp[idx] = wq * bp * f[idx];
                    vm[idx] = wq * bm * f[idx];
                }
            }
        }
        accumulate_tensor(&vx, &tdx, &self.tv, &self.tv, r, &mut scratch);
        accumulate_tensor(&vp, &self.tv, &tdp, &self.tv, r, &mut scratch);
        accumulate_tensor(&vm, &self.tv, &self.tv, &tdm, r, &mut scratch);
        if entropy {
            accumulate_tensor(&vg, &self.tv, &self.tv, &self.tv, r, &mut scratch);
        }

        // Faces, each seen from this cell with outward normal sign `sgn`.
        let n2 = n * n;
        let mut own = vec![0.0; n2];
        let mut nbr = vec![0.0; n2];
        let mut vals = vec![0.0; n2];
        let nx = mesh.n_x();
        let np = mesh.n_p();
        let nm = mesh.n_mu();
        let face = |vals: &mut [f64], own: &[f64], nbr: &[f64], b: f64, wgt: f64, idx: usize| {
            let fhat = if b >= 0.0 { own[idx] } else { nbr[idx] };
            vals[idx] = if entropy {
                wgt * b * (0.5 * own[idx] - fhat)
            } else {
                -wgt * b * fhat
            };
        };

        // x faces
        for (sgn, t_own, t_nbr) in [(1.0, &self.tr, &self.tl), (-1.0, &self.tl, &self.tr)] {
            eval_tensor(coef, t_own, &self.tv, &self.tv, &mut own, &mut scratch);
            let edge = if sgn > 0.0 { i + 1 } else { i };
            let nb_i = if sgn > 0.0 {
                if i + 1 < nx {
                    Some(i + 1)
                } else {
                    None
                }
            } else if i > 0 {
                Some(i - 1)
            } else {
                None
            };
            let nb_i = match (nb_i, self.bc.x) {
                (Some(j), _) => Some(j),
                (None, XBoundary::Periodic) => Some(if sgn > 0.0 { 0 } else { nx - 1 }),
                (None, XBoundary::DiodeInflow { .. }) => None,
            };
            match nb_i {
                Some(j) => eval_tensor(field.cell(mesh.cell_index(j, k, m)), t_nbr, &self.tv, &self.tv, &mut nbr, &mut scratch2),
                None => {
                    let g = if sgn > 0.0 { &self.ghost_right[k] } else { &self.ghost_left[k] };
                    for b in 0..n {
                        for c in 0..n {
                            nbr[b * n + c] = g[b];
                        }
                    }
                }
            }
            let xw = data.wx_edge[edge];
            for b in 0..n {
                let p = pq[b];
                for c in 0..n {
                    let bn = sgn * p * p * muq[c] * vq[b];
                    let mut wgt = w[b] * w[c] * 0.25 * dp * dmu;
                    if entropy {
                        wgt *= xw * self.ep[k][b];
                    }
                    face(&mut vals, &own, &nbr, bn, wgt, b * n + c);
                }
            }
            accumulate_tensor(&vals, t_own, &self.tv, &self.tv, r, &mut scratch);
        }

        // p faces (p = 0 carries no flux)
        for (sgn, t_own, t_nbr) in [(1.0, &self.tr, &self.tl), (-1.0, &self.tl, &self.tr)] {
            if sgn < 0.0 && k == 0 {
                continue;
            }
            let edge = if sgn > 0.0 { k + 1 } else { k };
            let pe = mesh.p_edges[edge];
            eval_tensor(coef, &self.tv, t_own, &self.tv, &mut own, &mut scratch);
            if sgn > 0.0 && k + 1 == np {
                nbr.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let kk = if sgn > 0.0 { k + 1 } else { k - 1 };
                eval_tensor(field.cell(mesh.cell_index(i, kk, m)), &self.tv, t_nbr, &self.tv, &mut nbr, &mut scratch2);
            }
            for a in 0..n {
                for c in 0..n {
                    let bn = -sgn * q * eq[a] * pe * pe * muq[c];
                    let mut wgt = w[a] * w[c] * 0.25 * dx * dmu;
                    if entropy {
                        wgt *= data.wx[i][a] * self.ep_edge[edge];
                    }
                    face(&mut vals, &own, &nbr, bn, wgt, a * n + c);
                }
            }
            accumulate_tensor(&vals, &self.tv, t_own, &self.tv, r, &mut scratch);
        }

        // μ faces (μ = ±1 carry no flux)
        for (sgn, t_own, t_nbr) in [(1.0, &self.tr, &self.tl), (-1.0, &self.tl, &self.tr)] {
            if (sgn > 0.0 && m + 1 == nm) || (sgn < 0.0 && m == 0) {
                continue;
            }
            let mue = mesh.mu_edges[if sgn > 0.0 { m + 1 } else { m }];
            eval_tensor(coef, &self.tv, &self.tv, t_own, &mut own, &mut scratch);
            let mm = if sgn > 0.0 { m + 1 } else { m - 1 };
            eval_tensor(field.cell(mesh.cell_index(i, k, mm)), &self.tv, &self.tv, t_nbr, &mut nbr, &mut scratch2);
            for a in 0..n {
                for b in 0..n {
                    let bn = -sgn * q * eq[a] * pq[b] * (1.0 - mue * mue);
                    let mut wgt = w[a] * w[b] * 0.25 * dx * dp;
                    if entropy {
                        wgt *= data.wx[i][a] * self.ep[k][b];
                    }
                    face(&mut vals, &own, &nbr, bn, wgt, a * n + b);
                }
            }
            accumulate_tensor(&vals, &self.tv, &self.tv, t_own, r, &mut scratch);
        }
    }

    /// Gram factors of the e^H p² weighted mass matrix at this stage's potential.
    pub fn entropy_mass(&self, data: &StageData) -> Result<TensorMass> {
        let sp = &self.space;
        let mesh = &sp.mesh;
        let nb1 = sp.nb1;
        let at = |xi: f64| self.rule.nodes.iter().position(|&s| s == xi).expect("node of the operator rule");
        let x = (0..mesh.n_x())
            .map(|i| weighted_factor(nb1, &self.rule, mesh.dx(i), |xi| data.wx[i][at(xi)]))
            .collect();
        let p = (0..mesh.n_p())
            .map(|k| weighted_factor(nb1, &self.rule, mesh.dp(k), |xi| self.pq[k][at(xi)].powi(2) * self.ep[k][at(xi)]))
            .collect();
        TensorMass::from_factors(nb1, x, p, sp.mass.mu.clone())
    }

    /// Maximum group velocity over the p Gauss nodes of p-cell k.
    pub fn max_velocity(&self, k: usize) -> f64 {
        self.vq[k].iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// Smallest p Gauss node of p-cell k.
    pub fn min_p_node(&self, k: usize) -> f64 {
        self.pq[k].iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }
}
