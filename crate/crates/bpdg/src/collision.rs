//! Electron–phonon collision operator with an energy-delta kernel.
//!
//! Pointwise, Q(f) = gain − ν f with
//!   gain(p) = 2π Σ_j c_j χ(ε+jħω) W(ε+jħω) ∫ f(p(ε+jħω), μ') dμ',
//!   ν(p)    = Σ_j c_j n(ε−jħω),
//! where W(ε) = p² dp/dε and n = 4π W χ.
//!
//! The Galerkin operator is assembled pair by pair. Each emission/absorption
//! pair (A at energy ε, B at ε+ħω) is integrated once over the lower
//! momentum A; the gain at one end and the loss at the other share the same
//! quadrature weight, so discrete mass balance and the sign of
//! C(f, f e^H) under detailed balance hold to round-off.

use crate::band::BandModel;
use crate::error::{Error, Result};
use crate::field::{DgField, DgSpace};
use crate::mesh::TensorMesh;
use crate::quadrature::{legendre, QuadratureRule};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringParams {
    pub coupling: f64,
    pub n_ph: f64,
    pub hbar_omega: f64,
    pub c0: f64,
}

impl ScatteringParams {
    pub fn new(coupling: f64, n_ph: f64, hbar_omega: f64, c0: f64) -> Result<Self> {
        let vals = [("coupling", coupling), ("n_ph", n_ph), ("hbar_omega", hbar_omega), ("c0", c0)];
        let bad: Vec<String> = vals
            .iter()
            .filter(|(_, v)| !(*v >= 0.0 && v.is_finite()))
            .map(|(n, v)| format!("{n} must be finite and nonnegative, got {v}"))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        Ok(ScatteringParams {
            coupling,
            n_ph,
            hbar_omega,
            c0,
        })
    }

    /// Thermal occupancy n = 1/(e^{ħω} − 1), which gives c₁ e^{−ħω} = c₋₁.
    pub fn thermal(coupling: f64, hbar_omega: f64, c0: f64) -> Result<Self> {
        if !(hbar_omega > 0.0) {
            return Err(Error::Config("thermal occupancy needs hbar_omega > 0".into()));
        }
        Self::new(coupling, 1.0 / hbar_omega.exp_m1(), hbar_omega, c0)
    }

    /// c₁ = (n+1)K (emission).
    pub fn c1(&self) -> f64 {
        (self.n_ph + 1.0) * self.coupling
    }

    /// c₋₁ = nK (absorption).
    pub fn cm1(&self) -> f64 {
        self.n_ph * self.coupling
    }

    pub fn c(&self, j: i32) -> f64 {
        match j {
            1 => self.c1(),
            -1 => self.cm1(),
            _ => self.c0,
        }
    }
}

/// ν(p) = Σ_j c_j n(ε(p) − jħω).
pub fn collision_frequency(band: &BandModel, params: &ScatteringParams, p: f64) -> f64 {
    let e = band.eps(p);
    let hw = params.hbar_omega;
    [1, 0, -1]
        .iter()
        .map(|&j| params.c(j) * band.density_of_states(e - j as f64 * hw))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftEntry {
    pub eps: f64,
    pub chi: bool,
    pub p: f64,
    pub cell: Option<usize>,
    pub xi: f64,
    /// p'² dp/dε at the shifted energy.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftNode {
    pub cell: usize,
    pub xi: f64,
    pub p: f64,
    pub eps: f64,
    /// Entries for j = −1, 0, +1.
    pub entries: [ShiftEntry; 3],
}

impl ShiftNode {
    pub fn entry(&self, j: i32) -> &ShiftEntry {
        &self.entries[(j + 1) as usize]
    }
}

#[derive(Debug, Clone)]
pub struct EnergyShiftTable {
    pub nodes: Vec<ShiftNode>,
    pub nodes_per_cell: usize,
}

impl EnergyShiftTable {
    pub fn node(&self, k: usize, r: usize) -> &ShiftNode {
        &self.nodes[k * self.nodes_per_cell + r]
    }
}

fn shift_entry(mesh: &TensorMesh, band: &BandModel, eps: f64) -> ShiftEntry {
    let chi = band.cutoff().contains(eps);
    if !chi {
        return ShiftEntry {
            eps,
            chi,
            p: f64::NAN,
            cell: None,
            xi: f64::NAN,
            weight: 0.0,
        };
    }
    let p = band.p_of(eps).min(mesh.p_max);
    let cell = TensorMesh::locate(&mesh.p_edges, p);
    let xi = cell.map(|c| TensorMesh::local(&mesh.p_edges, c, p).clamp(-1.0, 1.0)).unwrap_or(f64::NAN);
    ShiftEntry {
        eps,
        chi,
        p,
        cell,
        xi,
        weight: band.w(eps),
    }
}

/// Shifted momenta of every node of `rule` in every p-cell, for j = −1, 0, +1.
pub fn build_shift_table(mesh: &TensorMesh, band: &BandModel, params: &ScatteringParams, rule: &QuadratureRule) -> EnergyShiftTable {
    let mut nodes = Vec::with_capacity(mesh.n_p() * rule.n);
    for k in 0..mesh.n_p() {
        for &xi in &rule.nodes {
            let p = mesh.p_at(k, xi);
            let eps = band.eps(p);
            let entries = [-1, 0, 1].map(|j| {
                if j == 0 {
                    ShiftEntry {
                        eps,
                        chi: band.cutoff().contains(eps),
                        p,
                        cell: Some(k),
                        xi,
                        weight: band.w(eps),
                    }
                } else {
                    shift_entry(mesh, band, eps + j as f64 * params.hbar_omega)
                }
            });
            nodes.push(ShiftNode { cell: k, xi, p, eps, entries });
        }
    }
    EnergyShiftTable {
        nodes,
        nodes_per_cell: rule.n,
    }
}

/// ∫_{-1}^{1} f(x, p, μ') dμ' at x-local ξ_x in x-cell i and p-local ξ_p in p-cell k.
pub fn mu_integral(field: &DgField, i: usize, xi_x: f64, k: usize, xi_p: f64) -> f64 {
    let sp = &field.space;
    let mesh = &sp.mesh;
    let lx: Vec<f64> = (0..sp.nb1).map(|a| legendre(a, xi_x).0).collect();
    let lp: Vec<f64> = (0..sp.nb1).map(|b| legendre(b, xi_p).0).collect();
    let mut s = 0.0;
    for m in 0..mesh.n_mu() {
        let c = field.cell(mesh.cell_index(i, k, m));
        let mut v = 0.0;
        for a in 0..sp.nb1 {
            for b in 0..sp.nb1 {
                v += c[sp.mode(a, b, 0)] * lx[a] * lp[b];
            }
        }
        s += mesh.dmu(m) * v;
    }
    s
}

/// Gain term at a tabulated node, for x-local ξ_x in x-cell i.
pub fn gain(field: &DgField, params: &ScatteringParams, i: usize, xi_x: f64, node: &ShiftNode) -> f64 {
    let mut g = 0.0;
    for j in [-1, 0, 1] {
        let e = node.entry(j);
        let c = params.c(j);
        if !e.chi || c == 0.0 {
            continue;
        }
        if let Some(kk) = e.cell {
            g += c * e.weight * mu_integral(field, i, xi_x, kk, e.xi);
        }
    }
    2.0 * PI * g
}

/// Q(f_h) = gain − ν f_h at (x-cell i, ξ_x, node, μ-cell m, ξ_μ).
pub fn pointwise_q(
    field: &DgField,
    band: &BandModel,
    params: &ScatteringParams,
    i: usize,
    xi_x: f64,
    node: &ShiftNode,
    m: usize,
    xi_mu: f64,
) -> f64 {
    let cell = field.space.mesh.cell_index(i, node.cell, m);
    let f = field.eval_local(cell, [xi_x, node.xi, xi_mu]);
    gain(field, params, i, xi_x, node) - collision_frequency(band, params, node.p) * f
}

/// One quadrature node of the pair form: A at ε, B at ε + ħω (B = A for elastic nodes).
#[derive(Debug, Clone)]
pub struct PairNode {
    pub cell_a: usize,
    pub xi_a: f64,
    pub cell_b: usize,
    pub xi_b: f64,
    /// 2π w_A p_A² W(ε_B).
    pub omega: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    la: Vec<f64>,
    lb: Vec<f64>,
}

#[derive(Debug)]
pub struct CollisionOperator {
    pub space: Arc<DgSpace>,
    pub band: BandModel,
    pub params: ScatteringParams,
    pub x_rule: QuadratureRule,
    pub pairs: Vec<PairNode>,
    pub elastic: Vec<PairNode>,
    /// Local p-coordinates of every evaluation site, per p-cell.
    pub sites: Vec<Vec<f64>>,
    /// max ν over the Gauss p-nodes of `x_rule`.
    pub nu_max: f64,
}

fn make_node(mesh: &TensorMesh, band: &BandModel, nb1: usize, pa: f64, wa: f64, ka: usize, kb: usize, hw: f64) -> PairNode {
    let eps_a = band.eps(pa);
    let eps_b = eps_a + hw;
    let pb = band.p_of(eps_b).min(mesh.p_max);
    let xi_a = TensorMesh::local(&mesh.p_edges, ka, pa).clamp(-1.0, 1.0);
    let xi_b = TensorMesh::local(&mesh.p_edges, kb, pb).clamp(-1.0, 1.0);
    PairNode {
        cell_a: ka,
        xi_a,
        cell_b: kb,
        xi_b,
        omega: 2.0 * PI * wa * pa * pa * band.w(eps_b),
        eps_a,
        eps_b,
        la: (0..nb1).map(|b| legendre(b, xi_a).0).collect(),
        lb: (0..nb1).map(|b| legendre(b, xi_b).0).collect(),
    }
}

impl CollisionOperator {
    /// `n_x_quad` must match the transport operator's node count so both use the
    /// same x-nodes; `n_sub` is the Gauss count per p-subinterval.
    pub fn new(space: &Arc<DgSpace>, band: BandModel, params: ScatteringParams, n_x_quad: usize, n_sub: usize) -> Result<Self> {
        let mesh = &space.mesh;
        let nb1 = space.nb1;
        let x_rule = QuadratureRule::gauss_legendre(n_x_quad)?;
        let sub = QuadratureRule::gauss_legendre(n_sub)?;
        let hw = params.hbar_omega;
        let emax = band.eps_max;
        let mut pairs = Vec::new();
        if params.c1() > 0.0 || params.cm1() > 0.0 {
            for ka in 0..mesh.n_p() {
                let (p0, p1) = (mesh.p_edges[ka], mesh.p_edges[ka + 1]);
                let (e0, e1) = (band.eps(p0), band.eps(p1));
                let top = emax - hw;
                if e0 >= top {
                    continue;
                }
                let p_hi = if e1 <= top { p1 } else { band.p_of(top).min(p1) };
                let e_hi = band.eps(p_hi);
                let mut cuts = vec![p0];
                for &pe in &mesh.p_edges {
                    let ea = band.eps(pe) - hw;
                    if ea > e0 && ea < e_hi {
                        let pa = band.p_of(ea);
                        if pa > p0 && pa < p_hi {
                            cuts.push(pa);
                        }
                    }
                }
                cuts.push(p_hi);
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * mesh.p_max);
                for w in cuts.windows(2) {
                    let (s0, s1) = (w[0], w[1]);
                    if s1 <= s0 {
                        continue;
                    }
                    let mid = 0.5 * (s0 + s1);
                    let pb_mid = band.p_of(band.eps(mid) + hw);
                    let kb = match TensorMesh::locate(&mesh.p_edges, pb_mid) {
                        Some(kb) => kb,
                        None => continue,
                    };
                    for (&xi, &wq) in sub.nodes.iter().zip(&sub.weights) {
                        let pa = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * xi;
                        let wa = 0.5 * (s1 - s0) * wq;
                        pairs.push(make_node(mesh, &band, nb1, pa, wa, ka, kb, hw));
                    }
                }
            }
        }
        let mut elastic = Vec::new();
        if params.c0 > 0.0 {
            for k in 0..mesh.n_p() {
                for (&xi, &wq) in sub.nodes.iter().zip(&sub.weights) {
                    let pa = mesh.p_at(k, xi);
                    let wa = 0.5 * mesh.dp(k) * wq;
                    elastic.push(make_node(mesh, &band, nb1, pa, wa, k, k, 0.0));
                }
            }
        }
        let mut sites = vec![Vec::new(); mesh.n_p()];
        for pn in pairs.iter().chain(&elastic) {
            sites[pn.cell_a].push(pn.xi_a);
            sites[pn.cell_b].push(pn.xi_b);
        }
        for s in &mut sites {
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        }
        let nu_max = (0..mesh.n_p())
            .flat_map(|k| x_rule.nodes.iter().map(move |&xi| (k, xi)))
            .map(|(k, xi)| collision_frequency(&band, &params, mesh.p_at(k, xi)))
            .fold(0.0, f64::max);
        Ok(CollisionOperator {
            space: space.clone(),
            band,
            params,
            x_rule,
            pairs,
            elastic,
            sites,
            nu_max,
        })
    }

    /// Residual C(f, φ_ℓ w) for every basis function φ_ℓ, where w = 1 (`wx = None`)
    /// or w = e^H with e^{−qΦ} given at the x Gauss nodes of each x-cell.
    pub fn residual(&self, field: &DgField, wx: Option<&[Vec<f64>]>) -> Vec<f64> {
        let sp = &self.space;
        let mesh = &sp.mesh;
        let (np, nm, nb1, nb) = (mesh.n_p(), mesh.n_mu(), sp.nb1, sp.nb);
        let nbb = nb1 * nb1;
        let slab = np * nm * nb;
        let entropy = wx.is_some();
        let c1 = self.params.c1();
        let cm1 = self.params.cm1();
        let c0 = self.params.c0;
        let mut out = vec![0.0; sp.n_dofs()];
        out.par_chunks_mut(slab).enumerate().for_each(|(i, rs)| {
            let dx = mesh.dx(i);
            let mut cx = vec![0.0; np * nm * nbb];
            let mut rx = vec![0.0; np * nm * nbb];
            let mut prof_a = vec![0.0; nm * nb1];
            let mut prof_b = vec![0.0; nm * nb1];
            for (qx, (&xq, &wq)) in self.x_rule.nodes.iter().zip(&self.x_rule.weights).enumerate() {
                let bx: Vec<f64> = (0..nb1).map(|a| legendre(a, xq).0).collect();
                let mut wxq = 0.5 * dx * wq;
                if let Some(w) = wx {
                    wxq *= w[i][qx];
                }
                for k in 0..np {
                    for m in 0..nm {
                        let c = field.cell(mesh.cell_index(i, k, m));
                        let base = (k * nm + m) * nbb;
                        for bc in 0..nbb {
                            let mut s = 0.0;
                            for a in 0..nb1 {
                                s += c[a * nbb + bc] * bx[a];
                            }
                            cx[base + bc] = s;
                        }
                    }
                }
                rx.iter_mut().for_each(|v| *v = 0.0);
                let profile = |prof: &mut [f64], kc: usize, l: &[f64]| -> f64 {
                    let mut total = 0.0;
                    for m in 0..nm {
                        let base = (kc * nm + m) * nbb;
                        for c in 0..nb1 {
                            let mut s = 0.0;
                            for b in 0..nb1 {
                                s += l[b] * cx[base + b * nb1 + c];
                            }
                            prof[m * nb1 + c] = s;
                        }
                        total += mesh.dmu(m) * prof[m * nb1];
                    }
                    total
                };
                // gain of size `g` (times ∫ test dμ) and loss rate `l` (times 2∫ f test dμ) at site (kc, lv)
                let deposit = |rx: &mut [f64], kc: usize, lv: &[f64], gain: f64, loss: f64, prof: &[f64]| {
                    for m in 0..nm {
                        let dmu = mesh.dmu(m);
                        let base = (kc * nm + m) * nbb;
                        for b in 0..nb1 {
                            rx[base + b * nb1] += lv[b] * gain * dmu;
                            for c in 0..nb1 {
                                rx[base + b * nb1 + c] -= lv[b] * 2.0 * loss * dmu / (2 * c + 1) as f64 * prof[m * nb1 + c];
                            }
                        }
                    }
                };
                for pn in &self.pairs {
                    let fa = profile(&mut prof_a, pn.cell_a, &pn.la);
                    let fb = profile(&mut prof_b, pn.cell_b, &pn.lb);
                    let (ea, eb) = if entropy { (pn.eps_a.exp(), pn.eps_b.exp()) } else { (1.0, 1.0) };
                    // emission B → A at rate c₁, absorption A → B at rate c₋₁
                    deposit(&mut rx, pn.cell_a, &pn.la, ea * c1 * pn.omega * fb, ea * cm1 * pn.omega, &prof_a);
                    deposit(&mut rx, pn.cell_b, &pn.lb, eb * cm1 * pn.omega * fa, eb * c1 * pn.omega, &prof_b);
                }
                for pn in &self.elastic {
                    let fa = profile(&mut prof_a, pn.cell_a, &pn.la);
                    let ea = if entropy { pn.eps_a.exp() } else { 1.0 };
                    deposit(&mut rx, pn.cell_a, &pn.la, ea * c0 * pn.omega * fa, ea * c0 * pn.omega, &prof_a);
                }
                for k in 0..np {
                    for m in 0..nm {
                        let cell = k * nm + m;
                        let base = cell * nbb;
                        let r = &mut rs[cell * nb..(cell + 1) * nb];
                        for a in 0..nb1 {
                            let s = wxq * bx[a];
                            for bc in 0..nbb {
                                r[a * nbb + bc] += s * rx[base + bc];
                            }
                        }
                    }
                }
            }
        });
        out
    }

    /// Σ over cells of the residual tested against 1: the rate of mass change.
    pub fn mass_rate(&self, residual: &[f64]) -> f64 {
        residual.chunks(self.space.nb).map(|blk| blk[0]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_thermal() {
        let s = ScatteringParams::thermal(0.1, 0.5, 0.0).unwrap();
        assert!((s.c1() * (-0.5f64).exp() - s.cm1()).abs() < 1e-15);
        assert!(s.c1() >= s.cm1());
        assert!(ScatteringParams::new(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn frequency_examples() {
        let band = BandModel::parabolic(1.0, 3.0).unwrap();
        let p = ScatteringParams {
            coupling: 0.0,
            n_ph: 0.0,
            hbar_omega: 0.0,
            c0: 0.3,
        };
        // make all three c_j equal: c1 = (n+1)K, c-1 = nK; pick K, n with both = 0.3
        let q = ScatteringParams {
            coupling: 0.3,
            n_ph: 1.0,
            hbar_omega: 0.0,
            c0: 0.3,
        };
        let nu = collision_frequency(&band, &q, 1.2);
        let expect = (0.6 + 0.3 + 0.3) * 4.0 * PI * 1.2;
        assert!((nu - expect).abs() < 1e-12);
        assert!(collision_frequency(&band, &p, 1.2) > 0.0);
        // both inelastic shifts outside the window
        let narrow = BandModel::parabolic(1.0, 1.0).unwrap();
        let r = ScatteringParams::new(1.0, 1.0, 0.6, 0.0).unwrap();
        assert_eq!(collision_frequency(&narrow, &r, 0.8), 0.0);
    }

    #[test]
    fn shift_table_examples() {
        let mesh = TensorMesh::build(1, 4, 1, 1.0, 2.0).unwrap();
        let band = BandModel::parabolic(1.0, 2.0).unwrap();
        let params = ScatteringParams::new(1.0, 1.0, 0.5, 0.0).unwrap();
        let rule = QuadratureRule::gauss_legendre(3).unwrap();
        let t = build_shift_table(&mesh, &band, &params, &rule);
        for n in &t.nodes {
            let e = n.entry(0);
            assert_eq!(e.cell, Some(n.cell));
            assert!((e.weight - n.p * n.p / n.p).abs() < 1e-14);
            for j in [-1, 1] {
                let s = n.entry(j);
                if s.chi {
                    assert!((band.eps(s.p) - s.eps).abs() < 1e-10);
                    assert!(s.cell.is_some());
                } else {
                    assert!(s.cell.is_none());
                }
            }
        }
        let e = shift_entry(&mesh, &band, 1.5);
        assert!((e.p - 3f64.sqrt()).abs() < 1e-15);
        assert!((e.weight - 3f64.sqrt()).abs() < 1e-15);
        assert!(!shift_entry(&mesh, &band, 2.1).chi);
    }

    fn setup(np: usize, kane: bool) -> (Arc<DgSpace>, CollisionOperator) {
        let mesh = TensorMesh::build(2, np, 4, 1.0, 3.0).unwrap();
        let sp = DgSpace::new(mesh, 1).unwrap();
        let band = if kane {
            BandModel::kane(1.0, 0.3, 3.0).unwrap()
        } else {
            BandModel::parabolic(1.0, 3.0).unwrap()
        };
        let params = ScatteringParams::thermal(0.2, 0.7, 0.05).unwrap();
        let op = CollisionOperator::new(&sp, band, params, 3, 5).unwrap();
        (sp, op)
    }

    fn bumpy(sp: &Arc<DgSpace>) -> DgField {
        DgField::project(sp, |x, p, mu| (1.0 + 0.4 * (5.0 * x).sin() * mu + 0.3 * (4.0 * p).cos()) * (-0.5 * p * p).exp())
    }

    #[test]
    fn pair_form_conserves_mass() {
        for kane in [false, true] {
            let (sp, op) = setup(7, kane);
            let f = bumpy(&sp);
            let r = op.residual(&f, None);
            let scale: f64 = r.iter().map(|v| v.abs()).sum();
            assert!(scale > 1e-4);
            assert!(op.mass_rate(&r).abs() < 1e-14 * scale);
        }
    }

    #[test]
    fn pair_form_dissipates() {
        for kane in [false, true] {
            let (sp, op) = setup(6, kane);
            let f = bumpy(&sp);
            let wx = vec![vec![1.3, 0.8, 1.1]; sp.mesh.n_x()];
            let r = op.residual(&f, Some(&wx));
            let d: f64 = r.iter().zip(&f.coeffs).map(|(a, b)| a * b).sum();
            assert!(d < 0.0, "{d}");
        }
    }

    // Galerkin residual against a fine composite quadrature of the pointwise Q.
    #[test]
    fn residual_matches_pointwise_oracle() {
        let (sp, op) = setup(5, false);
        let f = bumpy(&sp);
        let r = op.residual(&f, None);
        let mesh = &sp.mesh;
        let g = QuadratureRule::gauss_legendre(4).unwrap();
        let nsub = 1600;
        let (i, k) = (1, 2);
        let mut oracle = vec![0.0; sp.nb];
        for (&sx, &wx) in op.x_rule.nodes.iter().zip(&op.x_rule.weights) {
            for s in 0..nsub {
                let a = -1.0 + 2.0 * s as f64 / nsub as f64;
                let b = a + 2.0 / nsub as f64;
                for (&t, &wt) in g.nodes.iter().zip(&g.weights) {
                    let xi = 0.5 * (a + b) + 0.5 * (b - a) * t;
                    let w = 0.5 * (b - a) * wt;
                    let p = mesh.p_at(k, xi);
                    let node = ShiftNode {
                        cell: k,
                        xi,
                        p,
                        eps: op.band.eps(p),
                        entries: [-1, 0, 1].map(|j| {
                            if j == 0 {
                                ShiftEntry { eps: op.band.eps(p), chi: true, p, cell: Some(k), xi, weight: op.band.w(op.band.eps(p)) }
                            } else {
                                shift_entry(mesh, &op.band, op.band.eps(p) + j as f64 * op.params.hbar_omega)
                            }
                        }),
                    };
                    for m in 0..mesh.n_mu() {
                        for (&sm, &wm) in g.nodes.iter().zip(&g.weights) {
                            let q = pointwise_q(&f, &op.band, &op.params, i, sx, &node, m, sm);
                            let jac = 0.125 * mesh.dx(i) * mesh.dp(k) * mesh.dmu(m) * wx * w * wm * p * p;
                            if m == 1 {
                                for ai in 0..2 {
                                    for bi in 0..2 {
                                        for ci in 0..2 {
                                            let phi = legendre(ai, sx).0 * legendre(bi, xi).0 * legendre(ci, sm).0;
                                            oracle[sp.mode(ai, bi, ci)] += jac * q * phi;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let got = &r[mesh.cell_index(i, k, 1) * sp.nb..][..sp.nb];
        let scale = oracle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-4 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn maxwellian_residual_shrinks_with_refinement() {
        let mut last = f64::INFINITY;
        for np in [8, 16, 32] {
            let (sp, op) = setup(np, false);
            let f = DgField::project(&sp, |_, p, _| (-op.band.eps(p)).exp());
            let r = op.residual(&f, None);
            let mut m = r.clone();
            sp.mass.apply_inverse(&sp.mesh, &mut m);
            let err = sp.mass.quadratic_form(&sp.mesh, &m).sqrt();
            assert!(err < 0.3 * last, "{err} {last}");
            last = err;
        }
    }
}
