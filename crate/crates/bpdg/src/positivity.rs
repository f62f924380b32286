//! Time-step bounds that keep cell averages nonnegative, and the limiter that
//! restores nonnegativity at the control points.
//!
//! One forward-Euler step is split as
//!   f̄ⁿ⁺¹ = α Σ_l s_l [f̄ − (Δt/(α s_l)) F_l] + (1−α) [f̄ + (Δt/(1−α)) Γ_C],
//! where F_l is the net flux through the two faces normal to direction l. Each
//! bracket is a nonnegative combination of control values when Δt respects the
//! matching kernel below.

use crate::collision::{pointwise_q, CollisionOperator, EnergyShiftTable, ScatteringParams};
use crate::band::BandModel;
use crate::error::{Error, Result};
use crate::field::DgField;
use crate::quadrature::{legendre, lobatto_count_for_degree, QuadratureRule};
use crate::transport::{StageData, TransportOperator};
use rayon::prelude::*;

/// α- and s-free transport kernels, each the minimum over cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportKernels {
    pub kx: f64,
    pub kp: f64,
    pub kmu: f64,
}

impl TransportKernels {
    pub fn as_array(&self) -> [f64; 3] {
        [self.kx, self.kp, self.kmu]
    }

    /// 1/Σ(1/K_l): the transport bound at α = 1 with equalizing weights.
    pub fn combined(&self) -> f64 {
        let s: f64 = self.as_array().iter().map(|k| 1.0 / k).sum();
        1.0 / s
    }

    /// s_l ∝ 1/K_l, so that α s_l K_l is the same for every l.
    pub fn equalizing_weights(&self) -> [f64; 3] {
        let inv = self.as_array().map(|k| 1.0 / k);
        let s: f64 = inv.iter().sum();
        if s == 0.0 {
            return [1.0 / 3.0; 3];
        }
        inv.map(|v| v / s)
    }
}

/// Endpoint Lobatto weights (fraction of the cell) in x, p, μ for a degree-k space.
pub fn lobatto_end_weights(degree: usize) -> Result<[f64; 3]> {
    let wx = QuadratureRule::gauss_lobatto(lobatto_count_for_degree(degree))?.end_weight();
    let wp = QuadratureRule::gauss_lobatto(lobatto_count_for_degree(degree + 2))?.end_weight();
    Ok([wx, wp, wx])
}

/// Per-cell kernels; cells where a constraint is absent give +∞.
pub fn transport_kernels(op: &TransportOperator, data: &StageData) -> Result<TransportKernels> {
    let sp = &op.space;
    let mesh = &sp.mesh;
    let [wx, wp, wm] = lobatto_end_weights(sp.degree)?;
    let q = op.coeffs.q.abs();
    let emax: Vec<f64> = data.e.iter().map(|r| r.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect();
    let mut k = TransportKernels {
        kx: f64::INFINITY,
        kp: f64::INFINITY,
        kmu: f64::INFINITY,
    };
    for m in 0..mesh.n_mu() {
        let (a, b) = (mesh.mu_edges[m], mesh.mu_edges[m + 1]);
        let mu_abs = a.abs().max(b.abs());
        let one_minus = (1.0 - a * a).max(1.0 - b * b);
        for kk in 0..mesh.n_p() {
            let vmax = op.max_velocity(kk);
            let p_low = if kk == 0 { op.min_p_node(0) } else { mesh.p_edges[kk] };
            for i in 0..mesh.n_x() {
                if vmax * mu_abs > 0.0 {
                    k.kx = k.kx.min(wx * mesh.dx(i) / (vmax * mu_abs));
                }
                let qe = q * emax[i];
                if qe * mu_abs > 0.0 {
                    k.kp = k.kp.min(wp * mesh.dp(kk) / (qe * mu_abs));
                }
                if qe * one_minus > 0.0 {
                    k.kmu = k.kmu.min(wm * mesh.dmu(m) * p_low / (qe * one_minus));
                }
            }
        }
    }
    if k.kx == 0.0 || k.kp == 0.0 || k.kmu == 0.0 {
        return Err(Error::Domain("degenerate mesh: zero transport kernel".into()));
    }
    Ok(k)
}

/// (dt_x, dt_p, dt_μ) = α s_l K_l.
pub fn transport_cfl(op: &TransportOperator, data: &StageData, alpha: f64, s: [f64; 3]) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if s.iter().any(|v| *v < 0.0) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("simplex weights {s:?} must be nonnegative and sum to 1")));
    }
    let k = transport_kernels(op, data)?;
    let f = |sl: f64, kl: f64| if kl.is_infinite() { f64::INFINITY } else { alpha * sl * kl };
    Ok((f(s[0], k.kx), f(s[1], k.kp), f(s[2], k.kmu)))
}

/// Whole-Q bound at cell level: min over cells with Γ_C < 0 of f̄/|Γ_C|, α-free.
/// `residual` is the collision residual; returns +∞ if no cell average decreases.
pub fn collision_kernel(field: &DgField, residual: &[f64]) -> f64 {
    let sp = &field.space;
    let nb = sp.nb;
    residual
        .par_chunks(nb)
        .enumerate()
        .map(|(cell, blk)| {
            let (i, k, m) = sp.mesh.cell_of_index(cell);
            let g = blk[0] / sp.mesh.volume(i, k, m);
            if g < 0.0 {
                field.avg(cell).max(0.0) / -g
            } else {
                f64::INFINITY
            }
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// (1−α) times the cell-level whole-Q kernel.
pub fn collision_cfl(coll: &CollisionOperator, field: &DgField, alpha: f64) -> f64 {
    let r = coll.residual(field, None);
    (1.0 - alpha) * collision_kernel(field, &r)
}

/// (1−α) min over Gauss points with Q(f_h) < 0 of f/|Q|, using a shift table
/// built on the Gauss p-nodes and `rule` in x and μ.
pub fn collision_cfl_pointwise(
    field: &DgField,
    band: &BandModel,
    params: &ScatteringParams,
    table: &EnergyShiftTable,
    rule: &QuadratureRule,
    alpha: f64,
) -> f64 {
    let mesh = &field.space.mesh;
    let kernel = (0..mesh.n_x())
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for &sx in &rule.nodes {
                for node in &table.nodes {
                    for m in 0..mesh.n_mu() {
                        for &sm in &rule.nodes {
                            let q = pointwise_q(field, band, params, i, sx, node, m, sm);
                            if q < 0.0 {
                                let f = field.eval_local(mesh.cell_index(i, node.cell, m), [sx, node.xi, sm]);
                                best = best.min(f.max(0.0) / -q);
                            }
                        }
                    }
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    (1.0 - alpha) * kernel
}

/// Field-independent loss bound (1−α)/ν_max.
pub fn collision_cfl_split(nu_max: f64, alpha: f64) -> f64 {
    if nu_max <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 - alpha) / nu_max
    }
}

/// Maximizes min(αA, (1−α)B): α* = B/(A+B), dt = AB/(A+B).
pub fn optimal_alpha(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a >= 0.0 && b >= 0.0) || (a == 0.0 && b == 0.0) {
        return Err(Error::Step(format!("no admissible step: transport kernel {a}, collision kernel {b}")));
    }
    if b.is_infinite() && a.is_infinite() {
        return Err(Error::Step("both step kernels are unbounded".into()));
    }
    if b.is_infinite() {
        return Ok((1.0 - 1e-9, a));
    }
    if a.is_infinite() {
        return Ok((1e-9, b));
    }
    Ok((b / (a + b), a * b / (a + b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Transport,
    Collision,
    CollisionSplit,
    Balanced,
}

impl Binding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Binding::Transport => "transport",
            Binding::Collision => "collision",
            Binding::CollisionSplit => "collision_split",
            Binding::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CFLBudget {
    pub dt_x: f64,
    pub dt_p: f64,
    pub dt_mu: f64,
    pub dt_collision: f64,
    pub alpha: f64,
    pub s: [f64; 3],
    pub dt: f64,
    pub safety: f64,
    pub binding: Binding,
}

/// Full step budget. `coll` carries the collision operator and its residual at
/// the current state; `alpha` overrides the optimal split.
pub fn budget(
    op: &TransportOperator,
    data: &StageData,
    coll: Option<(&CollisionOperator, &DgField, &[f64])>,
    safety: f64,
    alpha: Option<f64>,
) -> Result<CFLBudget> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Config(format!("cfl safety must be in (0, 1], got {safety}")));
    }
    let k = transport_kernels(op, data)?;
    let a = k.combined();
    let s = k.equalizing_weights();
    let (mut b, mut split) = (f64::INFINITY, false);
    if let Some((c, f, r)) = coll {
        b = collision_kernel(f, r);
        if b == 0.0 {
            b = if c.nu_max > 0.0 { 1.0 / c.nu_max } else { f64::INFINITY };
            split = true;
        }
    }
    let (alpha, dt0, binding) = match alpha {
        Some(al) => {
            if !(al > 0.0 && al <= 1.0) || (al == 1.0 && b.is_finite()) {
                return Err(Error::Config(format!("alpha must be in (0, 1), got {al}")));
            }
            let (t, c) = (al * a, (1.0 - al) * b);
            let bind = if t <= c {
                Binding::Transport
            } else if split {
                Binding::CollisionSplit
            } else {
                Binding::Collision
            };
            (al, t.min(c), bind)
        }
        None => {
            let (al, dt) = optimal_alpha(a, b)?;
            let bind = if b.is_infinite() {
                Binding::Transport
            } else if a.is_infinite() {
                if split {
                    Binding::CollisionSplit
                } else {
                    Binding::Collision
                }
            } else if split {
                Binding::CollisionSplit
            } else {
                Binding::Balanced
            };
            (al, dt, bind)
        }
    };
    if !(dt0 > 0.0) || dt0.is_infinite() {
        return Err(Error::Step(format!("step size {dt0} is not usable")));
    }
    let scale = |sl: f64, kl: f64| if kl.is_infinite() { f64::INFINITY } else { alpha * sl * kl };
    Ok(CFLBudget {
        dt_x: scale(s[0], k.kx),
        dt_p: scale(s[1], k.kp),
        dt_mu: scale(s[2], k.kmu),
        dt_collision: (1.0 - alpha) * b,
        alpha,
        s,
        dt: safety * dt0,
        safety,
        binding,
    })
}

/// Local points where nonnegativity is enforced, with basis values tabulated.
#[derive(Debug, Clone)]
pub struct ControlPointSet {
    pub nb: usize,
    /// Points shared by every cell.
    pub common: Vec<[f64; 3]>,
    /// Extra points per p-cell (collision evaluation sites).
    pub per_p: Vec<Vec<[f64; 3]>>,
    common_phi: Vec<f64>,
    per_p_phi: Vec<Vec<f64>>,
}

fn tabulate(pts: &[[f64; 3]], nb1: usize) -> Vec<f64> {
    let nb = nb1 * nb1 * nb1;
    let mut out = vec![0.0; pts.len() * nb];
    for (r, pt) in pts.iter().enumerate() {
        let lx: Vec<f64> = (0..nb1).map(|a| legendre(a, pt[0]).0).collect();
        let lp: Vec<f64> = (0..nb1).map(|a| legendre(a, pt[1]).0).collect();
        let lm: Vec<f64> = (0..nb1).map(|a| legendre(a, pt[2]).0).collect();
        for a in 0..nb1 {
            for b in 0..nb1 {
                for c in 0..nb1 {
                    out[r * nb + (a * nb1 + b) * nb1 + c] = lx[a] * lp[b] * lm[c];
                }
            }
        }
    }
    out
}

impl ControlPointSet {
    /// Lobatto_x × G × G ∪ G × Lobatto_p × G ∪ G × G × Lobatto_μ ∪ G³, with G the
    /// transport Gauss rule, plus collision sites × G_x × G_μ when given.
    pub fn new(op: &TransportOperator, coll: Option<&CollisionOperator>) -> Result<Self> {
        let sp = &op.space;
        let g = &op.rule.nodes;
        let lx = QuadratureRule::gauss_lobatto(lobatto_count_for_degree(sp.degree))?.nodes;
        let lp = QuadratureRule::gauss_lobatto(lobatto_count_for_degree(sp.degree + 2))?.nodes;
        let mut common = Vec::new();
        for &a in g {
            for &b in g {
                for &l in &lx {
                    common.push([l, a, b]);
                }
                for &l in &lp {
                    common.push([a, l, b]);
                }
                for &l in &lx {
                    common.push([a, b, l]);
                }
                for &c in g {
                    common.push([a, b, c]);
                }
            }
        }
        let np = sp.mesh.n_p();
        let per_p: Vec<Vec<[f64; 3]>> = (0..np)
            .map(|k| match coll {
                Some(c) => c.sites[k]
                    .iter()
                    .flat_map(|&s| g.iter().flat_map(move |&a| g.iter().map(move |&b| [a, s, b])))
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        let common_phi = tabulate(&common, sp.nb1);
        let per_p_phi = per_p.iter().map(|pts| tabulate(pts, sp.nb1)).collect();
        Ok(ControlPointSet {
            nb: sp.nb,
            common,
            per_p,
            common_phi,
            per_p_phi,
        })
    }

    pub fn n_points(&self, k: usize) -> usize {
        self.common.len() + self.per_p[k].len()
    }

    /// Minimum of the cell polynomial over the control points of p-cell k.
    pub fn cell_min(&self, coef: &[f64], k: usize) -> f64 {
        let nb = self.nb;
        let dot = |phi: &[f64]| phi.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
        let a = self.common_phi.chunks(nb).map(dot).fold(f64::INFINITY, f64::min);
        let b = self.per_p_phi[k].chunks(nb).map(dot).fold(f64::INFINITY, f64::min);
        a.min(b)
    }

    /// Minimum and maximum over every control point of every cell.
    pub fn field_range(&self, field: &DgField) -> (f64, f64) {
        let sp = &field.space;
        let nb = self.nb;
        field
            .coeffs
            .par_chunks(nb)
            .enumerate()
            .map(|(cell, coef)| {
                let (_, k, _) = sp.mesh.cell_of_index(cell);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for phi in self.common_phi.chunks(nb).chain(self.per_p_phi[k].chunks(nb)) {
                    let v: f64 = phi.iter().zip(coef).map(|(a, b)| a * b).sum();
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            })
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)))
    }
}

/// Relative undershoot (against the cell average) below which a cell is left alone.
pub const LIMITER_SLACK: f64 = 1e-14;

/// Scales each cell's deviation from its average by θ = min(1, f̄/(f̄ − m)).
/// Returns the number of cells that were modified.
pub fn limit_nonnegative(field: &mut DgField, cps: &ControlPointSet) -> Result<usize> {
    let sp = field.space.clone();
    let nb = sp.nb;
    let avgs: Vec<f64> = (0..sp.mesh.n_cells()).map(|c| field.avg(c)).collect();
    if let Some((cell, &v)) = avgs.iter().enumerate().find(|(_, v)| **v < 0.0 || v.is_nan()) {
        let (i, k, m) = sp.mesh.cell_of_index(cell);
        return Err(Error::NegativeAverage { i, k, m, value: v });
    }
    let count = field
        .coeffs
        .par_chunks_mut(nb)
        .enumerate()
        .map(|(cell, coef)| {
            let (_, k, _) = sp.mesh.cell_of_index(cell);
            let fbar = avgs[cell];
            let m = cps.cell_min(coef, k);
            // round-off left by a previous pass is accepted, which makes the limiter idempotent
            if m >= -LIMITER_SLACK * fbar {
                return 0;
            }
            let theta = (fbar / (fbar - m)).clamp(0.0, 1.0);
            for c in coef.iter_mut() {
                *c *= theta;
            }
            coef[0] += (1.0 - theta) * fbar;
            1
        })
        .sum();
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DgSpace;
    use crate::mesh::TensorMesh;
    use crate::poisson::{PoissonBc, PotentialSolution};
    use crate::transport::{BoundarySpec, Weighting, XBoundary};
    use std::sync::Arc;

    fn setup(nx: usize, e0: f64) -> (Arc<DgSpace>, TransportOperator, StageData) {
        let mesh = TensorMesh::build(nx, 4, 4, 1.0, 2.0).unwrap();
        let sp = DgSpace::new(mesh, 1).unwrap();
        let band = BandModel::parabolic(1.0, 2.0).unwrap();
        let op = TransportOperator::new(&sp, band, 1.0, BoundarySpec { x: XBoundary::Periodic }, 3).unwrap();
        let pot = PotentialSolution::from_global_poly(&sp.mesh.x_edges, &[0.0, -e0], PoissonBc::Periodic);
        let d = op.stage_data(&pot, Weighting::Standard).unwrap();
        (sp, op, d)
    }

    #[test]
    fn optimal_alpha_examples() {
        assert_eq!(optimal_alpha(1.0, 1.0).unwrap(), (0.5, 0.5));
        assert_eq!(optimal_alpha(1.0, 3.0).unwrap(), (0.75, 0.75));
        let (a, dt) = optimal_alpha(2.0, f64::INFINITY).unwrap();
        assert_eq!(dt, 2.0);
        assert!(a < 1.0 && a > 1.0 - 1e-8);
        assert!(optimal_alpha(0.0, 0.0).is_err());
    }

    #[test]
    fn end_weights() {
        let w = lobatto_end_weights(1).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 1.0 / 6.0).abs() < 1e-15);
        let w2 = lobatto_end_weights(2).unwrap();
        assert!((w2[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((w2[1] - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn zero_field_leaves_only_x() {
        let (_, op, d) = setup(4, 0.0);
        let (dx, dp, dm) = transport_cfl(&op, &d, 0.5, [1.0, 0.0, 0.0]).unwrap();
        assert!(dx.is_finite());
        assert!(dp.is_infinite() && dm.is_infinite());
        // parabolic: v ≤ p_max
        assert!(dx >= 0.5 * 0.5 * 0.25 / 2.0);
    }

    #[test]
    fn dt_x_scales_with_dx() {
        let (_, op1, d1) = setup(8, 0.7);
        let (_, op2, d2) = setup(4, 0.7);
        let k1 = transport_kernels(&op1, &d1).unwrap();
        let k2 = transport_kernels(&op2, &d2).unwrap();
        assert!((k2.kx - 2.0 * k1.kx).abs() < 1e-14 * k2.kx);
        assert_eq!(k1.kp, k2.kp);
    }

    #[test]
    fn equalizing_never_worse_than_uniform() {
        let (_, op, d) = setup(4, 0.7);
        let k = transport_kernels(&op, &d).unwrap();
        let s = k.equalizing_weights();
        let (a, b, c) = transport_cfl(&op, &d, 1.0, s).unwrap();
        assert!((a - b).abs() < 1e-14 * a && (b - c).abs() < 1e-14 * b);
        let (u1, u2, u3) = transport_cfl(&op, &d, 1.0, [1.0 / 3.0; 3]).unwrap();
        assert!(u1.min(u2).min(u3) <= a * (1.0 + 1e-14));
    }

    #[test]
    fn split_bound() {
        assert!(collision_cfl_split(0.0, 0.5).is_infinite());
        assert_eq!(collision_cfl_split(2.0, 0.5), 0.25);
        assert_eq!(collision_cfl_split(4.0, 0.5), 0.125);
    }

    #[test]
    fn limiter_examples() {
        let (sp, op, _) = setup(1, 0.0);
        let cps = ControlPointSet::new(&op, None).unwrap();
        // f = 1 + 1.5 ξ_x on each cell has min −0.5 at the Lobatto x-endpoint
        let mut f = DgField::project(&sp, |_, _, _| 1.0);
        for c in 0..sp.mesh.n_cells() {
            f.cell_mut(c)[sp.mode(1, 0, 0)] = 1.5;
        }
        let before: Vec<f64> = (0..sp.mesh.n_cells()).map(|c| f.avg(c)).collect();
        let n = limit_nonnegative(&mut f, &cps).unwrap();
        assert_eq!(n, sp.mesh.n_cells());
        for c in 0..sp.mesh.n_cells() {
            assert!((f.avg(c) - before[c]).abs() < 1e-14);
            assert!((f.cell(c)[sp.mode(1, 0, 0)] - 1.0).abs() < 1e-14);
            assert!(cps.cell_min(f.cell(c), 0).abs() < 1e-14);
        }
        let again = f.clone();
        assert_eq!(limit_nonnegative(&mut f, &cps).unwrap(), 0);
        assert_eq!(again.coeffs, f.coeffs);
        let mut z = DgField::zeros(&sp);
        z.cell_mut(0)[sp.mode(0, 0, 1)] = 0.3;
        limit_nonnegative(&mut z, &cps).unwrap();
        assert!(z.cell(0).iter().all(|v| v.abs() < 1e-15));
        let mut neg = DgField::project(&sp, |_, _, _| -1.0);
        assert!(matches!(limit_nonnegative(&mut neg, &cps), Err(Error::NegativeAverage { .. })));
    }
}
