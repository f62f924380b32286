//! Seeded property batteries behind `verify-invariants`.

use crate::band::BandModel;
use crate::collision::{CollisionOperator, ScatteringParams};
use crate::config::SimulationConfig;
use crate::curvilinear::verify_beta;
use crate::diagnostics::{entropy_quad_count, semi_discrete_entropy_check, EntropyCheck};
use crate::error::{Error, Result};
use crate::field::{DgField, DgSpace};
use crate::integrator::RkOrder;
use crate::mesh::TensorMesh;
use crate::poisson::{
    compute_density, solve_dirichlet, solve_periodic, solve_periodic_neutralized, PiecewisePoly, PoissonBc, PotentialSolution,
};
use crate::positivity::{limit_nonnegative, optimal_alpha, ControlPointSet, LIMITER_SLACK};
use crate::quadrature::QuadratureRule;
use crate::transport::{BoundarySpec, TransportOperator, Weighting, XBoundary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonBattery {
    /// Largest of the equation, E = −Φ', continuity and boundary residuals.
    pub dirichlet_residual: f64,
    pub periodic_residual: f64,
    pub compat_rejected: bool,
    /// |∫Φ| / L for the periodic solution.
    pub periodic_mean: f64,
}

fn poly_residuals(sol: &PotentialSolution, rho: &PiecewisePoly, n: f64, coupling: f64, xs: &[f64]) -> f64 {
    let d1 = sol.phi.derivative();
    let d2 = d1.derivative();
    let edges = &sol.phi.edges;
    let mut worst: f64 = 0.0;
    for &x in xs {
        let i = TensorMesh::locate(edges, x).expect("point inside the mesh");
        let eq = -d2.eval_in(i, x) - coupling * (n - rho.eval_in(i, x));
        let ee = sol.e.eval_in(i, x) + d1.eval_in(i, x);
        worst = worst.max(eq.abs()).max(ee.abs());
    }
    for i in 1..edges.len() - 1 {
        let x = edges[i];
        worst = worst
            .max((sol.phi.eval_in(i - 1, x) - sol.phi.eval_in(i, x)).abs())
            .max((sol.e.eval_in(i - 1, x) - sol.e.eval_in(i, x)).abs());
    }
    worst
}

/// Dirichlet and periodic solves for a random cubic density on a nonuniform
/// x-mesh, residuals at `n_points` random points.
pub fn poisson_battery(seed: u64, n_points: usize) -> Result<PoissonBattery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 1.3;
    let mut edges = vec![0.0];
    for _ in 0..7 {
        let last = *edges.last().unwrap();
        edges.push(last + rng.random_range(0.5..1.5));
    }
    let s = len / edges.last().unwrap();
    edges.iter_mut().for_each(|e| *e *= s);
    edges.push(len);
    edges.dedup();
    let a: Vec<f64> = (0..4)
        .map(|j| if j == 0 { rng.random_range(0.5..1.5) } else { rng.random_range(-1.0..1.0) })
        .collect();
    let rho = PotentialSolution::from_global_poly(&edges, &a, PoissonBc::Periodic).phi;
    let coupling = 2.5;
    let xs: Vec<f64> = (0..n_points).map(|_| rng.random_range(0.0..len)).collect();

    let n_d = 1.2;
    let phi0 = 0.7;
    let d = solve_dirichlet(&rho, &PiecewisePoly::constant(&edges, n_d), coupling, phi0)?;
    let last = edges.len() - 2;
    let dres = poly_residuals(&d, &rho, n_d, coupling, &xs)
        .max(d.phi.eval_in(0, 0.0).abs())
        .max((d.phi.eval_in(last, len) - phi0).abs());

    let mean: f64 = a.iter().enumerate().map(|(j, c)| c * len.powi(j as i32 + 1) / (j + 1) as f64).sum::<f64>() / len;
    let p = solve_periodic(&rho, &PiecewisePoly::constant(&edges, mean), coupling)?;
    let pres = poly_residuals(&p, &rho, mean, coupling, &xs)
        .max((p.phi.eval_in(0, 0.0) - p.phi.eval_in(last, len)).abs())
        .max((p.e.eval_in(0, 0.0) - p.e.eval_in(last, len)).abs());
    let rejected = matches!(
        solve_periodic(&rho, &PiecewisePoly::constant(&edges, 1.05 * mean), coupling),
        Err(Error::Compatibility { .. })
    );
    Ok(PoissonBattery {
        dirichlet_residual: dres,
        periodic_residual: pres,
        compat_rejected: rejected,
        periodic_mean: p.phi.integral().abs() / len,
    })
}

/// Operators on a small periodic mesh used by the batteries.
pub struct Fixture {
    pub space: Arc<DgSpace>,
    pub band: BandModel,
    pub transport: TransportOperator,
    pub collision: CollisionOperator,
}

impl Fixture {
    pub fn new(n: (usize, usize, usize), degree: usize, p_max: f64, n_quad: usize) -> Result<Self> {
        let mesh = TensorMesh::build(n.0, n.1, n.2, 1.0, p_max)?;
        let space = DgSpace::new(mesh, degree)?;
        let band = BandModel::parabolic(1.0, p_max)?;
        let transport = TransportOperator::new(&space, band, 1.0, BoundarySpec { x: XBoundary::Periodic }, n_quad)?;
        let params = ScatteringParams::thermal(0.3, 0.4, 0.1)?;
        let collision = CollisionOperator::new(&space, band, params, n_quad, degree + 4)?;
        Ok(Fixture {
            space,
            band,
            transport,
            collision,
        })
    }

    /// Random coefficients with each cell average shifted into [0.05, 1.05).
    pub fn random_field(&self, rng: &mut ChaCha8Rng) -> DgField {
        let mut f = DgField::zeros(&self.space);
        for cell in 0..self.space.mesh.n_cells() {
            for c in f.cell_mut(cell) {
                *c = rng.random_range(-1.0..1.0);
            }
            let target = rng.random_range(0.05..1.05);
            let avg = f.avg(cell);
            f.cell_mut(cell)[0] += target - avg;
        }
        f
    }

    /// Random field, limited so that it is nonnegative at every control point.
    pub fn random_positive_field(&self, rng: &mut ChaCha8Rng, cps: &ControlPointSet) -> Result<DgField> {
        let mut f = self.random_field(rng);
        limit_nonnegative(&mut f, cps)?;
        Ok(f)
    }

    /// Neutralized periodic potential of the field's own density.
    pub fn potential(&self, f: &DgField) -> Result<PotentialSolution> {
        let rho = compute_density(f);
        let edges = &self.space.mesh.x_edges;
        let mean = rho.integral() / (edges[edges.len() - 1] - edges[0]);
        solve_periodic_neutralized(&rho, &PiecewisePoly::constant(edges, mean), 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimiterBattery {
    pub cells: usize,
    pub limited: usize,
    /// max |f̄_after − f̄_before| / f̄_before.
    pub max_avg_change: f64,
    pub second_pass_limited: usize,
    pub max_second_pass_change: f64,
    /// min over cells of (min control value)/f̄ after limiting.
    pub min_control_rel: f64,
}

pub fn limiter_battery(seed: u64, degree: usize) -> Result<LimiterBattery> {
    let fx = Fixture::new((10, 10, 10), degree, 2.0, degree + 2)?;
    let cps = ControlPointSet::new(&fx.transport, Some(&fx.collision))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = fx.random_field(&mut rng);
    let mut f1 = f0.clone();
    let limited = limit_nonnegative(&mut f1, &cps)?;
    let mut f2 = f1.clone();
    let second = limit_nonnegative(&mut f2, &cps)?;
    let mesh = &fx.space.mesh;
    let mut max_avg_change: f64 = 0.0;
    let mut min_rel = f64::INFINITY;
    for cell in 0..mesh.n_cells() {
        let a0 = f0.avg(cell);
        max_avg_change = max_avg_change.max((f1.avg(cell) - a0).abs() / a0);
        let (_, k, _) = mesh.cell_of_index(cell);
        min_rel = min_rel.min(cps.cell_min(f1.cell(cell), k) / a0);
    }
    let second_change = f1.coeffs.iter().zip(&f2.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(LimiterBattery {
        cells: mesh.n_cells(),
        limited,
        max_avg_change,
        second_pass_limited: second,
        max_second_pass_change: second_change,
        min_control_rel: min_rel,
    })
}

/// Semi-discrete entropy balance on random positive fields, frozen potential.
pub fn entropy_battery(seed: u64, n_fields: usize) -> Result<Vec<EntropyCheck>> {
    let fx = Fixture::new((6, 6, 4), 1, 3.0, entropy_quad_count(1))?;
    let cps = ControlPointSet::new(&fx.transport, Some(&fx.collision))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_fields)
        .map(|_| {
            let f = fx.random_positive_field(&mut rng, &cps)?;
            let pot = fx.potential(&f)?;
            semi_discrete_entropy_check(&fx.transport, Some(&fx.collision), &f, &pot)?
                .ok_or_else(|| Error::Invariant("entropy check skipped on a periodic mesh".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionCase {
    /// Σ (Q(f), f e^H) in coefficient space.
    pub dissipation: f64,
    /// |c|·|R|, the Cauchy–Schwarz bound of the pairing.
    pub scale: f64,
    /// |d/dt mass| / (ν_max · mass) in the unweighted form.
    pub mass_rate_rel: f64,
}

pub fn collision_battery(seed: u64, n_fields: usize) -> Result<Vec<CollisionCase>> {
    let fx = Fixture::new((4, 8, 4), 1, 3.0, entropy_quad_count(1))?;
    let cps = ControlPointSet::new(&fx.transport, Some(&fx.collision))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_fields)
        .map(|_| {
            let f = fx.random_positive_field(&mut rng, &cps)?;
            let pot = fx.potential(&f)?;
            let data = fx.transport.stage_data(&pot, Weighting::Entropy)?;
            let r = fx.collision.residual(&f, Some(&data.wx));
            let dissipation: f64 = r.iter().zip(&f.coeffs).map(|(a, b)| a * b).sum();
            let scale = r.iter().map(|v| v * v).sum::<f64>().sqrt() * f.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rs = fx.collision.residual(&f, None);
            let mass_rate_rel = fx.collision.mass_rate(&rs).abs() / (fx.collision.nu_max * f.total_mass());
            Ok(CollisionCase {
                dissipation,
                scale,
                mass_rate_rel,
            })
        })
        .collect()
}

fn quadrature_exactness() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 1..=10 {
        let g = QuadratureRule::gauss_legendre(n)?;
        for d in 0..2 * n {
            let exact = if d % 2 == 0 { 2.0 / (d + 1) as f64 } else { 0.0 };
            worst = worst.max((g.integrate(|x| x.powi(d as i32)) - exact).abs());
        }
        if n >= 2 {
            let l = QuadratureRule::gauss_lobatto(n)?;
            for d in 0..2 * n - 2 {
                let exact = if d % 2 == 0 { 2.0 / (d + 1) as f64 } else { 0.0 };
                worst = worst.max((l.integrate(|x| x.powi(d as i32)) - exact).abs());
            }
            worst = worst.max((l.weights[0] - l.weights[n - 1]).abs());
        }
    }
    Ok(worst)
}

fn band_roundtrip(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for band in [BandModel::parabolic(0.7, 3.0)?, BandModel::kane(1.0, 0.5, 3.0)?] {
        for _ in 0..200 {
            let p = rng.random_range(1e-3..3.0);
            let e = band.energy(p)?;
            worst = worst.max((band.momentum_of_energy(e)? - p).abs() / p);
            worst = worst.max((band.dp_de(e)? * band.velocity(p)? - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Every battery at the tolerances the solver documents.
pub fn verify_invariants(cfg: &SimulationConfig) -> Result<Vec<Check>> {
    let seed = cfg.run.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mesh = TensorMesh::build(cfg.mesh.nx, cfg.mesh.np, cfg.mesh.nmu, cfg.mesh.length, cfg.mesh.p_max)?;
    let vol: f64 = (0..mesh.n_cells())
        .map(|c| {
            let (i, k, m) = mesh.cell_of_index(c);
            mesh.cell_volume(i, k, m).unwrap()
        })
        .sum();
    let want = mesh.length * mesh.p_max.powi(3) / 3.0 * 2.0;
    let rel = (vol - want).abs() / want;
    out.push(Check::new("mesh volume", rel <= 1e-12, format!("relative error {rel:.2e}")));

    let q = quadrature_exactness()?;
    out.push(Check::new("quadrature exactness", q <= 1e-13, format!("max moment error {q:.2e}")));

    let b = band_roundtrip(&mut rng)?;
    out.push(Check::new("band round trip", b <= 1e-12, format!("max relative error {b:.2e}")));

    let pb = poisson_battery(seed, 50)?;
    out.push(Check::new(
        "poisson residuals",
        pb.dirichlet_residual <= 1e-10 && pb.periodic_residual <= 1e-10,
        format!("dirichlet {:.2e}, periodic {:.2e}", pb.dirichlet_residual, pb.periodic_residual),
    ));
    out.push(Check::new("poisson compatibility", pb.compat_rejected, "imbalanced periodic source rejected".into()));
    out.push(Check::new("poisson zero average", pb.periodic_mean <= 1e-12, format!("|mean Φ| {:.2e}", pb.periodic_mean)));

    let (al, dt) = optimal_alpha(1.0, 3.0)?;
    out.push(Check::new("optimal alpha", al == 0.75 && dt == 0.75, format!("({al}, {dt})")));

    for degree in [1, 2] {
        let lb = limiter_battery(seed.wrapping_add(degree as u64), degree)?;
        let pass = lb.max_avg_change <= 1e-14
            && lb.second_pass_limited == 0
            && lb.max_second_pass_change == 0.0
            && lb.min_control_rel >= -LIMITER_SLACK;
        out.push(Check::new(
            &format!("limiter k={degree}"),
            pass,
            format!(
                "{} of {} cells limited, avg change {:.2e}, second pass {} cells, min control/avg {:.2e}",
                lb.limited, lb.cells, lb.max_avg_change, lb.second_pass_limited, lb.min_control_rel
            ),
        ));
    }

    let eb = entropy_battery(seed, 20)?;
    let worst = eb.iter().map(|c| (c.lhs - c.rhs) / c.scale).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::new(
        "semi-discrete entropy",
        eb.iter().all(|c| c.holds),
        format!("{} fields, max (lhs − rhs)/scale {worst:.2e}", eb.len()),
    ));

    let cb = collision_battery(seed.wrapping_add(17), 20)?;
    let d = cb.iter().map(|c| c.dissipation / c.scale).fold(f64::NEG_INFINITY, f64::max);
    let m = cb.iter().map(|c| c.mass_rate_rel).fold(0.0, f64::max);
    out.push(Check::new("collision dissipation", d <= 1e-10, format!("max (Q, f e^H)/scale {d:.2e}")));
    out.push(Check::new("collision mass", m <= 1e-13, format!("max relative mass rate {m:.2e}")));

    let band = BandModel::new(cfg.band.kind, cfg.band.m_star, cfg.band.alpha_k, cfg.mesh.p_max)?;
    let alpha_k = if cfg.band.alpha_k > 0.0 { cfg.band.alpha_k } else { 0.5 };
    for r in verify_beta(band, cfg.poisson.q, alpha_k, seed, 1000, 1e-4)? {
        out.push(Check::new(
            &format!("beta {}", r.family),
            r.pass,
            format!("{} points, div {:.2e}, orthogonality {:.2e}", r.points, r.max_div_rel, r.max_orth_rel),
        ));
    }

    let convex = [RkOrder::Euler, RkOrder::Rk2, RkOrder::Rk3].iter().all(|rk| {
        rk.stages().iter().all(|&(a, b)| a >= 0.0 && b > 0.0 && (a + b - 1.0).abs() < 1e-15)
    });
    out.push(Check::new("rk convexity", convex, "Shu–Osher rows nonnegative, summing to 1".into()));

    let text = cfg.to_text();
    let again = SimulationConfig::parse_str(&text)?;
    out.push(Check::new(
        "config round trip",
        again == *cfg && again.to_text() == text,
        "serialize(parse(serialize(cfg))) == serialize(cfg)".into(),
    ));
    Ok(out)
}
