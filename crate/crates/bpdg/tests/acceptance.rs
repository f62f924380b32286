//! Acceptance suite. Runs every criterion in sequence (timings are single
//! process), prints one line per criterion and exits nonzero if any fails.

use bpdg::band::BandModel;
use bpdg::collision::{build_shift_table, collision_frequency, pointwise_q};
use bpdg::config::{FieldMode, SimulationConfig};
use bpdg::curvilinear::verify_beta;
use bpdg::diagnostics::{l2_error, EntropyReport};
use bpdg::driver::{free_streaming_config, run, scattering_of, Problem};
use bpdg::positivity::optimal_alpha;
use bpdg::quadrature::QuadratureRule;
use bpdg::verify::{collision_battery, entropy_battery, limiter_battery, poisson_battery};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn preset(name: &str) -> SimulationConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name);
    SimulationConfig::from_file(&p).expect("preset parses")
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Largest relative per-step growth of the entropy norm over `rows`.
fn max_growth(rows: &[EntropyReport]) -> f64 {
    rows.windows(2)
        .map(|w| (w[1].entropy_norm - w[0].entropy_norm) / w[0].entropy_norm)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn c1_entropy_frozen() -> Outcome {
    let mut cfg = preset("periodic-relaxation.cfg");
    cfg.poisson.field = FieldMode::Frozen;
    cfg.run.t_final = 100.0;
    cfg.run.max_steps = 100;
    let t0 = Instant::now();
    let s = run(&cfg, None).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let g = max_growth(&s.reports);
    ensure(
        s.failure.is_none() && s.steps == 100 && g <= 1e-10 && el < Duration::from_secs(60),
        format!("{} steps, max relative growth {g:.3e} (≤ 1e-10), {:.1} s (< 60 s)", s.steps, el.as_secs_f64()),
    )
}

fn c2_entropy_self_consistent() -> Outcome {
    let mut cfg = preset("periodic-relaxation.cfg");
    cfg.poisson.field = FieldMode::SelfConsistent;
    cfg.run.t_final = 5.0;
    cfg.run.max_steps = 5000;
    let s = run(&cfg, None).map_err(|e| e.to_string())?;
    let delta = 1e-6;
    let mut jmax: f64 = 0.0;
    let mut flat = None;
    for (n, r) in s.reports.iter().enumerate() {
        jmax = jmax.max(r.j_min.abs()).max(r.j_max.abs());
        if r.j_max - r.j_min <= delta * jmax {
            flat = Some(n);
            break;
        }
    }
    let Some(n) = flat else {
        return Err(format!("current never flattened in {} steps", s.steps));
    };
    let pre = max_growth(&s.reports[..=n]);
    let post_rows = &s.reports[n..];
    let post = max_growth(post_rows);
    ensure(
        s.failure.is_none() && post_rows.len() > 50 && post <= 1e-10,
        format!(
            "flattened at step {n} (t = {:.3}); {} checked steps, max growth after {post:.3e} (≤ 1e-10); before: max growth {pre:.3e}, {} increases",
            s.reports[n].t,
            post_rows.len() - 1,
            s.monitor.pre_flat_increases.len()
        ),
    )
}

fn c3_positivity() -> Outcome {
    let mut cfg = preset("diode-400nm.cfg");
    cfg.run.t_final = 1e3;
    cfg.run.max_steps = 500;
    cfg.numerics.limiter = true;
    let s = run(&cfg, None).map_err(|e| e.to_string())?;
    let limited: usize = s.reports.iter().map(|r| r.limiter_count).sum();
    ensure(
        s.failure.is_none() && s.steps == 500 && s.worst_min_rel >= -1e-13 && s.negative_averages == 0,
        format!(
            "{} steps, min control/max f {:.3e} (≥ −1e-13), {} negative averages, {limited} limiter activations, failure {:?}",
            s.steps, s.worst_min_rel, s.negative_averages, s.failure
        ),
    )
}

fn c4_mass() -> Outcome {
    let text = r#"
[mesh]
nx = 16
np = 16
nmu = 8
p_max = 8.0
[band]
kind = "parabolic"
[scattering]
coupling = 0.1
hbar_omega = 0.5
n_ph = "thermal"
c0 = 0.05
[poisson]
bc = "periodic"
field = "self-consistent"
[numerics]
degree = 1
rk = 2
limiter = true
[initial]
kind = "maxwellian"
amplitude = 0.2
anisotropy = 0.3
[run]
t_final = 100.0
max_steps = 100
"#;
    let cfg = SimulationConfig::parse_str(text).map_err(|e| e.to_string())?;
    let s = run(&cfg, None).map_err(|e| e.to_string())?;
    let m0 = s.reports[0].mass;
    let drift = s.reports.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max);
    let leak = s.reports.iter().map(|r| r.chi_mass_leak.abs() / m0).fold(0.0, f64::max);
    ensure(
        s.steps == 100 && drift <= 1e-9 && leak <= 1e-14,
        format!("{} steps, max relative drift {drift:.3e} (≤ 1e-9), max |chi_mass_leak|/mass {leak:.3e}", s.steps),
    )
}

fn c5_equilibrium() -> Outcome {
    let text = r#"
[mesh]
nx = 1
np = 2400
nmu = 2
p_max = 4.0
[band]
kind = "parabolic"
[scattering]
coupling = 0.1
hbar_omega = 0.5
n_ph = "thermal"
c0 = 0.1
[poisson]
bc = "periodic"
field = "zero"
[numerics]
degree = 2
rk = 3
limiter = false
[initial]
kind = "maxwellian"
[run]
t_final = 100.0
"#;
    let cfg = SimulationConfig::parse_str(text).map_err(|e| e.to_string())?;
    let mut p = Problem::build(&cfg).map_err(|e| e.to_string())?;
    let params = scattering_of(&cfg).map_err(|e| e.to_string())?;
    let band = p.band;
    let f0 = p.solver.field.clone();
    let mesh = &f0.space.mesh;
    let table = build_shift_table(mesh, &band, &params, &QuadratureRule::gauss_legendre(3).unwrap());
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for node in &table.nodes {
        // both partners of every exchange inside the energy window
        if node.eps + params.hbar_omega >= band.eps_max || node.eps <= 0.0 {
            continue;
        }
        for m in 0..mesh.n_mu() {
            for xm in [-0.5, 0.3] {
                let q = pointwise_q(&f0, &band, &params, 0, 0.1, node, m, xm);
                let f = f0.eval_local(mesh.cell_index(0, node.cell, m), [0.1, node.xi, xm]);
                worst = worst.max(q.abs() / (collision_frequency(&band, &params, node.p) * f));
                count += 1;
            }
        }
    }
    for _ in 0..100 {
        p.solver.step(None).map_err(|e| e.to_string())?;
    }
    let mut d = p.solver.field.clone();
    d.lincomb(1.0, -1.0, &f0);
    let mass = &f0.space.mass;
    let drift = (mass.quadratic_form(mesh, &d.coeffs) / mass.quadratic_form(mesh, &f0.coeffs)).sqrt();
    ensure(
        worst <= 1e-6 && drift <= 1e-10,
        format!("max |Q|/(ν f) {worst:.3e} over {count} nodes (≤ 1e-6); 100-step relative L2 drift {drift:.3e} (≤ 1e-10)"),
    )
}

fn c6_dissipativity() -> Outcome {
    let cases = collision_battery(2024, 20).map_err(|e| e.to_string())?;
    let worst = cases.iter().map(|c| c.dissipation / c.scale).fold(f64::NEG_INFINITY, f64::max);
    ensure(
        cases.len() == 20 && cases.iter().all(|c| c.dissipation <= 1e-10 * c.scale),
        format!("20 fields, max (Q(f), f e^H)/scale {worst:.3e} (≤ 1e-10)"),
    )
}

fn c7_beta() -> Outcome {
    let t0 = Instant::now();
    let band = BandModel::parabolic(1.0, 4.0).unwrap();
    let reports = verify_beta(band, 1.0, 0.5, 99, 1000, 1e-4).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let ok = reports.iter().all(|r| r.points == 1000 && r.max_div_rel <= 1e-6 && r.max_orth_rel <= 1e-12);
    let detail: Vec<String> = reports
        .iter()
        .map(|r| format!("{}: div {:.2e}, β·∂H {:.2e}", r.family, r.max_div_rel, r.max_orth_rel))
        .collect();
    ensure(
        ok && reports.len() == 2 && el < Duration::from_secs(5),
        format!("{}; {:.2} s (< 5 s)", detail.join("; "), el.as_secs_f64()),
    )
}

fn c8_poisson() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut rejected = true;
    for seed in 0..5 {
        let b = poisson_battery(seed, 50).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max(b.dirichlet_residual);
        worst.1 = worst.1.max(b.periodic_residual);
        worst.2 = worst.2.max(b.periodic_mean);
        rejected &= b.compat_rejected;
    }
    ensure(
        worst.0 <= 1e-10 && worst.1 <= 1e-10 && worst.2 <= 1e-12 && rejected,
        format!(
            "dirichlet residual {:.2e}, periodic residual {:.2e} (≤ 1e-10), |mean Φ| {:.2e} (≤ 1e-12), compatibility rejected: {rejected}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn c9_convergence() -> Outcome {
    let t0 = Instant::now();
    let t_end = 0.1;
    let mut errs = Vec::new();
    for nx in [32, 64] {
        let cfg = free_streaming_config(nx, 16, 16, t_end).map_err(|e| e.to_string())?;
        let mut p = Problem::build(&cfg).map_err(|e| e.to_string())?;
        while p.solver.t < t_end * (1.0 - 1e-14) {
            p.solver.step(Some(t_end)).map_err(|e| e.to_string())?;
        }
        let t = p.solver.t;
        // characteristic solution of f_t + v(p) μ f_x = 0, parabolic band m* = 1
        let exact = move |x: f64, pp: f64, mu: f64| (1.0 + 0.5 * (2.0 * PI * (x - pp * mu * t)).sin()) * (-0.5 * pp * pp).exp();
        errs.push(l2_error(&p.solver.field, exact, 5).map_err(|e| e.to_string())?);
    }
    let order = (errs[0] / errs[1]).log2();
    let el = t0.elapsed();
    ensure(
        order >= 1.5 && el < Duration::from_secs(300),
        format!("L2 errors {:.3e} (N_x=32), {:.3e} (N_x=64), order {order:.3} (≥ 1.5), {:.1} s", errs[0], errs[1], el.as_secs_f64()),
    )
}

fn c10_cfl_machinery() -> Outcome {
    let (a, dt) = optimal_alpha(1.0, 3.0).map_err(|e| e.to_string())?;
    let lb = limiter_battery(10, 1).map_err(|e| e.to_string())?;
    let eb = entropy_battery(11, 20).map_err(|e| e.to_string())?;
    let worst = eb.iter().map(|c| (c.lhs - c.rhs) / c.scale).fold(f64::NEG_INFINITY, f64::max);
    ensure(
        a == 0.75
            && dt == 0.75
            && lb.cells == 1000
            && lb.max_avg_change <= 1e-14
            && lb.second_pass_limited == 0
            && lb.max_second_pass_change <= 1e-14
            && eb.len() == 20
            && eb.iter().all(|c| c.lhs <= c.rhs + 1e-10 * c.scale),
        format!(
            "optimal_alpha(1,3) = ({a}, {dt}); limiter: {} of {} cells limited, avg change {:.2e}, second pass change {:.2e}; entropy check max (lhs−rhs)/scale {worst:.3e}",
            lb.limited, lb.cells, lb.max_avg_change, lb.max_second_pass_change
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("entropy decay, frozen field", c1_entropy_frozen),
        ("entropy decay, self-consistent field", c2_entropy_self_consistent),
        ("positivity, diode", c3_positivity),
        ("mass conservation", c4_mass),
        ("collision equilibrium", c5_equilibrium),
        ("collision dissipativity", c6_dissipativity),
        ("transport field identities", c7_beta),
        ("poisson correctness", c8_poisson),
        ("free-streaming convergence", c9_convergence),
        ("cfl machinery", c10_cfl_machinery),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let id = n + 1;
        if !filter.is_empty() && !filter.iter().any(|s| s == &id.to_string()) {
            continue;
        }
        let t0 = Instant::now();
        let res = f();
        let el = t0.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {id:>2} PASS [{el:7.1} s] {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id:>2} FAIL [{el:7.1} s] {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
