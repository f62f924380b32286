//! Assembly of a solver from a configuration, the time loop with its
//! diagnostics output, and the free-streaming refinement study.

use crate::band::BandModel;
use crate::collision::{CollisionOperator, ScatteringParams};
use crate::config::{AlphaPolicy, BcConfig, DopingConfig, FieldMode, InitialKind, Occupancy, SimulationConfig};
use crate::diagnostics::{entropy_quad_count, l2_error, CsvWriter, EntropyMonitor, EntropyReport};
use crate::error::{Error, Result};
use crate::field::{DgField, DgSpace};
use crate::integrator::{FieldSource, Solver, SolverOptions, StepRecord};
use crate::mesh::TensorMesh;
use crate::poisson::{DopingKind, DopingProfile, PoissonBc, PotentialSolution};
use crate::positivity::{limit_nonnegative, Binding};
use crate::transport::{maxwellian_density, BoundarySpec, TransportOperator, Weighting, XBoundary};
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Relative per-step tolerance on entropy growth.
pub const ENTROPY_TOL: f64 = 1e-10;

pub fn band_of(cfg: &SimulationConfig) -> Result<BandModel> {
    BandModel::new(cfg.band.kind, cfg.band.m_star, cfg.band.alpha_k, cfg.mesh.p_max)
}

pub fn doping_of(cfg: &SimulationConfig) -> Result<DopingProfile> {
    let kind = match cfg.poisson.doping {
        DopingConfig::Uniform { n } => DopingKind::Uniform(n),
        DopingConfig::NPlusNNPlus {
            n_plus,
            n,
            junction_left,
            junction_right,
        } => DopingKind::NPlusNNPlus {
            n_plus,
            n,
            junctions: (junction_left, junction_right),
        },
    };
    DopingProfile::new(kind, cfg.poisson.q, cfg.poisson.epsilon)
}

pub fn scattering_of(cfg: &SimulationConfig) -> Result<ScatteringParams> {
    let s = &cfg.scattering;
    match s.n_ph {
        Occupancy::Thermal => ScatteringParams::thermal(s.coupling, s.hbar_omega, s.c0),
        Occupancy::Value(n) => ScatteringParams::new(s.coupling, n, s.hbar_omega, s.c0),
    }
}

/// Projection of the configured initial state.
pub fn initial_field(cfg: &SimulationConfig, space: &Arc<DgSpace>, band: &BandModel, doping: &DopingProfile) -> DgField {
    let ini = &cfg.initial;
    let len = cfg.mesh.length;
    let z = maxwellian_density(band, space);
    let kx = 2.0 * PI * ini.modes as f64 / len;
    let (a, b) = (ini.amplitude, ini.anisotropy);
    match ini.kind {
        InitialKind::Maxwellian => {
            let nbar = match cfg.poisson.doping {
                DopingConfig::Uniform { n } => n,
                _ => (0..200).map(|j| doping.value((j as f64 + 0.5) * len / 200.0)).sum::<f64>() / 200.0,
            };
            DgField::project(space, |x, p, mu| nbar / z * (-band.eps(p)).exp() * (1.0 + a * (kx * x).cos()) * (1.0 + b * mu))
        }
        InitialKind::DopingMaxwellian => DgField::project(space, |x, p, _| doping.value(x) / z * (-band.eps(p)).exp()),
        InitialKind::Wave => DgField::project(space, |x, p, mu| (1.0 + a * (kx * x).sin()) * (-band.eps(p)).exp() * (1.0 + b * mu)),
    }
}

/// Everything a run needs, built from a validated configuration.
pub struct Problem {
    pub cfg: SimulationConfig,
    pub band: BandModel,
    pub doping: DopingProfile,
    pub solver: Solver,
    pub periodic: bool,
    /// Potential does not change in time.
    pub frozen: bool,
}

impl Problem {
    pub fn build(cfg: &SimulationConfig) -> Result<Self> {
        let m = &cfg.mesh;
        let mesh = TensorMesh::build(m.nx, m.np, m.nmu, m.length, m.p_max)?;
        let k = cfg.numerics.degree;
        let space = DgSpace::new(mesh, k)?;
        let band = band_of(cfg)?;
        let doping = doping_of(cfg)?;
        let q = cfg.poisson.q;
        let (pbc, xbc) = match cfg.poisson.bc {
            BcConfig::Periodic => (PoissonBc::Periodic, XBoundary::Periodic),
            BcConfig::Dirichlet { phi0 } => (
                PoissonBc::Dirichlet { phi0 },
                XBoundary::DiodeInflow {
                    left_density: doping.value(0.0),
                    right_density: doping.value(m.length),
                },
            ),
        };
        let weighting = cfg.numerics.weighting;
        let n_quad = cfg.numerics.quad_nodes.unwrap_or(match weighting {
            Weighting::Standard => k + 2,
            Weighting::Entropy => entropy_quad_count(k),
        });
        let transport = TransportOperator::new(&space, band, q, BoundarySpec { x: xbc }, n_quad)?;
        let collision = if cfg.scattering.enabled {
            Some(CollisionOperator::new(&space, band, scattering_of(cfg)?, n_quad, k + 4)?)
        } else {
            None
        };
        let doping_pw = doping.to_piecewise(&space.mesh.x_edges, k);
        let coupling = doping.coupling();
        let neutralize = cfg.poisson.neutralize;
        let consistent = FieldSource::SelfConsistent {
            doping: doping_pw,
            coupling,
            bc: pbc,
            neutralize,
        };
        let mut field = initial_field(cfg, &space, &band, &doping);
        let opts = SolverOptions {
            rk: cfg.numerics.rk,
            weighting,
            limiter: cfg.numerics.limiter,
            safety: cfg.numerics.cfl_safety,
            alpha: match cfg.numerics.alpha {
                AlphaPolicy::Auto => None,
                AlphaPolicy::Fixed(a) => Some(a),
            },
            fixed_dt: cfg.numerics.dt,
            max_halvings: 20,
        };
        let source = match cfg.poisson.field {
            FieldMode::SelfConsistent => consistent,
            FieldMode::Zero => FieldSource::Frozen(PotentialSolution::zero(&space.mesh.x_edges, pbc)),
            FieldMode::Frozen => FieldSource::Frozen(consistent.potential(&field)?),
        };
        let frozen = !matches!(source, FieldSource::SelfConsistent { .. });
        let mut solver = Solver::new(transport, collision, source, opts, field.clone())?;
        if opts.limiter {
            limit_nonnegative(&mut field, &solver.cps)?;
            solver.field = field;
        }
        Ok(Problem {
            cfg: cfg.clone(),
            band,
            doping,
            solver,
            periodic: pbc == PoissonBc::Periodic,
            frozen,
        })
    }

    /// Diagnostics of the current state, tagged as a step record.
    pub fn report(&self, rec: &StepRecord) -> Result<EntropyReport> {
        EntropyReport::from_step(&self.solver.field, &self.band, self.cfg.poisson.q, self.periodic, rec)
    }

    /// Record describing the state before the first step.
    pub fn initial_record(&self) -> Result<StepRecord> {
        let s = &self.solver;
        let (min_control, max_control) = s.cps.field_range(&s.field);
        Ok(StepRecord {
            t: s.t,
            dt: 0.0,
            binding: Binding::Transport,
            limiter_count: 0,
            min_control,
            max_control,
            chi_mass_leak: 0.0,
            retries: 0,
            budget: None,
            potential: s.source.potential(&s.field)?,
        })
    }

    /// Monotone entropy is a theorem only for the weighted form on a periodic domain.
    pub fn entropy_asserted(&self) -> bool {
        self.periodic && self.solver.opts.weighting == Weighting::Entropy
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub t: f64,
    /// Row 0 is the initial state.
    pub reports: Vec<EntropyReport>,
    pub monitor: EntropyMonitor,
    /// min over steps of (min control value)/(max control value).
    pub worst_min_rel: f64,
    /// Largest number of negative cell averages seen after any step.
    pub negative_averages: usize,
    pub entropy_asserted: bool,
    pub failure: Option<String>,
}

impl RunSummary {
    /// Error for the exit status: a step failure or an asserted entropy violation.
    pub fn outcome(&self) -> Result<()> {
        if let Some(f) = &self.failure {
            return Err(Error::Step(f.clone()));
        }
        if self.entropy_asserted && !self.monitor.violations.is_empty() {
            let (t, rel) = self.monitor.violations[0];
            return Err(Error::Invariant(format!(
                "entropy norm grew by {rel:e} (relative) at t = {t}; {} violating steps",
                self.monitor.violations.len()
            )));
        }
        Ok(())
    }
}

struct Output {
    dir: PathBuf,
    csv: CsvWriter<BufWriter<File>>,
    hash: String,
}

impl Output {
    fn open(dir: &Path, cfg: &SimulationConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.cfg"), cfg.to_text())?;
        let csv = CsvWriter::new(BufWriter::new(File::create(dir.join("diagnostics.csv"))?))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            csv,
            hash: cfg.hash(),
        })
    }

    fn snapshot(&self, name: &str, p: &Problem) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        crate::diagnostics::write_snapshot(&mut w, &p.solver.field, &p.band, p.solver.t, &self.hash)
    }
}

fn negative_averages(field: &DgField) -> usize {
    (0..field.space.mesh.n_cells()).filter(|&c| field.avg(c) < 0.0).count()
}

/// Time loop to t_final or max_steps. With `out`, writes diagnostics.csv,
/// snapshots, entropy_log.txt and, after a step failure, last_good.snap.
pub fn run(cfg: &SimulationConfig, out: Option<&Path>) -> Result<RunSummary> {
    let mut p = Problem::build(cfg)?;
    let mut output = match out {
        Some(d) => Some(Output::open(d, cfg)?),
        None => None,
    };
    let mut monitor = EntropyMonitor::new(cfg.run.flatten_delta, ENTROPY_TOL);
    let always = p.frozen;
    let rec0 = p.initial_record()?;
    let mut r0 = p.report(&rec0)?;
    r0.binding = "initial".into();
    monitor.observe(&r0, always);
    let mut worst = rec0.min_control / rec0.max_control.abs().max(f64::MIN_POSITIVE);
    let mut negatives = negative_averages(&p.solver.field);
    if let Some(o) = output.as_mut() {
        o.csv.row(&r0)?;
        o.snapshot("snapshot_000000.snap", &p)?;
    }
    let mut reports = vec![r0];
    let mut failure = None;
    let t_final = cfg.run.t_final;
    while p.solver.t < t_final * (1.0 - 1e-14) && p.solver.steps < cfg.run.max_steps {
        let rec = match p.solver.step(Some(t_final)) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                if let Some(o) = output.as_ref() {
                    o.snapshot("last_good.snap", &p)?;
                }
                break;
            }
        };
        let r = p.report(&rec)?;
        monitor.observe(&r, always);
        worst = worst.min(rec.min_control / rec.max_control.abs().max(f64::MIN_POSITIVE));
        negatives = negatives.max(negative_averages(&p.solver.field));
        if let Some(o) = output.as_mut() {
            o.csv.row(&r)?;
            let every = cfg.run.snapshot_every;
            if every > 0 && p.solver.steps % every == 0 {
                o.snapshot(&format!("snapshot_{:06}.snap", p.solver.steps), &p)?;
            }
        }
        reports.push(r);
    }
    if let Some(o) = output.as_mut() {
        o.csv.flush()?;
        if failure.is_none() {
            o.snapshot("final.snap", &p)?;
        }
        fs::write(o.dir.join("entropy_log.txt"), entropy_log(&monitor, p.entropy_asserted(), always))?;
    }
    Ok(RunSummary {
        steps: p.solver.steps,
        t: p.solver.t,
        reports,
        monitor,
        worst_min_rel: worst,
        negative_averages: negatives,
        entropy_asserted: p.entropy_asserted(),
        failure,
    })
}

fn entropy_log(m: &EntropyMonitor, asserted: bool, frozen: bool) -> String {
    let mut s = String::new();
    s.push_str(&format!("asserted = {asserted}\nfrozen_field = {frozen}\n"));
    match m.flattened_at {
        Some(t) => s.push_str(&format!("current_flattened_at = {t:.17e}\n")),
        None => s.push_str("current_flattened_at = never\n"),
    }
    s.push_str(&format!("max_abs_current = {:.17e}\nchecked_steps = {}\n", m.max_abs_j, m.checked_steps));
    s.push_str(&format!("pre_flattening_increases = {}\n", m.pre_flat_increases.len()));
    for (t, r) in &m.pre_flat_increases {
        s.push_str(&format!("  pre t={t:.17e} rel={r:.3e}\n"));
    }
    s.push_str(&format!("violations = {}\n", m.violations.len()));
    for (t, r) in &m.violations {
        s.push_str(&format!("  violation t={t:.17e} rel={r:.3e}\n"));
    }
    s
}

/// Free-streaming problem: E = 0, no collisions, periodic, k = 1, SSP-RK2.
pub fn free_streaming_config(nx: usize, np: usize, nmu: usize, t_final: f64) -> Result<SimulationConfig> {
    let text = format!(
        r#"
[mesh]
nx = {nx}
np = {np}
nmu = {nmu}
length = 1.0
p_max = 1.0

[band]
kind = "parabolic"
m_star = 1.0

[scattering]
enabled = false

[poisson]
bc = "periodic"
q = 1.0
epsilon = 1.0
doping = "uniform"
n = 1.0
field = "zero"

[numerics]
degree = 1
rk = 2
limiter = false
cfl_safety = 0.5

[initial]
kind = "wave"
amplitude = 0.5
anisotropy = 0.0
modes = 1

[run]
t_final = {t_final}
max_steps = 100000
snapshot_every = 0
"#
    );
    SimulationConfig::parse_str(&text)
}

/// Exact free-streaming solution of the `wave` initial state.
pub fn free_streaming_exact(cfg: &SimulationConfig, band: BandModel, t: f64) -> impl Fn(f64, f64, f64) -> f64 + Sync {
    let ini = cfg.initial.clone();
    let len = cfg.mesh.length;
    move |x, p, mu| {
        let kx = 2.0 * PI * ini.modes as f64 / len;
        let xs = x - band.v(p) * mu * t;
        (1.0 + ini.amplitude * (kx * xs).sin()) * (-band.eps(p)).exp() * (1.0 + ini.anisotropy * mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub steps: usize,
    pub error: f64,
    /// log₂ of the error ratio against the previous level.
    pub order: Option<f64>,
}

pub const CONVERGENCE_T: f64 = 0.1;
pub const CONVERGENCE_NP: usize = 16;
pub const CONVERGENCE_NMU: usize = 16;

/// Refines N_x = base·2^j for j < levels at fixed (N_p, N_μ).
pub fn convergence(levels: usize, base_nx: usize) -> Result<Vec<ConvergenceRow>> {
    if levels == 0 || base_nx == 0 {
        return Err(Error::Config("levels and base_nx must be at least 1".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for j in 0..levels {
        let nx = base_nx << j;
        let cfg = free_streaming_config(nx, CONVERGENCE_NP, CONVERGENCE_NMU, CONVERGENCE_T)?;
        let mut p = Problem::build(&cfg)?;
        while p.solver.t < CONVERGENCE_T * (1.0 - 1e-14) {
            p.solver.step(Some(CONVERGENCE_T))?;
        }
        let exact = free_streaming_exact(&cfg, p.band, p.solver.t);
        let error = l2_error(&p.solver.field, exact, 5)?;
        let steps = p.solver.steps;
        let order = rows.last().map(|r| (r.error / error).log2());
        rows.push(ConvergenceRow { nx, steps, error, order });
    }
    Ok(rows)
}
