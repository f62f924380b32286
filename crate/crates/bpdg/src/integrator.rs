//! Forward Euler and SSP Runge–Kutta stepping with a Poisson refresh, a CFL
//! budget and the limiter at every stage.

use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::field::{DgField, TensorMass};
use crate::poisson::{
    compute_density, solve_dirichlet, solve_periodic, solve_periodic_neutralized, PiecewisePoly, PoissonBc, PotentialSolution,
};
use crate::positivity::{budget, limit_nonnegative, Binding, CFLBudget, ControlPointSet};
use crate::transport::{StageData, TransportOperator, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkOrder {
    Euler,
    Rk2,
    Rk3,
}

impl RkOrder {
    pub fn from_int(n: u32) -> Result<Self> {
        match n {
            1 => Ok(RkOrder::Euler),
            2 => Ok(RkOrder::Rk2),
            3 => Ok(RkOrder::Rk3),
            _ => Err(Error::Config(format!("rk must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn as_int(&self) -> u32 {
        match self {
            RkOrder::Euler => 1,
            RkOrder::Rk2 => 2,
            RkOrder::Rk3 => 3,
        }
    }

    /// Shu–Osher rows: stage s output = a·f⁰ + b·E(f^{s}) with (a, b).
    pub fn stages(&self) -> &'static [(f64, f64)] {
        match self {
            RkOrder::Euler => &[(0.0, 1.0)],
            RkOrder::Rk2 => &[(0.0, 1.0), (0.5, 0.5)],
            RkOrder::Rk3 => &[(0.0, 1.0), (0.75, 0.25), (1.0 / 3.0, 2.0 / 3.0)],
        }
    }

    /// Weight of each stage's Euler increment in the final update.
    pub fn increment_weights(&self) -> &'static [f64] {
        match self {
            RkOrder::Euler => &[1.0],
            RkOrder::Rk2 => &[0.5, 0.5],
            RkOrder::Rk3 => &[1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        }
    }
}

/// How the electric field is obtained at each stage.
#[derive(Debug, Clone)]
pub enum FieldSource {
    /// The same potential at every stage.
    Frozen(PotentialSolution),
    /// Poisson solved from the stage density.
    SelfConsistent {
        doping: PiecewisePoly,
        coupling: f64,
        bc: PoissonBc,
        /// Periodic only: subtract the mean of N − ρ instead of rejecting it.
        neutralize: bool,
    },
}

impl FieldSource {
    pub fn potential(&self, field: &DgField) -> Result<PotentialSolution> {
        match self {
            FieldSource::Frozen(p) => Ok(p.clone()),
            FieldSource::SelfConsistent {
                doping,
                coupling,
                bc,
                neutralize,
            } => {
                let rho = compute_density(field);
                match bc {
                    PoissonBc::Dirichlet { phi0 } => solve_dirichlet(&rho, doping, *coupling, *phi0),
                    PoissonBc::Periodic if *neutralize => solve_periodic_neutralized(&rho, doping, *coupling),
                    PoissonBc::Periodic => solve_periodic(&rho, doping, *coupling),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rk: RkOrder,
    pub weighting: Weighting,
    pub limiter: bool,
    pub safety: f64,
    pub alpha: Option<f64>,
    /// Skips the CFL budget and uses this step.
    pub fixed_dt: Option<f64>,
    pub max_halvings: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rk: RkOrder::Rk2,
            weighting: Weighting::Standard,
            limiter: true,
            safety: 0.9,
            alpha: None,
            fixed_dt: None,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub binding: Binding,
    pub limiter_count: usize,
    pub min_control: f64,
    pub max_control: f64,
    /// Mass removed by the collision operator during the step.
    pub chi_mass_leak: f64,
    pub retries: u32,
    pub budget: Option<CFLBudget>,
    /// Potential at the end state.
    pub potential: PotentialSolution,
}

pub struct Solver {
    pub transport: TransportOperator,
    pub collision: Option<CollisionOperator>,
    pub source: FieldSource,
    pub cps: ControlPointSet,
    pub opts: SolverOptions,
    pub field: DgField,
    pub t: f64,
    pub steps: usize,
}

/// Everything an Euler stage needs at one state.
pub struct StageEval {
    pub potential: PotentialSolution,
    pub data: StageData,
    /// M⁻¹ R with the weighting's mass matrix.
    pub rate: Vec<f64>,
    pub collision_mass_rate: f64,
    pub budget: Option<CFLBudget>,
}

impl Solver {
    pub fn new(
        transport: TransportOperator,
        collision: Option<CollisionOperator>,
        source: FieldSource,
        opts: SolverOptions,
        field: DgField,
    ) -> Result<Self> {
        if !field.same_space(&DgField::zeros(&transport.space)) {
            return Err(Error::MeshMismatch("initial field and operators use different spaces".into()));
        }
        let cps = ControlPointSet::new(&transport, collision.as_ref())?;
        Ok(Solver {
            transport,
            collision,
            source,
            cps,
            opts,
            field,
            t: 0.0,
            steps: 0,
        })
    }

    pub fn mass_matrix(&self, data: &StageData) -> Result<TensorMass> {
        match data.weighting {
            Weighting::Standard => Ok(self.transport.space.mass.clone()),
            Weighting::Entropy => self.transport.entropy_mass(data),
        }
    }

    /// Residuals, rate and step budget at `f`.
    pub fn evaluate(&self, f: &DgField) -> Result<StageEval> {
        let potential = self.source.potential(f)?;
        let data = self.transport.stage_data(&potential, self.opts.weighting)?;
        let mut r = self.transport.residual(f, &data)?;
        let mut collision_mass_rate = 0.0;
        let mut std_coll = None;
        if let Some(c) = &self.collision {
            let rc = match data.weighting {
                Weighting::Standard => c.residual(f, None),
                Weighting::Entropy => c.residual(f, Some(&data.wx)),
            };
            if data.weighting == Weighting::Standard {
                collision_mass_rate = c.mass_rate(&rc);
            }
            for (a, b) in r.iter_mut().zip(&rc) {
                *a += b;
            }
            if data.weighting == Weighting::Standard {
                std_coll = Some(rc);
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Step(format!("non-finite right-hand side at t = {}", self.t)));
        }
        let budget = if self.opts.fixed_dt.is_some() {
            None
        } else {
            let coll = match (&self.collision, &std_coll) {
                (Some(c), Some(rc)) => Some((c, f, rc.as_slice())),
                _ => None,
            };
            let mut b = budget(&self.transport, &data, coll, self.opts.safety, self.opts.alpha)?;
            if let (Some(c), None) = (&self.collision, &std_coll) {
                // weighted runs: bound the collision part by the loss rate alone
                let split = crate::positivity::collision_cfl_split(c.nu_max, 0.0);
                if split.is_finite() {
                    let (al, dt) = crate::positivity::optimal_alpha(b.dt / b.safety, split)?;
                    b.alpha = al;
                    b.dt_collision = (1.0 - al) * split;
                    b.dt = b.safety * dt;
                    b.binding = Binding::CollisionSplit;
                }
            }
            Some(b)
        };
        let mass = self.mass_matrix(&data)?;
        mass.apply_inverse(&f.space.mesh, &mut r);
        Ok(StageEval {
            potential,
            data,
            rate: r,
            collision_mass_rate,
            budget,
        })
    }

    /// Step size the budget would choose at the current state.
    pub fn proposed_dt(&self) -> Result<f64> {
        match self.opts.fixed_dt {
            Some(dt) => Ok(dt),
            None => Ok(self.evaluate(&self.field)?.budget.expect("budget").dt),
        }
    }

    /// One full step, capped so that t does not pass `t_stop`.
    pub fn step(&mut self, t_stop: Option<f64>) -> Result<StepRecord> {
        let first = self.evaluate(&self.field)?;
        let mut dt = match (self.opts.fixed_dt, &first.budget) {
            (Some(dt), _) => dt,
            (None, Some(b)) => b.dt,
            (None, None) => unreachable!(),
        };
        if let Some(ts) = t_stop {
            dt = dt.min(ts - self.t);
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Step(format!("step size {dt} at t = {}", self.t)));
        }
        let mut retries = 0;
        loop {
            match self.try_step(dt, &first)? {
                Some(mut rec) => {
                    rec.retries = retries;
                    return Ok(rec);
                }
                None => {
                    retries += 1;
                    if retries > self.opts.max_halvings {
                        return Err(Error::Step(format!("stage CFL not met after {retries} halvings at t = {}", self.t)));
                    }
                    dt *= 0.5;
                }
            }
        }
    }

    /// Returns None when a later stage's optimal step is smaller than `dt`.
    fn try_step(&mut self, dt: f64, first: &StageEval) -> Result<Option<StepRecord>> {
        let f0 = self.field.clone();
        let stages = self.opts.rk.stages();
        let weights = self.opts.rk.increment_weights();
        let mut cur = f0.clone();
        let mut limiter_count = 0;
        let mut leak = 0.0;
        for (s, &(a, b)) in stages.iter().enumerate() {
            let owned;
            let ev = if s == 0 {
                first
            } else {
                owned = self.evaluate(&cur)?;
                if let Some(bud) = &owned.budget {
                    if dt > bud.dt / bud.safety * (1.0 + 1e-12) {
                        return Ok(None);
                    }
                }
                &owned
            };
            leak -= weights[s] * dt * ev.collision_mass_rate;
            let mut next = cur.clone();
            next.axpy(dt, &ev.rate);
            if s > 0 {
                next.lincomb(b, a, &f0);
            }
            if self.opts.limiter {
                limiter_count += limit_nonnegative(&mut next, &self.cps)?;
            }
            cur = next;
        }
        self.field = cur;
        self.t += dt;
        self.steps += 1;
        let potential = self.source.potential(&self.field)?;
        let (min_control, max_control) = self.cps.field_range(&self.field);
        Ok(Some(StepRecord {
            t: self.t,
            dt,
            binding: first.budget.map(|b| b.binding).unwrap_or(Binding::Transport),
            limiter_count,
            min_control,
            max_control,
            chi_mass_leak: leak,
            retries: 0,
            budget: first.budget,
            potential,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_coefficients_are_convex() {
        for rk in [RkOrder::Euler, RkOrder::Rk2, RkOrder::Rk3] {
            for &(a, b) in rk.stages() {
                assert!(a >= 0.0 && b > 0.0);
                assert!((a + b - 1.0).abs() < 1e-15);
            }
            let s: f64 = rk.increment_weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!(RkOrder::from_int(4).is_err());
    }
}
