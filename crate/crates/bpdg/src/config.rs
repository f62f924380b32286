//! Sectioned `key = value` run configuration.
//!
//! Sections: [mesh] [band] [scattering] [poisson] [numerics] [initial] [run].
//! Unknown sections and keys are rejected; every problem found is reported at once.

use crate::band::BandKind;
use crate::error::{Error, Result};
use crate::integrator::RkOrder;
use crate::transport::Weighting;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub nx: usize,
    pub np: usize,
    pub nmu: usize,
    pub length: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandConfig {
    pub kind: BandKind,
    pub m_star: f64,
    pub alpha_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Occupancy {
    Thermal,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringConfig {
    pub enabled: bool,
    pub coupling: f64,
    pub hbar_omega: f64,
    pub n_ph: Occupancy,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcConfig {
    Periodic,
    Dirichlet { phi0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DopingConfig {
    Uniform { n: f64 },
    NPlusNNPlus { n_plus: f64, n: f64, junction_left: f64, junction_right: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldMode {
    SelfConsistent,
    /// Potential solved once from the initial density.
    Frozen,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonConfig {
    pub bc: BcConfig,
    pub q: f64,
    pub epsilon: f64,
    pub doping: DopingConfig,
    pub field: FieldMode,
    pub neutralize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericsConfig {
    pub degree: usize,
    pub rk: RkOrder,
    pub cfl_safety: f64,
    pub limiter: bool,
    pub alpha: AlphaPolicy,
    pub weighting: Weighting,
    pub dt: Option<f64>,
    pub quad_nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    /// Neutral Maxwellian × (1 + a cos(2π n x/L)) × (1 + b μ).
    Maxwellian,
    /// Maxwellian carrying the local doping density.
    DopingMaxwellian,
    /// (1 + a sin(2π n x/L)) × e^{−ε(p)} × (1 + b μ), for free streaming.
    Wave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub anisotropy: f64,
    pub modes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t_final: f64,
    pub max_steps: usize,
    pub snapshot_every: usize,
    pub output_dir: String,
    pub seed: u64,
    pub flatten_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub mesh: MeshConfig,
    pub band: BandConfig,
    pub scattering: ScatteringConfig,
    pub poisson: PoissonConfig,
    pub numerics: NumericsConfig,
    pub initial: InitialConfig,
    pub run: RunConfig,
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn err(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{}.{}: {}", self.name, key, msg));
    }

    fn float(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        match self.get(key) {
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(v) => {
                self.err(key, format!("expected a number, got {v}"));
                f64::NAN
            }
            None => default.unwrap_or_else(|| {
                self.err(key, "missing");
                f64::NAN
            }),
        }
    }

    fn int(&mut self, key: &'static str, default: Option<i64>) -> i64 {
        match self.get(key) {
            Some(Value::Integer(v)) => *v,
            Some(v) => {
                self.err(key, format!("expected an integer, got {v}"));
                0
            }
            None => default.unwrap_or_else(|| {
                self.err(key, "missing");
                0
            }),
        }
    }

    fn count(&mut self, key: &'static str, default: Option<i64>, min: i64) -> usize {
        let v = self.int(key, default);
        if v < min {
            self.err(key, format!("must be at least {min}, got {v}"));
            return min.max(0) as usize;
        }
        v as usize
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> bool {
        match self.get(key) {
            Some(Value::Boolean(b)) => *b,
            Some(v) => {
                self.err(key, format!("expected true or false, got {v}"));
                default
            }
            None => default,
        }
    }

    fn string(&mut self, key: &'static str, default: Option<&str>) -> String {
        match self.get(key) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => {
                self.err(key, format!("expected a string, got {v}"));
                String::new()
            }
            None => match default {
                Some(d) => d.to_string(),
                None => {
                    self.err(key, "missing");
                    String::new()
                }
            },
        }
    }

    fn positive(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        let v = self.float(key, default);
        if !v.is_nan() && !(v > 0.0 && v.is_finite()) {
            self.err(key, format!("must be positive, got {v}"));
        }
        v
    }

    fn nonneg(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        let v = self.float(key, default);
        if !v.is_nan() && !(v >= 0.0 && v.is_finite()) {
            self.err(key, format!("must be nonnegative, got {v}"));
        }
        v
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(&k.as_str()) {
                    self.errors.push(format!("{}.{}: unknown key", self.name, k));
                }
            }
        }
    }
}

const SECTIONS: [&str; 7] = ["mesh", "band", "scattering", "poisson", "numerics", "initial", "run"];

impl SimulationConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("malformed config: {e}")))?;
        let mut errors = Vec::new();
        let mut tables = Vec::new();
        for (k, v) in &root {
            if !SECTIONS.contains(&k.as_str()) {
                errors.push(format!("{k}: unknown section"));
            } else if !v.is_table() {
                errors.push(format!("{k}: expected a section"));
            }
        }
        for s in SECTIONS {
            tables.push(root.get(s).and_then(|v| v.as_table()));
        }
        let mesh = {
            let mut s = Section { name: "mesh", table: tables[0], errors: &mut errors, used: Vec::new() };
            let m = MeshConfig {
                nx: s.count("nx", None, 1),
                np: s.count("np", None, 1),
                nmu: s.count("nmu", None, 1),
                length: s.positive("length", Some(1.0)),
                p_max: s.positive("p_max", None),
            };
            s.finish();
            m
        };
        let band = {
            let mut s = Section { name: "band", table: tables[1], errors: &mut errors, used: Vec::new() };
            let kind = match s.string("kind", Some("parabolic")).as_str() {
                "parabolic" => BandKind::Parabolic,
                "kane" => BandKind::Kane,
                other => {
                    s.err("kind", format!("expected parabolic or kane, got {other:?}"));
                    BandKind::Parabolic
                }
            };
            let b = BandConfig {
                kind,
                m_star: s.positive("m_star", Some(1.0)),
                alpha_k: s.nonneg("alpha_k", Some(0.0)),
            };
            s.finish();
            b
        };
        let scattering = {
            let mut s = Section { name: "scattering", table: tables[2], errors: &mut errors, used: Vec::new() };
            let enabled = s.boolean("enabled", true);
            let coupling = s.nonneg("coupling", Some(0.0));
            let hbar_omega = s.nonneg("hbar_omega", Some(0.0));
            let n_ph = match s.get("n_ph") {
                None => Occupancy::Thermal,
                Some(Value::String(t)) if t == "thermal" => Occupancy::Thermal,
                Some(Value::Float(v)) if *v >= 0.0 => Occupancy::Value(*v),
                Some(Value::Integer(v)) if *v >= 0 => Occupancy::Value(*v as f64),
                Some(v) => {
                    let v = v.clone();
                    s.err("n_ph", format!("expected \"thermal\" or a nonnegative number, got {v}"));
                    Occupancy::Thermal
                }
            };
            if enabled && n_ph == Occupancy::Thermal && coupling > 0.0 && hbar_omega == 0.0 {
                s.err("hbar_omega", "thermal occupancy needs hbar_omega > 0");
            }
            let c = ScatteringConfig {
                enabled,
                coupling,
                hbar_omega,
                n_ph,
                c0: s.nonneg("c0", Some(0.0)),
            };
            s.finish();
            c
        };
        let poisson = {
            let mut s = Section { name: "poisson", table: tables[3], errors: &mut errors, used: Vec::new() };
            let bc = match s.string("bc", None).as_str() {
                "periodic" => BcConfig::Periodic,
                "dirichlet" => BcConfig::Dirichlet {
                    phi0: s.float("phi0", None),
                },
                "" => BcConfig::Periodic,
                other => {
                    s.err("bc", format!("expected periodic or dirichlet, got {other:?}"));
                    BcConfig::Periodic
                }
            };
            if matches!(bc, BcConfig::Periodic) && s.table.is_some_and(|t| t.contains_key("phi0")) {
                s.err("phi0", "only valid with bc = \"dirichlet\"");
                s.used.push("phi0");
            }
            let q = s.positive("q", Some(1.0));
            let epsilon = s.positive("epsilon", Some(1.0));
            let doping = match s.string("doping", Some("uniform")).as_str() {
                "uniform" => DopingConfig::Uniform {
                    n: s.nonneg("n", Some(1.0)),
                },
                "n+nn+" => {
                    let d = DopingConfig::NPlusNNPlus {
                        n_plus: s.nonneg("n_plus", None),
                        n: s.nonneg("n", None),
                        junction_left: s.float("junction_left", None),
                        junction_right: s.float("junction_right", None),
                    };
                    if let DopingConfig::NPlusNNPlus { junction_left: a, junction_right: b, .. } = d {
                        if !(a > 0.0 && a < b && b < mesh.length) {
                            s.err("junction_left", format!("junctions must satisfy 0 < {a} < {b} < length"));
                        }
                    }
                    d
                }
                other => {
                    s.err("doping", format!("expected uniform or n+nn+, got {other:?}"));
                    DopingConfig::Uniform { n: 1.0 }
                }
            };
            let field = match s.string("field", Some("self-consistent")).as_str() {
                "self-consistent" => FieldMode::SelfConsistent,
                "frozen" => FieldMode::Frozen,
                "zero" => FieldMode::Zero,
                other => {
                    s.err("field", format!("expected self-consistent, frozen or zero, got {other:?}"));
                    FieldMode::SelfConsistent
                }
            };
            let p = PoissonConfig {
                bc,
                q,
                epsilon,
                doping,
                field,
                neutralize: s.boolean("neutralize", true),
            };
            s.finish();
            p
        };
        let numerics = {
            let mut s = Section { name: "numerics", table: tables[4], errors: &mut errors, used: Vec::new() };
            let degree = s.count("degree", Some(1), 1);
            if degree > 2 {
                s.err("degree", format!("must be 1 or 2, got {degree}"));
            }
            let default_rk = if degree >= 2 { 3 } else { 2 };
            let rk = match RkOrder::from_int(s.int("rk", Some(default_rk)) as u32) {
                Ok(r) => r,
                Err(e) => {
                    s.err("rk", e);
                    RkOrder::Rk2
                }
            };
            let cfl_safety = s.positive("cfl_safety", Some(0.9));
            if cfl_safety > 1.0 {
                s.err("cfl_safety", format!("must be at most 1, got {cfl_safety}"));
            }
            let limiter = s.boolean("limiter", true);
            let alpha = match s.get("alpha") {
                None => AlphaPolicy::Auto,
                Some(Value::String(a)) if a == "auto" => AlphaPolicy::Auto,
                Some(Value::Float(v)) if *v > 0.0 && *v < 1.0 => AlphaPolicy::Fixed(*v),
                Some(v) => {
                    let v = v.clone();
                    s.err("alpha", format!("expected \"auto\" or a number in (0, 1), got {v}"));
                    AlphaPolicy::Auto
                }
            };
            let weighting = match s.string("weighting", Some("standard")).as_str() {
                "standard" => Weighting::Standard,
                "entropy" => Weighting::Entropy,
                other => {
                    s.err("weighting", format!("expected standard or entropy, got {other:?}"));
                    Weighting::Standard
                }
            };
            let dt = if s.table.is_some_and(|t| t.contains_key("dt")) {
                Some(s.positive("dt", None))
            } else {
                s.used.push("dt");
                None
            };
            let quad_nodes = if s.table.is_some_and(|t| t.contains_key("quad_nodes")) {
                Some(s.count("quad_nodes", None, 1))
            } else {
                s.used.push("quad_nodes");
                None
            };
            let n = NumericsConfig {
                degree,
                rk,
                cfl_safety,
                limiter,
                alpha,
                weighting,
                dt,
                quad_nodes,
            };
            s.finish();
            n
        };
        let initial = {
            let mut s = Section { name: "initial", table: tables[5], errors: &mut errors, used: Vec::new() };
            let kind = match s.string("kind", Some("maxwellian")).as_str() {
                "maxwellian" => InitialKind::Maxwellian,
                "doping-maxwellian" => InitialKind::DopingMaxwellian,
                "wave" => InitialKind::Wave,
                other => {
                    s.err("kind", format!("expected maxwellian, doping-maxwellian or wave, got {other:?}"));
                    InitialKind::Maxwellian
                }
            };
            let amplitude = s.float("amplitude", Some(0.0));
            let anisotropy = s.float("anisotropy", Some(0.0));
            if amplitude.abs() >= 1.0 {
                s.err("amplitude", format!("must lie in (-1, 1), got {amplitude}"));
            }
            if anisotropy.abs() >= 1.0 {
                s.err("anisotropy", format!("must lie in (-1, 1), got {anisotropy}"));
            }
            let i = InitialConfig {
                kind,
                amplitude,
                anisotropy,
                modes: s.count("modes", Some(1), 0) as u32,
            };
            s.finish();
            i
        };
        let run = {
            let mut s = Section { name: "run", table: tables[6], errors: &mut errors, used: Vec::new() };
            let r = RunConfig {
                t_final: s.positive("t_final", Some(1.0)),
                max_steps: s.count("max_steps", Some(1_000_000), 0),
                snapshot_every: s.count("snapshot_every", Some(0), 0),
                output_dir: s.string("output_dir", Some("out")),
                seed: s.count("seed", Some(0), 0) as u64,
                flatten_delta: s.positive("flatten_delta", Some(1e-6)),
            };
            s.finish();
            r
        };
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(SimulationConfig {
            mesh,
            band,
            scattering,
            poisson,
            numerics,
            initial,
            run,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let f = |v: f64| format!("{v:?}");
        let m = &self.mesh;
        let _ = writeln!(o, "[mesh]\nnx = {}\nnp = {}\nnmu = {}\nlength = {}\np_max = {}\n", m.nx, m.np, m.nmu, f(m.length), f(m.p_max));
        let b = &self.band;
        let kind = match b.kind {
            BandKind::Parabolic => "parabolic",
            BandKind::Kane => "kane",
        };
        let _ = writeln!(o, "[band]\nkind = \"{kind}\"\nm_star = {}\nalpha_k = {}\n", f(b.m_star), f(b.alpha_k));
        let s = &self.scattering;
        let nph = match s.n_ph {
            Occupancy::Thermal => "\"thermal\"".to_string(),
            Occupancy::Value(v) => f(v),
        };
        let _ = writeln!(
            o,
            "[scattering]\nenabled = {}\ncoupling = {}\nhbar_omega = {}\nn_ph = {nph}\nc0 = {}\n",
            s.enabled,
            f(s.coupling),
            f(s.hbar_omega),
            f(s.c0)
        );
        let p = &self.poisson;
        let _ = writeln!(o, "[poisson]");
        match p.bc {
            BcConfig::Periodic => {
                let _ = writeln!(o, "bc = \"periodic\"");
            }
            BcConfig::Dirichlet { phi0 } => {
                let _ = writeln!(o, "bc = \"dirichlet\"\nphi0 = {}", f(phi0));
            }
        }
        let _ = writeln!(o, "q = {}\nepsilon = {}", f(p.q), f(p.epsilon));
        match p.doping {
            DopingConfig::Uniform { n } => {
                let _ = writeln!(o, "doping = \"uniform\"\nn = {}", f(n));
            }
            DopingConfig::NPlusNNPlus {
                n_plus,
                n,
                junction_left,
                junction_right,
            } => {
                let _ = writeln!(
                    o,
                    "doping = \"n+nn+\"\nn_plus = {}\nn = {}\njunction_left = {}\njunction_right = {}",
                    f(n_plus),
                    f(n),
                    f(junction_left),
                    f(junction_right)
                );
            }
        }
        let field = match p.field {
            FieldMode::SelfConsistent => "self-consistent",
            FieldMode::Frozen => "frozen",
            FieldMode::Zero => "zero",
        };
        let _ = writeln!(o, "field = \"{field}\"\nneutralize = {}\n", p.neutralize);
        let n = &self.numerics;
        let alpha = match n.alpha {
            AlphaPolicy::Auto => "\"auto\"".to_string(),
            AlphaPolicy::Fixed(a) => f(a),
        };
        let w = match n.weighting {
            Weighting::Standard => "standard",
            Weighting::Entropy => "entropy",
        };
        let _ = writeln!(
            o,
            "[numerics]\ndegree = {}\nrk = {}\ncfl_safety = {}\nlimiter = {}\nalpha = {alpha}\nweighting = \"{w}\"",
            n.degree,
            n.rk.as_int(),
            f(n.cfl_safety),
            n.limiter
        );
        if let Some(dt) = n.dt {
            let _ = writeln!(o, "dt = {}", f(dt));
        }
        if let Some(q) = n.quad_nodes {
            let _ = writeln!(o, "quad_nodes = {q}");
        }
        let _ = writeln!(o);
        let i = &self.initial;
        let kind = match i.kind {
            InitialKind::Maxwellian => "maxwellian",
            InitialKind::DopingMaxwellian => "doping-maxwellian",
            InitialKind::Wave => "wave",
        };
        let _ = writeln!(
            o,
            "[initial]\nkind = \"{kind}\"\namplitude = {}\nanisotropy = {}\nmodes = {}\n",
            f(i.amplitude),
            f(i.anisotropy),
            i.modes
        );
        let r = &self.run;
        let _ = write!(
            o,
            "[run]\nt_final = {}\nmax_steps = {}\nsnapshot_every = {}\noutput_dir = {:?}\nseed = {}\nflatten_delta = {}\n",
            f(r.t_final),
            r.max_steps,
            r.snapshot_every,
            r.output_dir,
            r.seed,
            f(r.flatten_delta)
        );
        o
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_text().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[mesh]\nnx = 4\nnp = 4\nnmu = 2\np_max = 3.0\n[poisson]\nbc = \"periodic\"\n";

    #[test]
    fn minimal_parses_with_defaults() {
        let c = SimulationConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(c.mesh.length, 1.0);
        assert_eq!(c.numerics.rk, RkOrder::Rk2);
        assert_eq!(c.numerics.cfl_safety, 0.9);
        assert_eq!(c.poisson.bc, BcConfig::Periodic);
        assert_eq!(c.scattering.n_ph, Occupancy::Thermal);
    }

    #[test]
    fn errors_are_exhaustive() {
        let text = "[mesh]\nnx = 0\nnp = 4\nnmu = 2\np_max = -1.0\nbogus = 1\n[poisson]\nbc = \"periodic\"\n[extra]\n";
        match SimulationConfig::parse_str(text) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|e| e.starts_with("mesh.nx")));
                assert!(v.iter().any(|e| e.starts_with("mesh.p_max")));
                assert!(v.iter().any(|e| e.starts_with("mesh.bogus")));
                assert!(v.iter().any(|e| e.starts_with("extra")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let c = SimulationConfig::parse_str(MINIMAL).unwrap();
        let t1 = c.to_text();
        let c2 = SimulationConfig::parse_str(&t1).unwrap();
        assert_eq!(c, c2);
        assert_eq!(t1, c2.to_text());
        assert_eq!(c.hash().len(), 64);
    }
}
