//! Transport fields β in curvilinear momentum coordinates and numeric checks of
//! ∂·β = 0 and β·∂H = 0.
//!
//! Two families are provided: the (x, p, μ) spherical field of the reduced
//! solver and the five-dimensional (x, y, w, μ, φ) field of the Kane
//! energy-angular system. The latter is only evaluated, never advected.

use crate::band::BandModel;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

pub type Field1 = Box<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Field2 = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// β = (p²μ ∂_pε, −qE p²μ, −qE p(1−μ²)) on (x, p, μ).
pub struct BetaSpherical {
    pub band: BandModel,
    pub q: f64,
    pub e_field: Field1,
}

/// β₁…β₅ on (x, y, w, μ, φ) with H = w − 2c_k V/c_x and E = −∇V.
pub struct BetaKane5 {
    pub c_x: f64,
    pub c_k: f64,
    pub alpha_k: f64,
    pub e_x: Field2,
    pub e_y: Field2,
}

pub trait BetaField: Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn beta(&self, pt: &[f64]) -> Result<Vec<f64>>;
    fn grad_h(&self, pt: &[f64]) -> Result<Vec<f64>>;
    /// Distance from `pt` to the nearest singular locus of the coordinates.
    fn margin(&self, pt: &[f64]) -> f64;
}

fn check_dim(pt: &[f64], n: usize) -> Result<()> {
    if pt.len() != n {
        return Err(Error::Domain(format!("expected a point with {n} coordinates, got {}", pt.len())));
    }
    Ok(())
}

impl BetaField for BetaSpherical {
    fn name(&self) -> &'static str {
        "spherical"
    }
    fn dim(&self) -> usize {
        3
    }
    fn beta(&self, pt: &[f64]) -> Result<Vec<f64>> {
        check_dim(pt, 3)?;
        let (x, p, mu) = (pt[0], pt[1], pt[2]);
        if p < 0.0 || !(-1.0..=1.0).contains(&mu) {
            return Err(Error::Domain(format!("(p, μ) = ({p}, {mu}) is outside p ≥ 0, |μ| ≤ 1")));
        }
        let e = (self.e_field)(x);
        let v = self.band.v(p);
        Ok(vec![p * p * mu * v, -self.q * e * p * p * mu, -self.q * e * p * (1.0 - mu * mu)])
    }
    fn grad_h(&self, pt: &[f64]) -> Result<Vec<f64>> {
        check_dim(pt, 3)?;
        // H = ε(p) − qΦ(x), ∂_xH = qE
        Ok(vec![self.q * (self.e_field)(pt[0]), self.band.velocity(pt[1])?, 0.0])
    }
    fn margin(&self, pt: &[f64]) -> f64 {
        pt[1].min(1.0 - pt[2].abs())
    }
}

impl BetaField for BetaKane5 {
    fn name(&self) -> &'static str {
        "kane5"
    }
    fn dim(&self) -> usize {
        5
    }
    fn beta(&self, pt: &[f64]) -> Result<Vec<f64>> {
        check_dim(pt, 5)?;
        let (x, y, w, mu, ph) = (pt[0], pt[1], pt[2], pt[3], pt[4]);
        if !(mu > -1.0 && mu < 1.0) {
            return Err(Error::Domain(format!("μ = {mu} is on the coordinate singularity |μ| = 1")));
        }
        if w < 0.0 {
            return Err(Error::Domain(format!("w must be nonnegative, got {w}")));
        }
        let (ex, ey) = ((self.e_x)(x, y), (self.e_y)(x, y));
        let s = (1.0 - mu * mu).sqrt();
        let a = self.alpha_k;
        let g = w * (1.0 + a * w);
        let d = 1.0 + 2.0 * a * w;
        let (c, sn) = (ph.cos(), ph.sin());
        Ok(vec![
            self.c_x * g * mu,
            self.c_x * g * s * c,
            -self.c_k * 2.0 * g * (mu * ex + s * c * ey),
            -self.c_k * s * d * (s * ex - mu * c * ey),
            self.c_k * d * ey * sn / s,
        ])
    }
    fn grad_h(&self, pt: &[f64]) -> Result<Vec<f64>> {
        check_dim(pt, 5)?;
        let (ex, ey) = ((self.e_x)(pt[0], pt[1]), (self.e_y)(pt[0], pt[1]));
        let r = 2.0 * self.c_k / self.c_x;
        Ok(vec![r * ex, r * ey, 1.0, 0.0, 0.0])
    }
    fn margin(&self, pt: &[f64]) -> f64 {
        pt[2].min(1.0 - pt[3].abs())
    }
}

pub fn beta_eval(field: &dyn BetaField, pt: &[f64]) -> Result<Vec<f64>> {
    field.beta(pt)
}

/// Σ_j ∂_jβ_j by central differences of step h.
pub fn divergence_numeric(field: &dyn BetaField, pt: &[f64], h: f64) -> Result<f64> {
    check_dim(pt, field.dim())?;
    if !(h > 0.0) || field.margin(pt) < 2.0 * h {
        return Err(Error::Domain(format!("step {h} too large for the margin {} at this point", field.margin(pt))));
    }
    let mut div = 0.0;
    let mut q = pt.to_vec();
    for j in 0..pt.len() {
        q[j] = pt[j] + h;
        let up = field.beta(&q)?[j];
        q[j] = pt[j] - h;
        let dn = field.beta(&q)?[j];
        q[j] = pt[j];
        div += (up - dn) / (2.0 * h);
    }
    Ok(div)
}

/// β·∂H together with the scale Σ|β_j ∂_jH| it is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orthogonality {
    pub value: f64,
    pub scale: f64,
}

pub fn beta_dot_grad_h(field: &dyn BetaField, pt: &[f64]) -> Result<Orthogonality> {
    let b = field.beta(pt)?;
    let g = field.grad_h(pt)?;
    let value = b.iter().zip(&g).map(|(a, c)| a * c).sum();
    let scale = b.iter().zip(&g).map(|(a, c)| (a * c).abs()).sum();
    Ok(Orthogonality { value, scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaReport {
    pub family: String,
    pub points: usize,
    /// max over points of |div β| / max_j|β_j|
    pub max_div_rel: f64,
    /// max over points of |β·∂H| / scale
    pub max_orth_rel: f64,
    pub pass: bool,
}

pub const DIV_TOL: f64 = 1e-6;
pub const ORTH_TOL: f64 = 1e-12;
/// Spherical sampling keeps |μ| ≤ 1 − MU_MARGIN.
pub const MU_MARGIN: f64 = 0.05;
/// Kane sampling keeps |μ| ≤ KANE_MU_MAX. The central-difference error of the
/// √(1−μ²) factors grows like h²(1−μ²)^{−5/2}; at |μ| = 0.95 it alone reaches
/// the 1e-6 divergence tolerance.
pub const KANE_MU_MAX: f64 = 0.9;

fn check_points(field: &dyn BetaField, pts: &[Vec<f64>], h: f64) -> Result<BetaReport> {
    let res: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|pt| -> Result<(f64, f64)> {
            let b = field.beta(pt)?;
            let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let div = divergence_numeric(field, pt, h)?;
            let o = beta_dot_grad_h(field, pt)?;
            let d = if bmax > 0.0 { div.abs() / bmax } else { div.abs() };
            let r = if o.scale > 0.0 { o.value.abs() / o.scale } else { o.value.abs() };
            Ok((d, r))
        })
        .collect::<Result<_>>()?;
    let max_div_rel = res.iter().fold(0.0f64, |a, r| a.max(r.0));
    let max_orth_rel = res.iter().fold(0.0f64, |a, r| a.max(r.1));
    Ok(BetaReport {
        family: field.name().to_string(),
        points: pts.len(),
        max_div_rel,
        max_orth_rel,
        pass: max_div_rel <= DIV_TOL && max_orth_rel <= ORTH_TOL,
    })
}

/// Seeded random cloud for the spherical field on [0, L] × (0, p_max] × [−1, 1].
pub fn sample_spherical(seed: u64, n: usize, length: f64, p_max: f64, h: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            vec![
                rng.random_range(0.0..length),
                rng.random_range(2.5 * h..p_max),
                rng.random_range(-1.0 + MU_MARGIN..1.0 - MU_MARGIN),
            ]
        })
        .collect()
}

/// Seeded random cloud for the Kane field with w ∈ (0, w_max], |μ| ≤ KANE_MU_MAX.
pub fn sample_kane(seed: u64, n: usize, w_max: f64, h: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            vec![
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(2.5 * h..w_max),
                rng.random_range(-KANE_MU_MAX..KANE_MU_MAX),
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect()
}

/// Runs both families on `n` seeded points each with difference step `h`.
pub fn verify_beta(band: BandModel, q: f64, alpha_k: f64, seed: u64, n: usize, h: f64) -> Result<Vec<BetaReport>> {
    let sph = BetaSpherical {
        band,
        q,
        e_field: Box::new(|x| 1.5 * (2.0 * PI * x).cos() + 0.3),
    };
    let p_max = band.p_of(band.eps_max);
    let r1 = check_points(&sph, &sample_spherical(seed, n, 1.0, p_max, h), h)?;
    let kane = BetaKane5 {
        c_x: 1.3,
        c_k: 0.7,
        alpha_k,
        e_x: Box::new(|x, y| (2.0 * PI * x).sin() + 0.5 * y),
        e_y: Box::new(|x, y| 0.8 * (2.0 * PI * y).cos() - 0.2 * x),
    };
    let r2 = check_points(&kane, &sample_kane(seed.wrapping_add(1), n, 4.0, h), h)?;
    Ok(vec![r1, r2])
}
