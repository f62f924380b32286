//! Energy band models: parabolic and Kane, in units with k_B T = 1.

use crate::error::{Error, Result};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Parabolic,
    Kane,
}

/// Hard indicator of the admissible energy window [0, eps_max].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffChi {
    pub eps_max: f64,
}

impl CutoffChi {
    #[inline]
    pub fn contains(&self, eps: f64) -> bool {
        (0.0..=self.eps_max).contains(&eps)
    }
    #[inline]
    pub fn chi(&self, eps: f64) -> f64 {
        if self.contains(eps) {
            1.0
        } else {
            0.0
        }
    }
}

/// ε(p) with ε(1 + α ε) = p²/(2m*); α = 0 gives the parabolic band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandModel {
    pub kind: BandKind,
    pub m_star: f64,
    pub alpha_k: f64,
    pub eps_max: f64,
}

impl BandModel {
    pub fn new(kind: BandKind, m_star: f64, alpha_k: f64, p_max: f64) -> Result<Self> {
        if !(m_star > 0.0 && m_star.is_finite()) {
            return Err(Error::Config(format!("m_star must be positive, got {m_star}")));
        }
        if kind == BandKind::Kane && !(alpha_k >= 0.0 && alpha_k.is_finite()) {
            return Err(Error::Config(format!("alpha_k must be nonnegative, got {alpha_k}")));
        }
        if !(p_max > 0.0) {
            return Err(Error::Config(format!("p_max must be positive, got {p_max}")));
        }
        let alpha_k = if kind == BandKind::Parabolic { 0.0 } else { alpha_k };
        let mut b = BandModel {
            kind,
            m_star,
            alpha_k,
            eps_max: 0.0,
        };
        b.eps_max = b.eps(p_max);
        Ok(b)
    }

    pub fn parabolic(m_star: f64, p_max: f64) -> Result<Self> {
        Self::new(BandKind::Parabolic, m_star, 0.0, p_max)
    }

    pub fn kane(m_star: f64, alpha_k: f64, p_max: f64) -> Result<Self> {
        Self::new(BandKind::Kane, m_star, alpha_k, p_max)
    }

    pub fn cutoff(&self) -> CutoffChi {
        CutoffChi { eps_max: self.eps_max }
    }

    pub fn energy(&self, p: f64) -> Result<f64> {
        nonneg("p", p)?;
        Ok(self.eps(p))
    }

    pub fn velocity(&self, p: f64) -> Result<f64> {
        nonneg("p", p)?;
        Ok(self.v(p))
    }

    pub fn momentum_of_energy(&self, eps: f64) -> Result<f64> {
        nonneg("eps", eps)?;
        Ok(self.p_of(eps))
    }

    pub fn dp_de(&self, eps: f64) -> Result<f64> {
        nonneg("eps", eps)?;
        let p = self.p_of(eps);
        if p == 0.0 {
            return Err(Error::Domain("dp/dε is unbounded at ε = 0".into()));
        }
        Ok(self.m_star * (1.0 + 2.0 * self.alpha_k * eps) / p)
    }

    /// n(ε) = 4π p² dp/dε χ(ε).
    pub fn density_of_states(&self, eps: f64) -> f64 {
        if !self.cutoff().contains(eps) {
            return 0.0;
        }
        4.0 * PI * self.w(eps)
    }

    /// ε(p) without domain checks.
    #[inline]
    pub fn eps(&self, p: f64) -> f64 {
        let g = p * p / (2.0 * self.m_star);
        if self.alpha_k == 0.0 {
            g
        } else {
            // stable root of α ε² + ε − g = 0
            2.0 * g / (1.0 + (1.0 + 4.0 * self.alpha_k * g).sqrt())
        }
    }

    /// dε/dp without domain checks.
    #[inline]
    pub fn v(&self, p: f64) -> f64 {
        let e = self.eps(p);
        p / (self.m_star * (1.0 + 2.0 * self.alpha_k * e))
    }

    /// p(ε) without domain checks.
    #[inline]
    pub fn p_of(&self, eps: f64) -> f64 {
        (2.0 * self.m_star * eps * (1.0 + self.alpha_k * eps)).sqrt()
    }

    /// W(ε) = p² dp/dε = m* p(ε) (1 + 2αε), finite at ε = 0.
    #[inline]
    pub fn w(&self, eps: f64) -> f64 {
        if eps <= 0.0 {
            return 0.0;
        }
        self.m_star * self.p_of(eps) * (1.0 + 2.0 * self.alpha_k * eps)
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v < 0.0 || v.is_nan() {
        return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
    }
    Ok(())
}
