//! Service-time distributions: survival, density, hazard, mean residual life
//! and sampling.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::numerics::{find_root_with, integrate_with_scale, Grid, RootOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceKind {
    Exponential { rate: f64 },
    Hyperexponential { probs: Vec<f64>, rates: Vec<f64> },
    /// Pareto type I: survival `(scale / t)^shape` for `t >= scale`.
    Pareto { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Mixture { components: Vec<ServiceModel>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceModel {
    kind: ServiceKind,
    mean: f64,
    imrl: bool,
}

/// Grid resolution and slack used when certifying generic models on construction.
const CERTIFY_POINTS: usize = 600;
const CERTIFY_EPS: f64 = 1e-3;

fn positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive and finite, got {x}")))
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} must not be empty")));
    }
    for &p in w {
        positive(p, what)?;
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("{what} must sum to 1, got {total}")));
    }
    Ok(())
}

impl ServiceModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        positive(rate, "rate")?;
        Ok(Self { kind: ServiceKind::Exponential { rate }, mean: 1.0 / rate, imrl: true })
    }

    pub fn hyperexponential(probs: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        check_weights(&probs, "phase probabilities")?;
        if probs.len() != rates.len() {
            return Err(Error::InvalidParameter("phase probabilities and rates differ in length".into()));
        }
        for &r in &rates {
            positive(r, "phase rate")?;
        }
        let mean = probs.iter().zip(&rates).map(|(p, r)| p / r).sum();
        Ok(Self { kind: ServiceKind::Hyperexponential { probs, rates }, mean, imrl: true })
    }

    /// Shape must exceed 1 for a finite mean. The mean residual life is
    /// increasing on the support `[scale, ∞)`.
    pub fn pareto(shape: f64, scale: f64) -> Result<Self> {
        positive(scale, "scale")?;
        if !(shape.is_finite() && shape > 1.0) {
            return Err(Error::InvalidParameter(format!("Pareto shape must exceed 1, got {shape}")));
        }
        let mean = shape * scale / (shape - 1.0);
        Ok(Self { kind: ServiceKind::Pareto { shape, scale }, mean, imrl: true })
    }

    /// Generic model; the IMRL flag comes from grid certification.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidParameter(format!("uniform needs 0 <= lo < hi, got [{lo}, {hi}]")));
        }
        Self::certified(ServiceKind::Uniform { lo, hi }, 0.5 * (lo + hi))
    }

    /// Generic finite mixture; the IMRL flag comes from grid certification.
    pub fn mixture(components: Vec<ServiceModel>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, "mixture weights")?;
        if components.len() != weights.len() {
            return Err(Error::InvalidParameter("mixture components and weights differ in length".into()));
        }
        let mean = components.iter().zip(&weights).map(|(c, w)| w * c.mean).sum();
        Self::certified(ServiceKind::Mixture { components, weights }, mean)
    }

    fn certified(kind: ServiceKind, mean: f64) -> Result<Self> {
        let mut model = Self { kind, mean, imrl: false };
        let hi = model.tail_point(1e-6);
        let grid = Grid::new(0.0, hi, CERTIFY_POINTS)?;
        model.imrl = model.certify_imrl(&grid, CERTIFY_EPS);
        Ok(model)
    }

    pub fn kind(&self) -> &ServiceKind {
        &self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Whether the model is known or certified to have nondecreasing MRL.
    pub fn is_imrl(&self) -> bool {
        self.imrl
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, ServiceKind::Exponential { .. })
    }

    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match &self.kind {
            ServiceKind::Exponential { rate } => (-rate * t).exp(),
            ServiceKind::Hyperexponential { probs, rates } => {
                probs.iter().zip(rates).map(|(p, r)| p * (-r * t).exp()).sum()
            }
            ServiceKind::Pareto { shape, scale } => {
                if t < *scale {
                    1.0
                } else {
                    (scale / t).powf(*shape)
                }
            }
            ServiceKind::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
            ServiceKind::Mixture { components, weights } => {
                components.iter().zip(weights).map(|(c, w)| w * c.survival(t)).sum()
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.kind {
            ServiceKind::Exponential { rate } => rate * (-rate * t).exp(),
            ServiceKind::Hyperexponential { probs, rates } => {
                probs.iter().zip(rates).map(|(p, r)| p * r * (-r * t).exp()).sum()
            }
            ServiceKind::Pareto { shape, scale } => {
                if t < *scale {
                    0.0
                } else {
                    shape / t * (scale / t).powf(*shape)
                }
            }
            ServiceKind::Uniform { lo, hi } => {
                if t >= *lo && t < *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            ServiceKind::Mixture { components, weights } => {
                components.iter().zip(weights).map(|(c, w)| w * c.pdf(t)).sum()
            }
        }
    }

    /// Hyperexponential weights rescaled by the slowest phase so that ratios
    /// stay finite at large ages.
    fn phase_weights<'a>(probs: &'a [f64], rates: &'a [f64], t: f64) -> impl Iterator<Item = (f64, f64)> + 'a {
        let slow = rates.iter().copied().fold(f64::INFINITY, f64::min);
        probs.iter().zip(rates).map(move |(p, r)| (p * (-(r - slow) * t).exp(), *r))
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        let t = t.max(0.0);
        match &self.kind {
            ServiceKind::Exponential { rate } => Ok(*rate),
            ServiceKind::Hyperexponential { probs, rates } => {
                let (num, den) = Self::phase_weights(probs, rates, t)
                    .fold((0.0, 0.0), |(n, d), (w, r)| (n + w * r, d + w));
                Ok(num / den)
            }
            _ => {
                let s = self.survival(t);
                if s <= 0.0 {
                    Err(Error::BeyondSupport)
                } else {
                    Ok(self.pdf(t) / s)
                }
            }
        }
    }

    /// `F̄(a + y) / F̄(a)`, evaluated without underflow for exponential phases.
    pub fn survival_ratio(&self, a: f64, y: f64) -> f64 {
        let a = a.max(0.0);
        match &self.kind {
            ServiceKind::Exponential { rate } => (-rate * y.max(0.0)).exp(),
            ServiceKind::Hyperexponential { probs, rates } => {
                let (num, den) = Self::phase_weights(probs, rates, a).fold((0.0, 0.0), |(n, d), (w, r)| {
                    (n + w * (-r * y.max(0.0)).exp(), d + w)
                });
                num / den
            }
            _ => {
                let s = self.survival(a);
                if s <= 0.0 {
                    0.0
                } else {
                    self.survival(a + y.max(0.0)) / s
                }
            }
        }
    }

    /// Mean residual life `E[X - t | X > t]`.
    pub fn mrl(&self, t: f64) -> Result<f64> {
        let t = t.max(0.0);
        match &self.kind {
            ServiceKind::Exponential { rate } => Ok(1.0 / rate),
            ServiceKind::Hyperexponential { probs, rates } => {
                let (num, den) = Self::phase_weights(probs, rates, t)
                    .fold((0.0, 0.0), |(n, d), (w, r)| (n + w / r, d + w));
                Ok(num / den)
            }
            ServiceKind::Pareto { shape, scale } => {
                if t < *scale {
                    Ok(self.mean - t)
                } else {
                    Ok(t / (shape - 1.0))
                }
            }
            ServiceKind::Uniform { lo, hi } => {
                if t >= *hi {
                    Err(Error::BeyondSupport)
                } else if t < *lo {
                    Ok(0.5 * (lo + hi) - t)
                } else {
                    Ok(0.5 * (hi - t))
                }
            }
            ServiceKind::Mixture { .. } => {
                let s = self.survival(t);
                if s <= 0.0 {
                    return Err(Error::BeyondSupport);
                }
                let end = self.support_end();
                let tail = integrate_with_scale(|x| self.survival(x), t, end, 1e-10 * s, 10.0 * self.mean)?;
                Ok(tail / s)
            }
        }
    }

    /// `lim_{t→∞} m_X(t)`; infinite for Pareto.
    pub fn mrl_limit(&self) -> f64 {
        match &self.kind {
            ServiceKind::Exponential { rate } => 1.0 / rate,
            ServiceKind::Hyperexponential { rates, .. } => 1.0 / rates.iter().copied().fold(f64::INFINITY, f64::min),
            ServiceKind::Pareto { .. } => f64::INFINITY,
            ServiceKind::Uniform { .. } => 0.0,
            ServiceKind::Mixture { components, .. } => {
                components.iter().map(|c| c.mrl_limit()).fold(0.0, f64::max)
            }
        }
    }

    /// Right end of the support (may be infinite).
    pub fn support_end(&self) -> f64 {
        match &self.kind {
            ServiceKind::Uniform { hi, .. } => *hi,
            ServiceKind::Mixture { components, .. } => components.iter().map(|c| c.support_end()).fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }

    /// Smallest `t` with `F̄(t) <= eps` (to root tolerance), or the support end.
    pub fn tail_point(&self, eps: f64) -> f64 {
        let eps = eps.clamp(1e-300, 0.5);
        match &self.kind {
            ServiceKind::Exponential { rate } => -eps.ln() / rate,
            ServiceKind::Pareto { shape, scale } => scale * eps.powf(-1.0 / shape),
            ServiceKind::Uniform { lo, hi } => hi - eps * (hi - lo),
            _ => {
                let mut hi = 10.0 * self.mean;
                while self.survival(hi) > eps && hi < 1e300 {
                    hi *= 2.0;
                }
                let f = |t: f64| (self.survival(t) / eps).ln();
                find_root_with(f, 0.0, hi, RootOptions { xtol: 1e-12 * hi, ftol: 1e-9, max_iter: 400 }).unwrap_or(hi)
            }
        }
    }

    /// `∫_0^c λ e^{-λq} F̄(a+q) dq / F̄(a)`: the probability that an Exp(λ)
    /// gap ends before both `c` and the residual service of a job aged `a`.
    pub fn discounted_survival(&self, a: f64, c: f64, lambda: f64) -> f64 {
        if !(c > 0.0) {
            return 0.0;
        }
        let factor = |r: f64| {
            let k = lambda + r;
            if c.is_finite() {
                lambda * (-(-k * c).exp_m1()) / k
            } else {
                lambda / k
            }
        };
        match &self.kind {
            ServiceKind::Exponential { rate } => factor(*rate),
            ServiceKind::Hyperexponential { probs, rates } => {
                let (num, den) = Self::phase_weights(probs, rates, a.max(0.0))
                    .fold((0.0, 0.0), |(n, d), (w, r)| (n + w * factor(r), d + w));
                num / den
            }
            _ => {
                let s = self.survival(a);
                if s <= 0.0 {
                    return 0.0;
                }
                let hi = c.min(self.support_end() - a.max(0.0)).max(0.0);
                let f = |q: f64| lambda * (-lambda * q).exp() * self.survival_ratio(a, q);
                integrate_with_scale(f, 0.0, hi, 1e-12, 10.0 / lambda).unwrap_or(0.0)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            ServiceKind::Exponential { rate } => Exp::new(*rate).map(|d| d.sample(rng)).unwrap_or(f64::INFINITY),
            ServiceKind::Hyperexponential { probs, rates } => {
                let i = pick(probs, rng.random::<f64>());
                Exp::new(rates[i]).map(|d| d.sample(rng)).unwrap_or(f64::INFINITY)
            }
            ServiceKind::Pareto { shape, scale } => rand_distr::Pareto::new(*scale, *shape)
                .map(|d| d.sample(rng))
                .unwrap_or(f64::INFINITY),
            ServiceKind::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            ServiceKind::Mixture { components, weights } => {
                let i = pick(weights, rng.random::<f64>());
                components[i].sample(rng)
            }
        }
    }

    /// True iff the MRL never falls more than `eps` below its running
    /// maximum over the grid. Points outside the support are skipped.
    pub fn certify_imrl(&self, grid: &Grid, eps: f64) -> bool {
        let mut peak: Option<f64> = None;
        for t in grid.points() {
            if self.survival(t) <= 0.0 {
                continue;
            }
            let Ok(m) = self.mrl(t) else { return false };
            if let Some(p) = peak {
                if m < p - eps {
                    return false;
                }
            }
            peak = Some(peak.map_or(m, |p: f64| p.max(m)));
        }
        true
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
