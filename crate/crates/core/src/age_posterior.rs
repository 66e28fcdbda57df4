//! Service-age beliefs of a type-II customer who found `n` on arrival and
//! has waited `t` without seeing a completion.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::distributions::ServiceModel;
use crate::numerics::Mesh;
use crate::profile::ThresholdProfile;
use crate::steady_state::SteadyState;
use crate::utility::MarketParams;
use crate::{Error, Result};

/// Smallest conditioning mass accepted before reporting a null event.
const NULL_MASS: f64 = 1e-14;

/// Gauss panels per histogram bin.
const BIN_PANELS: usize = 4;

/// A density over the service age on quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgePosterior {
    pub n: usize,
    pub t: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
    /// Bayes denominator; `π_n` for an arrival prior.
    pub normalizer: f64,
}

impl AgePosterior {
    pub fn point_mass(n: usize, t: f64, a0: f64) -> Self {
        Self { n, t, nodes: alloc::vec![a0], weights: alloc::vec![1.0], density: alloc::vec![1.0], normalizer: 1.0 }
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().zip(&self.density).map(|(w, d)| w * d).sum()
    }

    pub fn mean_age(&self) -> f64 {
        let m: f64 = self.nodes.iter().zip(&self.weights).zip(&self.density).map(|((a, w), d)| a * w * d).sum();
        m / self.mass()
    }

    /// `∫ m_X(a + t) f(a) da`.
    pub fn expected_residual(&self, model: &ServiceModel) -> Result<f64> {
        let mut acc = 0.0;
        for ((&a, &w), &d) in self.nodes.iter().zip(&self.weights).zip(&self.density) {
            if d > 0.0 {
                acc += w * d * model.mrl(a + self.t)?;
            }
        }
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(Error::PosteriorUndefined);
        }
        Ok(acc / mass)
    }

    /// Mass of the density on `[lo, hi)`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.density)
            .filter(|((&a, _), _)| a >= lo && a < hi)
            .map(|((_, w), d)| w * d)
            .sum()
    }
}

/// Mixture over the pre-arrival structure given `N = 2` and age `a`:
/// `(1,a)` with probability `prob_i1`, otherwise `(0,a,w₁)` with `W₁`
/// distributed as `w1_density`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalMixture {
    pub a: f64,
    pub prob_i1: f64,
    pub w1_nodes: Vec<f64>,
    pub w1_weights: Vec<f64>,
    pub w1_density: Vec<f64>,
}

/// `f_{A|N=n}`: age seen by an arrival finding `n` customers.
pub fn age_density_given_n(n: usize, steady: &SteadyState) -> Result<AgePosterior> {
    if n == 0 || n > steady.n_max || n > 3 {
        return Err(Error::NullEvent(n));
    }
    let pi_n = steady.pi[n];
    if !(pi_n > NULL_MASS) {
        return Err(Error::NullEvent(n));
    }
    let mesh = steady.age_mesh(&[]);
    let density = mesh.nodes().iter().map(|&a| steady.density_n(n, a) / pi_n).collect();
    Ok(AgePosterior {
        n,
        t: 0.0,
        nodes: mesh.nodes().to_vec(),
        weights: mesh.weights().to_vec(),
        density,
        normalizer: pi_n,
    })
}

fn gap_likelihood(y: f64, a: f64, cap: f64, params: &MarketParams, model: &ServiceModel) -> Result<f64> {
    if y < 0.0 || y > cap {
        return Ok(0.0);
    }
    let z = model.discounted_survival(a, cap, params.lambda);
    if !(z > 0.0) {
        return Err(Error::PosteriorUndefined);
    }
    Ok(params.lambda * (-params.lambda * y).exp() * model.survival_ratio(a, y) / z)
}

/// Density of the gap `Y` to the next arrival given `N = 1` and age `a`,
/// conditioned on that arrival preceding both the completion and `S₁`.
pub fn y_density_given_age_n1(
    y: f64,
    a: f64,
    profile: &ThresholdProfile,
    params: &MarketParams,
    model: &ServiceModel,
) -> Result<f64> {
    if model.survival(a) <= 0.0 {
        return Err(Error::BeyondSupport);
    }
    gap_likelihood(y, a, profile.s_n(1), params, model)
}

pub fn arrival_mixture(a: f64, steady: &SteadyState) -> Result<ArrivalMixture> {
    let p1 = steady.p1a(a);
    let knots = [steady.s1() - steady.s2()];
    let mesh = steady.w1_mesh_at(a, f64::INFINITY, &knots);
    let vals: Vec<f64> = mesh.nodes().iter().map(|&w| steady.p0aw(a, w)).collect();
    let int = mesh.dot(&vals);
    let total = p1 + int;
    if !(total > 0.0) {
        return Err(Error::NullEvent(2));
    }
    let w1_density = if int > 0.0 { vals.iter().map(|v| v / int).collect() } else { alloc::vec![0.0; vals.len()] };
    Ok(ArrivalMixture {
        a,
        prob_i1: p1 / total,
        w1_nodes: mesh.nodes().to_vec(),
        w1_weights: mesh.weights().to_vec(),
        w1_density,
    })
}

/// Density of `Y` given `N = 2` and age `a`. The `(1,a)` branch is capped
/// by `S₂ ∧ (T₁ - a)`, the `(0,a,w₁)` branch by `S₂ ∧ (S₁ - w₁)`.
pub fn y_density_given_age_n2(
    y: f64,
    a: f64,
    mixture: &ArrivalMixture,
    profile: &ThresholdProfile,
    params: &MarketParams,
    model: &ServiceModel,
) -> Result<f64> {
    if model.survival(a) <= 0.0 {
        return Err(Error::BeyondSupport);
    }
    let (s1, s2, t1) = (profile.s_n(1), profile.s_n(2), profile.t_n(1));
    if mixture.prob_i1 > 0.0 && a >= t1 {
        return Err(Error::PastThreshold);
    }
    let mut out = 0.0;
    if mixture.prob_i1 > 0.0 {
        out += mixture.prob_i1 * gap_likelihood(y, a, s2.min(t1 - a), params, model)?;
    }
    if mixture.prob_i1 < 1.0 {
        let mut branch = 0.0;
        for ((&w, &wt), &d) in mixture.w1_nodes.iter().zip(&mixture.w1_weights).zip(&mixture.w1_density) {
            if d > 0.0 {
                branch += wt * d * gap_likelihood(y, a, s2.min(s1 - w), params, model)?;
            }
        }
        out += (1.0 - mixture.prob_i1) * branch;
    }
    Ok(out)
}

/// Posterior `f_{A | N=n, Y=t}` for `n ∈ {1, 2}`, built on the steady-state
/// age mesh refined at the cut points that depend on `t`.
pub fn posterior_age(n: usize, t: f64, steady: &SteadyState) -> Result<AgePosterior> {
    let params = *steady.params();
    let model = steady.model();
    let (s1, s2, t1) = (steady.s1(), steady.s2(), steady.t1());
    let lam = params.lambda;
    let weights_at: Vec<f64>;
    let mesh;
    match n {
        1 => {
            if t > s1 {
                return Err(Error::PosteriorUndefined);
            }
            mesh = steady.age_mesh(&[]);
            weights_at = mesh
                .nodes()
                .iter()
                .map(|&a| {
                    let prior = steady.p0a(a);
                    if prior <= 0.0 {
                        return Ok(0.0);
                    }
                    Ok(prior * gap_likelihood(t, a, s1, &params, model)?)
                })
                .collect::<Result<_>>()?;
        }
        2 => {
            if steady.n_max < 3 || t > s2 {
                return Err(Error::PosteriorUndefined);
            }
            mesh = steady.age_mesh(&[t1 - t]);
            let head = lam * (-lam * t).exp();
            weights_at = mesh
                .nodes()
                .iter()
                .map(|&a| {
                    let ratio = model.survival_ratio(a, t);
                    if ratio <= 0.0 {
                        return Ok(0.0);
                    }
                    let mut acc = 0.0;
                    let p1 = steady.p1a(a);
                    if p1 > 0.0 && a + t < t1 {
                        let z = model.discounted_survival(a, s2.min(t1 - a), lam);
                        if z > 0.0 {
                            acc += p1 / z;
                        }
                    }
                    let inner = steady.w1_mesh_at(a, s1 - t, &[s1 - s2]);
                    acc += inner.integrate(|w| {
                        let p = steady.p0aw(a, w);
                        if p <= 0.0 {
                            return 0.0;
                        }
                        let z = model.discounted_survival(a, s2.min(s1 - w), lam);
                        if z > 0.0 {
                            p / z
                        } else {
                            0.0
                        }
                    });
                    Ok(head * ratio * acc)
                })
                .collect::<Result<_>>()?;
        }
        _ => return Err(Error::NullEvent(n)),
    }
    let total = mesh.dot(&weights_at);
    if !(total > NULL_MASS * 1e-6) {
        return Err(Error::PosteriorUndefined);
    }
    let pi_n = steady.pi[n];
    Ok(AgePosterior {
        n,
        t,
        nodes: mesh.nodes().to_vec(),
        weights: mesh.weights().to_vec(),
        density: weights_at.iter().map(|w| w / total).collect(),
        normalizer: total / pi_n,
    })
}

/// Masses of `f_{A|N=n}` on consecutive bins `[edges[i], edges[i+1])`.
pub fn age_bin_masses(n: usize, steady: &SteadyState, edges: &[f64]) -> Result<Vec<f64>> {
    let pi_n = steady.pi.get(n).copied().unwrap_or(0.0);
    if !(pi_n > NULL_MASS) {
        return Err(Error::NullEvent(n));
    }
    let knots = steady.age_knots(&[]);
    Ok(edges
        .windows(2)
        .map(|e| Mesh::uniform(e[0], e[1], &knots, BIN_PANELS).integrate(|a| steady.density_n(n, a)) / pi_n)
        .collect())
}

/// Masses of the `N = 2` gap density at age `a` on consecutive bins.
pub fn y_bin_masses_n2(a: f64, steady: &SteadyState, edges: &[f64]) -> Result<Vec<f64>> {
    let mixture = arrival_mixture(a, steady)?;
    let (profile, params, model) = (steady.profile(), steady.params(), steady.model());
    let knots = [profile.s_n(2), profile.t_n(1) - a];
    let mut err = None;
    let out = edges
        .windows(2)
        .map(|e| {
            Mesh::uniform(e[0], e[1], &knots, BIN_PANELS).integrate(|y| {
                match y_density_given_age_n2(y, a, &mixture, profile, params, model) {
                    Ok(v) => v,
                    Err(x) => {
                        err.get_or_insert(x);
                        0.0
                    }
                }
            })
        })
        .collect();
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `∫ m_X(a + t) f(a) da` for a posterior evaluated at elapsed wait `t`.
pub fn expected_residual(posterior: &AgePosterior, model: &ServiceModel) -> Result<f64> {
    posterior.expected_residual(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady_state::{solve_steady_state, SteadyOptions};
    use alloc::vec;

    fn paper_steady() -> SteadyState {
        let prof = ThresholdProfile::from_values(3, &[7.737], &[7.2, 4.0]).unwrap();
        let params = MarketParams::new(3.0, 4.85, 1.0).unwrap();
        let model = ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap();
        solve_steady_state(&prof, &params, &model, &SteadyOptions { points: 200, ..Default::default() }).unwrap()
    }

    #[test]
    fn priors_normalize() {
        let st = paper_steady();
        for n in 1..=3 {
            let f = age_density_given_n(n, &st).unwrap();
            assert!((f.mass() - 1.0).abs() < 1e-3, "n = {n}: {}", f.mass());
        }
    }

    #[test]
    fn posteriors_normalize() {
        let st = paper_steady();
        for (n, t) in [(1, 0.0), (1, 3.0), (2, 0.0), (2, 2.5)] {
            let f = posterior_age(n, t, &st).unwrap();
            assert!((f.mass() - 1.0).abs() < 1e-9);
        }
        assert!(posterior_age(1, 7.5, &st).is_err());
    }

    #[test]
    fn n1_gap_density_integrates_to_one() {
        let st = paper_steady();
        let m = crate::numerics::Mesh::uniform(0.0, 7.2, &[], 400);
        let v = m.integrate(|y| y_density_given_age_n1(y, 1.0, st.profile(), st.params(), st.model()).unwrap());
        assert!((v - 1.0).abs() < 1e-3);
    }

    #[test]
    fn n2_gap_density_integrates_to_one() {
        let st = paper_steady();
        let mix = arrival_mixture(0.5, &st).unwrap();
        assert!(mix.prob_i1 > 0.0 && mix.prob_i1 < 1.0);
        let mut knots = vec![7.737 - 0.5];
        knots.extend(mix.w1_nodes.iter().map(|w| 7.2 - w));
        let m = crate::numerics::Mesh::uniform(0.0, 4.0, &knots, 200);
        let v = m.integrate(|y| y_density_given_age_n2(y, 0.5, &mix, st.profile(), st.params(), st.model()).unwrap());
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn point_mass_residual() {
        let model = ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap();
        let p = AgePosterior::point_mass(1, 2.0, 1.5);
        assert!((p.expected_residual(&model).unwrap() - model.mrl(3.5).unwrap()).abs() < 1e-15);
    }
}
