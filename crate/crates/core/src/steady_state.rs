//! Continuous-state steady state of the queue under a fixed profile, for
//! `n_max <= 3`.
//!
//! Structures are written `(k, a, w_{k+1}, …, w_{n-1})`: `k` waiters have
//! seen a completion, `a` is the service age and the `w` are the elapsed
//! waits of type-II customers, newest last. Every density is the product of
//! a boundary value (`p(0,0)` or `p(1,0)`), an "abandonment cycle" factor
//! and a survival ratio, so the chain reduces to two boundary unknowns that
//! satisfy a linear flux balance, normalized by bisection on `π₀`.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::distributions::ServiceModel;
use crate::numerics::{Mesh, Tolerance};
use crate::profile::ThresholdProfile;
use crate::utility::MarketParams;
use crate::{Error, Result};

/// Survival level defining the truncation age `a_max`.
const TAIL_EPS: f64 = 1e-9;
/// Axes longer than this many mean service times switch to graded panels.
const UNIFORM_SPAN: f64 = 100.0;
const GROWTH: f64 = 1.05;
/// Patience below this is treated as immediate abandonment.
const MIN_PATIENCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateStructure {
    pub n: usize,
    pub k: usize,
}

/// `n_max (n_max + 1) / 2`.
pub fn structure_count(n_max: usize) -> usize {
    n_max * (n_max + 1) / 2
}

/// Legal `(n, k)` pairs, the empty system first.
pub fn structures(n_max: usize) -> Vec<StateStructure> {
    let mut out = alloc::vec![StateStructure { n: 0, k: 0 }];
    for n in 1..=n_max {
        let top = if n < n_max { n - 1 } else { n_max.saturating_sub(2) };
        if n == n_max && n_max < 2 {
            continue;
        }
        out.extend((0..=top).map(|k| StateStructure { n, k }));
    }
    out
}

/// How arrivals behave while the system holds a given number of customers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Joining {
    /// Arrivals balk or leave instantly.
    Blocked,
    /// Arrivals join and stay at most this long without a completion.
    Patience(f64),
}

impl Joining {
    fn new(s: f64) -> Self {
        if s > MIN_PATIENCE {
            Joining::Patience(s)
        } else {
            Joining::Blocked
        }
    }

    /// Probability that no joiner is still present `x` after the last
    /// renewal, given no completion: the empty probability of an alternating
    /// process of Exp(λ) gaps and busy spells of length exactly `S`,
    /// `Σ_{j ≤ x/S} e^{-λ(x-jS)} (λ(x-jS))^j / j!`.
    pub fn empty_prob(self, x: f64, lambda: f64) -> f64 {
        match self {
            Joining::Blocked => 1.0,
            Joining::Patience(s) => abandonment_cycles(x, s, lambda, None),
        }
    }
}

/// Poisson abandonment-cycle sum truncated at `m` (default `⌊x/S⌋`).
pub fn abandonment_cycles(x: f64, s: f64, lambda: f64, m: Option<usize>) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if !s.is_finite() {
        return (-lambda * x).exp();
    }
    let top = m.unwrap_or_else(|| (x / s).floor() as usize);
    let mut sum = 0.0;
    let mut log_fact = 0.0;
    let mut peak = 0.0f64;
    for j in 0..=top {
        if j > 0 {
            log_fact += (j as f64).ln();
        }
        let y = x - j as f64 * s;
        if y <= 0.0 {
            break;
        }
        let z = lambda * y;
        let log_term = if j == 0 { -z } else { j as f64 * z.ln() - z - log_fact };
        let term = log_term.exp();
        sum += term;
        if term < peak * 1e-17 && term < sum * 1e-17 {
            break;
        }
        peak = peak.max(term);
    }
    sum
}

/// Transition–survival factor `g(k, n, m, a)`: the probability that a
/// structure entered at its boundary survives to its current coordinates
/// with no completion and no surviving joiner, given `m` abandonment cycles.
#[allow(clippy::too_many_arguments)]
pub fn g_factor(
    k: usize,
    n: usize,
    m: usize,
    a: f64,
    w_last: f64,
    profile: &ThresholdProfile,
    params: &MarketParams,
    model: &ServiceModel,
) -> Result<f64> {
    let n_max = profile.n_max;
    let illegal = |why: &str| Err(Error::IllegalState(format!("(k={k}, n={n}, m={m}): {why}")));
    if n == 0 || n > n_max || k >= n || (n == n_max && n_max >= 2 && k > n_max - 2) {
        return illegal("no such structure");
    }
    if k >= 1 && !(a < profile.t_n(k)) {
        return illegal("age past the type-I threshold");
    }
    let survival = model.survival(a);
    let tail = |x: f64| -> Result<f64> {
        let s = profile.s_n(n);
        if !s.is_finite() || s <= MIN_PATIENCE {
            if m > 0 {
                return illegal("cycles require a finite patience");
            }
            return Ok(if s <= MIN_PATIENCE { 1.0 } else { (-params.lambda * x).exp() });
        }
        let lo = m as f64 * s;
        if x < lo - 1e-12 * s || x >= lo + s + 1e-12 * s {
            return illegal("cycle count inconsistent with elapsed time");
        }
        Ok(abandonment_cycles(x, s, params.lambda, Some(m)))
    };
    if n == n_max {
        if m != 0 {
            return illegal("no joiners at n_max");
        }
        let base = model.survival(a - w_last);
        return Ok(if base > 0.0 { survival / base } else { 0.0 });
    }
    if k + 1 == n {
        Ok(tail(a)? * survival)
    } else {
        let base = model.survival(a - w_last);
        let ratio = if base > 0.0 { survival / base } else { 0.0 };
        Ok(tail(w_last)? * ratio)
    }
}

/// `p(0,a) = p(0,0) · E_{S₁}(a) · F̄(a)` with no inflow from type-I abandonment.
pub fn density_p0a(a: f64, p00: f64, profile: &ThresholdProfile, params: &MarketParams, model: &ServiceModel) -> f64 {
    let join = if profile.n_max >= 2 { Joining::new(profile.s_n(1)) } else { Joining::Blocked };
    p00 * join.empty_prob(a, params.lambda) * model.survival(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Panels per axis.
    pub points: usize,
    pub tol: Tolerance,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self { points: 400, tol: Tolerance::default() }
    }
}

/// Flux and mass integrals per unit boundary value. Suffix `_0` is for
/// services started from `p(0,0)`, `_1` for services started from `p(1,0)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChainIntegrals {
    pub mass_n1_0: f64,
    pub mass_n2_0: f64,
    pub mass_n3_0: f64,
    pub flux_n1_0: f64,
    pub flux_n2_0: f64,
    pub flux_n3_0: f64,
    pub mass_n1_1: f64,
    pub mass_n2_1: f64,
    pub mass_n3_1: f64,
    pub flux_n1_1: f64,
    pub flux_n2_1: f64,
    pub flux_n3_1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BalanceResiduals {
    /// `λπ₀ - ∫p(0,a)h(a)da`.
    pub empty: f64,
    /// `p(0,0) - λπ₀ - ∫∫p(0,a,w₁)h - ∫p(1,a)h`.
    pub boundary_0: f64,
    /// `p(1,0) - ∫∫∫p(0,a,w₁,w₂)h - ∫∫p(1,a,w₂)h`.
    pub boundary_1: f64,
    /// Largest violation of `p(·,…,0) = λ p(·,…)` at sampled ages.
    pub arrival_chain: f64,
    /// `Σ π_n - 1`.
    pub mass: f64,
    /// Consistency of `π_n` against integrated age marginals.
    pub marginal: f64,
}

impl BalanceResiduals {
    pub fn max_abs(&self) -> f64 {
        [self.empty, self.boundary_0, self.boundary_1, self.arrival_chain, self.mass, self.marginal]
            .iter()
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub n_max: usize,
    pub pi0: f64,
    /// `pi[n]` for `n = 0..=n_max`.
    pub pi: Vec<f64>,
    /// `p(0,0)`.
    pub p00: f64,
    /// `p(1,0)`; zero unless `n_max = 3`.
    pub p10: f64,
    pub integrals: ChainIntegrals,
    /// Iterations used by the `π₀` bisection.
    pub pi0_iterations: usize,
    pub a_max: f64,
    pub options: SteadyOptions,
    profile: ThresholdProfile,
    params: MarketParams,
    model: ServiceModel,
    s1: f64,
    s2: f64,
    t1: f64,
    join1: Joining,
    join2: Joining,
}

/// Age marginals `∫ p(k,a,…) dw…` per structure, tabulated on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeMarginals {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub p0: Vec<f64>,
    pub p01: Vec<f64>,
    pub p012: Vec<f64>,
    pub p1: Vec<f64>,
    pub p12: Vec<f64>,
}

impl AgeMarginals {
    /// `π(n, a)` at the nodes.
    pub fn by_n(&self, n: usize) -> Vec<f64> {
        match n {
            1 => self.p0.clone(),
            2 => self.p01.iter().zip(&self.p1).map(|(a, b)| a + b).collect(),
            3 => self.p012.iter().zip(&self.p12).map(|(a, b)| a + b).collect(),
            _ => alloc::vec![0.0; self.nodes.len()],
        }
    }
}

fn multiples(step: f64, hi: f64, offset: f64, cap: usize, out: &mut Vec<f64>) {
    if !(step.is_finite() && step > MIN_PATIENCE) || !offset.is_finite() {
        return;
    }
    let count = ((hi - offset) / step).floor();
    if count < 0.0 || count as usize > cap {
        return;
    }
    for j in 0..=count as usize {
        out.push(offset + j as f64 * step);
    }
}

pub fn solve_steady_state(
    profile: &ThresholdProfile,
    params: &MarketParams,
    model: &ServiceModel,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    params.validate()?;
    opts.tol.validate()?;
    let n_max = profile.n_max;
    if n_max > 3 {
        return Err(Error::SimulationRequired(n_max));
    }
    if !profile.is_resolved() {
        return Err(Error::InvalidParameter("profile has unresolved thresholds".into()));
    }
    let s1 = profile.s_n(1);
    let s2 = profile.s_n(2);
    let t1 = if n_max == 3 { profile.t_n(1) } else { f64::INFINITY };
    let join1 = if n_max >= 2 { Joining::new(s1) } else { Joining::Blocked };
    let join2 = if n_max >= 3 { Joining::new(s2) } else { Joining::Blocked };
    let a_max = model.tail_point(TAIL_EPS).min(model.support_end());
    let mut st = SteadyState {
        n_max,
        pi0: 0.0,
        pi: alloc::vec![0.0; n_max + 1],
        p00: 0.0,
        p10: 0.0,
        integrals: ChainIntegrals::default(),
        pi0_iterations: 0,
        a_max,
        options: *opts,
        profile: profile.clone(),
        params: *params,
        model: model.clone(),
        s1,
        s2,
        t1,
        join1,
        join2,
    };
    st.integrals = st.chain_integrals();
    st.normalize()?;
    Ok(st)
}

impl SteadyState {
    pub fn profile(&self) -> &ThresholdProfile {
        &self.profile
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn model(&self) -> &ServiceModel {
        &self.model
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    /// `T₁` when type-I states exist, otherwise infinite.
    pub fn t1(&self) -> f64 {
        self.t1
    }

    fn has_type1(&self) -> bool {
        self.n_max == 3 && self.t1 > 0.0
    }

    fn e1(&self, x: f64) -> f64 {
        self.join1.empty_prob(x, self.params.lambda)
    }

    fn e2(&self, x: f64) -> f64 {
        self.join2.empty_prob(x, self.params.lambda)
    }

    /// Whether (0,a,w₁) states exist, i.e. arrivals join a single customer.
    fn has_n2_type2(&self) -> bool {
        matches!(self.join1, Joining::Patience(_))
    }

    fn axis(&self, lo: f64, hi: f64, knots: &[f64], points: usize) -> Mesh {
        let scale = self.model.mean().max(1.0 / self.params.lambda);
        if hi - lo <= UNIFORM_SPAN * scale {
            Mesh::uniform(lo, hi, knots, points)
        } else {
            Mesh::graded(lo, lo + UNIFORM_SPAN * scale, hi, knots, points, GROWTH)
        }
    }

    fn knot_cap(&self) -> usize {
        4 * self.options.points
    }

    /// Knots for functions of the age, or of `u = a - w₁`.
    pub fn age_knots(&self, extra: &[f64]) -> Vec<f64> {
        let mut k = Vec::new();
        let cap = self.knot_cap();
        if let Joining::Patience(s) = self.join1 {
            multiples(s, self.a_max, 0.0, cap, &mut k);
            if self.has_type1() {
                multiples(s, self.a_max, self.t1, cap, &mut k);
            }
        }
        if let Joining::Patience(s) = self.join2 {
            multiples(s, self.a_max, 0.0, cap, &mut k);
        }
        if self.has_type1() {
            k.push(self.t1);
        }
        k.extend_from_slice(extra);
        k
    }

    pub fn age_mesh(&self, extra: &[f64]) -> Mesh {
        self.axis(0.0, self.a_max, &self.age_knots(extra), self.options.points)
    }

    fn w1_mesh(&self) -> Mesh {
        let hi = self.s1.min(self.a_max);
        let mut k = Vec::new();
        if let Joining::Patience(s) = self.join2 {
            multiples(s, hi, 0.0, self.knot_cap(), &mut k);
        }
        self.axis(0.0, hi, &k, self.options.points)
    }

    /// `p(0,0) E₁(u) + p(1,0) 1{u ≥ T₁} E₁(u - T₁)` per unit of each boundary value.
    fn entry_weights(&self, u: f64) -> (f64, f64) {
        let from1 = if self.has_type1() && u >= self.t1 { self.e1(u - self.t1) } else { 0.0 };
        (self.e1(u), from1)
    }

    fn chain_integrals(&self) -> ChainIntegrals {
        let lam = self.params.lambda;
        let m = &self.model;
        let mut c = ChainIntegrals::default();
        let u_mesh = self.axis(0.0, self.a_max, &self.age_knots(&[]), self.options.points);
        let e1u: Vec<f64> = u_mesh.nodes().iter().map(|&u| self.e1(u)).collect();
        for ((&u, &wt), &e) in u_mesh.nodes().iter().zip(u_mesh.weights()).zip(&e1u) {
            c.mass_n1_0 += wt * e * m.survival(u);
            c.flux_n1_0 += wt * e * m.pdf(u);
            if self.has_type1() {
                c.mass_n1_1 += wt * e * m.survival(u + self.t1);
                c.flux_n1_1 += wt * e * m.pdf(u + self.t1);
            }
        }
        if self.has_n2_type2() {
            let w_mesh = self.w1_mesh();
            for (&w, &ww) in w_mesh.nodes().iter().zip(w_mesh.weights()) {
                let (mut pf, mut pd, mut qf, mut qd) = (0.0, 0.0, 0.0, 0.0);
                for ((&u, &wt), &e) in u_mesh.nodes().iter().zip(u_mesh.weights()).zip(&e1u) {
                    let we = wt * e;
                    pf += we * m.survival(u + w);
                    pd += we * m.pdf(u + w);
                    if self.has_type1() {
                        qf += we * m.survival(u + w + self.t1);
                        qd += we * m.pdf(u + w + self.t1);
                    }
                }
                let e2 = self.e2(w);
                let stay = lam * ww * e2;
                let join = lam * ww * (1.0 - e2);
                c.mass_n2_0 += stay * pf;
                c.flux_n2_0 += stay * pd;
                c.mass_n3_0 += join * pf;
                c.flux_n3_0 += join * pd;
                c.mass_n2_1 += stay * qf;
                c.flux_n2_1 += stay * qd;
                c.mass_n3_1 += join * qf;
                c.flux_n3_1 += join * qd;
            }
        }
        if self.has_type1() {
            let hi = self.t1.min(self.a_max);
            let mut k = Vec::new();
            if let Joining::Patience(s) = self.join2 {
                multiples(s, hi, 0.0, self.knot_cap(), &mut k);
            }
            let mesh = self.axis(0.0, hi, &k, self.options.points);
            for (&a, &wt) in mesh.nodes().iter().zip(mesh.weights()) {
                let e2 = self.e2(a);
                c.mass_n2_1 += wt * e2 * m.survival(a);
                c.flux_n2_1 += wt * e2 * m.pdf(a);
                c.mass_n3_1 += wt * (1.0 - e2) * m.survival(a);
                c.flux_n3_1 += wt * (1.0 - e2) * m.pdf(a);
            }
        }
        c
    }

    /// Boundary values per unit `π₀`: `(p(0,0), p(1,0))`.
    fn boundary_per_pi0(&self) -> Result<(f64, f64)> {
        let c = &self.integrals;
        let lam = self.params.lambda;
        let ratio = if self.n_max == 3 {
            // Completions out of n = 3 states feed p(1,0).
            let den = 1.0 - c.flux_n3_1;
            if !(den > 0.0) {
                return Err(Error::NoNormalizingPi0);
            }
            c.flux_n3_0 / den
        } else {
            0.0
        };
        // Completions out of n = 2 states feed p(0,0). With type-I states,
        // part of flux_n2_1 comes from (1,a); it too returns to p(0,0).
        let den = 1.0 - c.flux_n2_0 - ratio * c.flux_n2_1;
        if !(den > 0.0) {
            return Err(Error::NoNormalizingPi0);
        }
        let b0 = lam / den;
        Ok((b0, ratio * b0))
    }

    fn masses_per_pi0(&self, b0: f64, b1: f64) -> [f64; 3] {
        let c = &self.integrals;
        [
            b0 * c.mass_n1_0 + b1 * c.mass_n1_1,
            b0 * c.mass_n2_0 + b1 * c.mass_n2_1,
            b0 * c.mass_n3_0 + b1 * c.mass_n3_1,
        ]
    }

    fn normalize(&mut self) -> Result<()> {
        let (b0, b1) = self.boundary_per_pi0()?;
        let per = self.masses_per_pi0(b0, b1);
        let busy: f64 = per.iter().sum();
        let total = |pi0: f64| pi0 * (1.0 + busy);
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        if total(lo) > 1.0 || total(hi) < 1.0 {
            return Err(Error::NoNormalizingPi0);
        }
        let mut iters = 0;
        let target = (self.options.tol.eps_mass * 1e-9).max(f64::EPSILON);
        while hi - lo > target && iters < 200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iters += 1;
        }
        let pi0 = 0.5 * (lo + hi);
        self.pi0 = pi0;
        self.pi0_iterations = iters;
        self.p00 = b0 * pi0;
        self.p10 = b1 * pi0;
        self.pi[0] = pi0;
        for n in 1..=self.n_max {
            self.pi[n] = per[n - 1] * pi0;
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.pi.iter().sum()
    }

    /// Density of (0,a): service in progress, nobody waiting.
    pub fn p0a(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        let (e0, e1) = self.entry_weights(a);
        (self.p00 * e0 + self.p10 * e1) * self.model.survival(a)
    }

    /// Density of (1,a): one type-I waiter; requires `a < T₁`.
    pub fn p1a(&self, a: f64) -> f64 {
        if !self.has_type1() || a < 0.0 || a >= self.t1 {
            return 0.0;
        }
        self.p10 * self.e2(a) * self.model.survival(a)
    }

    /// `p(0,a,w₁) / E₂(w₁)`: arrival of the waiter at age `a - w₁`, times survival.
    fn p0aw_base(&self, a: f64, w1: f64) -> f64 {
        if !self.has_n2_type2() || w1 < 0.0 || w1 > a || w1 >= self.s1 {
            return 0.0;
        }
        let (e0, e1) = self.entry_weights(a - w1);
        self.params.lambda * (self.p00 * e0 + self.p10 * e1) * self.model.survival(a)
    }

    /// Density of (0,a,w₁): one type-II waiter whose wait is `w₁ < min(S₁, a)`.
    pub fn p0aw(&self, a: f64, w1: f64) -> f64 {
        self.p0aw_base(a, w1) * self.e2(w1)
    }

    /// Density of (0,a,w₁,w₂).
    pub fn p0aww(&self, a: f64, w1: f64, w2: f64) -> f64 {
        if self.n_max < 3 || w2 < 0.0 || w2 > w1 || w2 >= self.s2 {
            return 0.0;
        }
        let Joining::Patience(_) = self.join2 else { return 0.0 };
        if !self.has_n2_type2() || w1 > a || w1 >= self.s1 {
            return 0.0;
        }
        let u = a - w1;
        let (e0, e1) = self.entry_weights(u);
        let lam = self.params.lambda;
        lam * lam * (self.p00 * e0 + self.p10 * e1) * self.model.survival(a) * self.e2(w1 - w2)
    }

    /// Density of (1,a,w₂).
    pub fn p1aw(&self, a: f64, w2: f64) -> f64 {
        if !self.has_type1() || a >= self.t1 || w2 < 0.0 || w2 > a || w2 >= self.s2 {
            return 0.0;
        }
        let Joining::Patience(_) = self.join2 else { return 0.0 };
        self.params.lambda * self.p10 * self.e2(a - w2) * self.model.survival(a)
    }

    /// Knots of `w ↦ p(0,a,w)` on `[0, min(S₁, a)]`.
    pub fn w1_knots(&self, a: f64, extra: &[f64]) -> Vec<f64> {
        let hi = self.s1.min(a);
        let mut k = Vec::new();
        let cap = self.knot_cap();
        if let Joining::Patience(s) = self.join2 {
            multiples(s, hi, 0.0, cap, &mut k);
        }
        if let Joining::Patience(s) = self.join1 {
            let mut back = Vec::new();
            multiples(s, a, 0.0, cap, &mut back);
            if self.has_type1() {
                multiples(s, a, self.t1, cap, &mut back);
            }
            k.extend(back.into_iter().map(|x| a - x).filter(|&w| w > 0.0 && w < hi));
        }
        k.extend(extra.iter().copied().filter(|&w| w > 0.0 && w < hi));
        k
    }

    /// Mesh over `w₁ ∈ [0, min(S₁, a, hi)]` aligned to the kinks of `p(0,a,·)`.
    pub fn w1_mesh_at(&self, a: f64, hi: f64, extra: &[f64]) -> Mesh {
        let top = self.s1.min(a).min(hi).max(0.0);
        let knots = self.w1_knots(a, extra);
        Mesh::uniform(0.0, top, &knots, self.options.points)
    }

    /// `∫ p(0,a,w₁) dw₁`.
    pub fn p01_marginal(&self, a: f64) -> f64 {
        if !self.has_n2_type2() || a <= 0.0 {
            return 0.0;
        }
        self.w1_mesh_at(a, f64::INFINITY, &[]).integrate(|w| self.p0aw(a, w))
    }

    /// `∫∫ p(0,a,w₁,w₂) dw₂ dw₁`, using `∫ λ E₂(w₁ - w₂) dw₂ = 1 - E₂(w₁)`.
    pub fn p012_marginal(&self, a: f64) -> f64 {
        if self.n_max < 3 || !self.has_n2_type2() || a <= 0.0 {
            return 0.0;
        }
        let Joining::Patience(_) = self.join2 else { return 0.0 };
        self.w1_mesh_at(a, f64::INFINITY, &[]).integrate(|w| self.p0aw_base(a, w) * (1.0 - self.e2(w)))
    }

    /// `∫ p(1,a,w₂) dw₂`.
    pub fn p12_marginal(&self, a: f64) -> f64 {
        if !self.has_type1() || a < 0.0 || a >= self.t1 {
            return 0.0;
        }
        let Joining::Patience(_) = self.join2 else { return 0.0 };
        self.p10 * (1.0 - self.e2(a)) * self.model.survival(a)
    }

    /// `π(n, a)`: density of the service age jointly with `N = n`.
    pub fn density_n(&self, n: usize, a: f64) -> f64 {
        match n {
            1 => self.p0a(a),
            2 => self.p1a(a) + self.p01_marginal(a),
            3 => self.p12_marginal(a) + self.p012_marginal(a),
            _ => 0.0,
        }
    }

    pub fn age_marginals(&self) -> AgeMarginals {
        let mesh = self.age_mesh(&[]);
        let nodes = mesh.nodes().to_vec();
        AgeMarginals {
            p0: nodes.iter().map(|&a| self.p0a(a)).collect(),
            p01: nodes.iter().map(|&a| self.p01_marginal(a)).collect(),
            p012: nodes.iter().map(|&a| self.p012_marginal(a)).collect(),
            p1: nodes.iter().map(|&a| self.p1a(a)).collect(),
            p12: nodes.iter().map(|&a| self.p12_marginal(a)).collect(),
            weights: mesh.weights().to_vec(),
            nodes,
        }
    }

    /// Residuals of the balance equations, recomputed by direct quadrature
    /// of the densities rather than from the flux integrals.
    pub fn balance_residuals(&self) -> Result<BalanceResiduals> {
        let marg = self.age_marginals();
        let h = |a: f64| self.model.hazard(a).unwrap_or(0.0);
        let mut out_p0 = 0.0;
        let mut out_n2 = 0.0;
        let mut out_n3 = 0.0;
        let mut mass = [0.0; 4];
        for i in 0..marg.nodes.len() {
            let (a, w) = (marg.nodes[i], marg.weights[i]);
            let ha = if self.model.survival(a) > 0.0 { h(a) } else { 0.0 };
            out_p0 += w * marg.p0[i] * ha;
            out_n2 += w * (marg.p01[i] + marg.p1[i]) * ha;
            out_n3 += w * (marg.p012[i] + marg.p12[i]) * ha;
            mass[1] += w * marg.p0[i];
            mass[2] += w * (marg.p01[i] + marg.p1[i]);
            mass[3] += w * (marg.p012[i] + marg.p12[i]);
        }
        let lam = self.params.lambda;
        let mut arrival_chain = 0.0f64;
        for j in 1..8 {
            let a = self.a_max * j as f64 / 64.0;
            arrival_chain = arrival_chain.max((self.p0aw(a, 0.0) - lam * self.p0a(a)).abs());
            if self.n_max == 3 {
                arrival_chain = arrival_chain.max((self.p1aw(a, 0.0) - lam * self.p1a(a)).abs());
                let w1 = 0.5 * a.min(self.s1);
                arrival_chain = arrival_chain.max((self.p0aww(a, w1, 0.0) - lam * self.p0aw(a, w1)).abs());
            }
        }
        let marginal = (1..=self.n_max).fold(0.0f64, |m, n| m.max((mass[n] - self.pi[n]).abs()));
        Ok(BalanceResiduals {
            empty: lam * self.pi0 - out_p0,
            boundary_0: self.p00 - lam * self.pi0 - out_n2,
            boundary_1: if self.n_max == 3 { self.p10 - out_n3 } else { 0.0 },
            arrival_chain,
            mass: self.total_mass() - 1.0,
            marginal,
        })
    }

    /// Per-structure samples on a uniform grid with `points` values per axis,
    /// restricted to the legal support.
    pub fn structure_samples(&self, s: StateStructure, points: usize) -> Vec<(Vec<f64>, f64)> {
        let points = points.max(2);
        let a_hi = self.a_max.min(30.0 * self.model.mean());
        let step = a_hi / (points - 1) as f64;
        let grid = |i: usize| i as f64 * step;
        let mut out = Vec::new();
        match (s.n, s.k) {
            (0, 0) => out.push((Vec::new(), self.pi0)),
            (1, 0) => (0..points).for_each(|i| out.push((alloc::vec![grid(i)], self.p0a(grid(i))))),
            (2, 0) => {
                for i in 0..points {
                    for j in 0..=i {
                        let (a, w) = (grid(i), grid(j));
                        if w < self.s1 {
                            out.push((alloc::vec![a, w], self.p0aw(a, w)));
                        }
                    }
                }
            }
            (2, 1) => (0..points)
                .map(grid)
                .filter(|&a| a < self.t1)
                .for_each(|a| out.push((alloc::vec![a], self.p1a(a)))),
            (3, 0) => {
                for i in 0..points {
                    for j in 0..=i {
                        for l in 0..=j {
                            let (a, w1, w2) = (grid(i), grid(j), grid(l));
                            if w1 < self.s1 && w2 < self.s2 {
                                out.push((alloc::vec![a, w1, w2], self.p0aww(a, w1, w2)));
                            }
                        }
                    }
                }
            }
            (3, 1) => {
                for i in 0..points {
                    for j in 0..=i {
                        let (a, w2) = (grid(i), grid(j));
                        if a < self.t1 && w2 < self.s2 {
                            out.push((alloc::vec![a, w2], self.p1aw(a, w2)));
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use libm::exp;

    fn model() -> ServiceModel {
        ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap()
    }

    fn params() -> MarketParams {
        MarketParams::new(3.0, 4.85, 1.0).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(structure_count(3), 6);
        assert_eq!(structure_count(1), 1);
        assert_eq!(structure_count(4), 10);
        assert_eq!(structures(3).len(), 6);
        assert_eq!(structures(4).len(), 10);
        assert!(!structures(3).contains(&StateStructure { n: 3, k: 2 }));
    }

    #[test]
    fn g_factor_cases() {
        let prof = ThresholdProfile::from_values(3, &[7.737], &[7.2, 3.13]).unwrap();
        let (p, m) = (params(), model());
        let fbar = 0.95 * exp(-0.5) + 0.05 * exp(-0.1);
        let g = g_factor(0, 1, 0, 0.5, 0.0, &prof, &p, &m).unwrap();
        assert!((g - exp(-1.5) * fbar).abs() < 1e-14);
        assert_eq!(g_factor(0, 1, 0, 0.0, 0.0, &prof, &p, &m).unwrap(), 1.0);
        assert_eq!(g_factor(0, 3, 0, 4.0, 0.0, &prof, &p, &m).unwrap(), 1.0);
        assert_eq!(g_factor(0, 2, 0, 4.0, 0.0, &prof, &p, &m).unwrap(), 1.0);
        assert!(g_factor(2, 3, 0, 1.0, 0.0, &prof, &p, &m).is_err());
        assert!(g_factor(0, 1, 0, 8.0, 0.0, &prof, &p, &m).is_err());
        assert!(g_factor(1, 2, 0, 8.0, 0.0, &prof, &p, &m).is_err());
    }

    #[test]
    fn p0a_one_cycle() {
        let prof = ThresholdProfile::from_values(2, &[], &[2.0]).unwrap();
        let (p, m) = (params(), model());
        let a = 3.0;
        let want = (exp(-3.0 * a) + 3.0 * exp(-3.0 * (a - 2.0)) * (a - 2.0)) * m.survival(a);
        assert!((density_p0a(a, 1.0, &prof, &p, &m) - want).abs() < 1e-14);
        assert!((density_p0a(0.0, 0.7, &prof, &p, &m) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cycles_satisfy_renewal_identity() {
        // E(x) + λ∫_{x-min(S,x)}^x E = 1.
        let (lam, s) = (3.0, 1.7);
        for x in [0.3, 1.7, 2.5, 6.0, 11.3] {
            let lo = x - s.min(x);
            let mesh = Mesh::uniform(lo, x, &[s, 2.0 * s, 3.0 * s, 4.0 * s, 5.0 * s, 6.0 * s], 400);
            let busy = lam * mesh.integrate(|v| abandonment_cycles(v, s, lam, None));
            assert!((abandonment_cycles(x, s, lam, None) + busy - 1.0).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn single_server_loss_system() {
        let prof = ThresholdProfile::from_values(1, &[], &[]).unwrap();
        let st = solve_steady_state(&prof, &params(), &model(), &SteadyOptions::default()).unwrap();
        assert!((st.pi0 - 1.0 / (1.0 + 3.0 * 1.2)).abs() < 1e-6);
        assert!((st.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn paper_chain_balances() {
        let prof = ThresholdProfile::from_values(3, &[7.737], &[7.2, 3.13]).unwrap();
        let st = solve_steady_state(&prof, &params(), &model(), &SteadyOptions::default()).unwrap();
        assert!((st.total_mass() - 1.0).abs() < 1e-9);
        let r = st.balance_residuals().unwrap();
        assert!(r.max_abs() < 1e-3, "{r:?}");
        let c = st.integrals;
        assert!((c.flux_n1_0 + c.flux_n2_0 + c.flux_n3_0 - 1.0).abs() < 1e-6);
        assert!((c.flux_n1_1 + c.flux_n2_1 + c.flux_n3_1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_large_n_max() {
        let prof = ThresholdProfile::from_values(4, &[7.0, 3.0], &[7.0, 3.0, 1.0]).unwrap();
        let r = solve_steady_state(&prof, &params(), &model(), &SteadyOptions::default());
        assert_eq!(r.unwrap_err(), Error::SimulationRequired(4));
    }
}
