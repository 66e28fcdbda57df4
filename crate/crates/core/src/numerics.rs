//! Quadrature, root bracketing and grids.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

const MAX_DEPTH: u32 = 40;
const MAX_EVALS: usize = 20_000_000;
const MAX_DOUBLINGS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerance {
    pub eps_root: f64,
    pub eps_quad: f64,
    pub eps_mass: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { eps_root: 1e-3, eps_quad: 1e-6, eps_mass: 1e-3 }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.eps_root) && ok(self.eps_quad) && ok(self.eps_mass) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("tolerances must be positive".into()))
        }
    }
}

/// Uniformly spaced samples of a function on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if !(lo < hi) || n_points < 2 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter("grid needs lo < hi and at least 2 points".into()));
        }
        Ok(Self { lo, hi, values: alloc::vec![0.0; n_points] })
    }

    pub fn from_fn(lo: f64, hi: f64, n_points: usize, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let mut g = Self::new(lo, hi, n_points)?;
        for i in 0..n_points {
            g.values[i] = f(g.point(i));
        }
        Ok(g)
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.values.len() {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.point(i))
    }

    pub fn trapezoid(&self) -> f64 {
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.step() * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Linear interpolation, clamped to the end values outside the range.
    pub fn interpolate(&self, x: f64) -> f64 {
        if x <= self.lo {
            return self.values[0];
        }
        if x >= self.hi {
            return self.values[self.values.len() - 1];
        }
        let s = (x - self.lo) / self.step();
        let i = (s.floor() as usize).min(self.values.len() - 2);
        let frac = s - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

const GL_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Composite three-point Gauss–Legendre rule on panels whose edges include
/// prescribed knots. Integrands may jump or kink at knots without loss of
/// order, since no node sits on a panel edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    edges: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Mesh {
    /// `n_panels` uniform panels on `[lo, hi]`, refined at every knot inside.
    pub fn uniform(lo: f64, hi: f64, knots: &[f64], n_panels: usize) -> Self {
        let n = n_panels.max(1);
        let h = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        edges.push(hi);
        Self::from_edges(edges, knots, h * 1e-9)
    }

    /// Uniform panels on `[lo, core]`, then panels growing geometrically by
    /// `growth` up to `hi`. Suited to survival-weighted integrands with long tails.
    pub fn graded(lo: f64, core: f64, hi: f64, knots: &[f64], n_panels: usize, growth: f64) -> Self {
        let core = core.min(hi);
        let n = n_panels.max(1);
        let h = (core - lo) / n as f64;
        let mut edges: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        edges.push(core);
        let mut width = h;
        let mut x = core;
        while x < hi {
            width *= growth;
            x = (x + width).min(hi);
            edges.push(x);
        }
        Self::from_edges(edges, knots, h * 1e-9)
    }

    fn from_edges(mut edges: Vec<f64>, knots: &[f64], merge: f64) -> Self {
        let lo = edges[0];
        let hi = edges[edges.len() - 1];
        edges.extend(knots.iter().copied().filter(|&k| k.is_finite() && k > lo && k < hi));
        edges.sort_by(|a, b| a.total_cmp(b));
        edges.dedup_by(|b, a| (*b - *a).abs() <= merge);
        if let Some(last) = edges.last_mut() {
            *last = hi;
        }
        let mut nodes = Vec::with_capacity(3 * edges.len());
        let mut weights = Vec::with_capacity(3 * edges.len());
        for pair in edges.windows(2) {
            let half = 0.5 * (pair[1] - pair[0]);
            if half <= 0.0 {
                continue;
            }
            let mid = 0.5 * (pair[0] + pair[1]);
            for k in 0..3 {
                nodes.push(mid + half * GL_X[k]);
                weights.push(half * GL_W[k]);
            }
        }
        Self { edges, nodes, weights }
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Weighted sum of values already tabulated at the nodes.
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

struct Simpson<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(f64) -> f64> Simpson<F> {
    fn eval(&mut self, x: f64) -> Result<f64> {
        self.evals += 1;
        if self.evals > MAX_EVALS {
            return Err(Error::IntegralDidNotConverge);
        }
        let y = (self.f)(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::IntegralDidNotConverge)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm)?;
        let frm = self.eval(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if delta.abs() <= 15.0 * tol.max(floor) || !(lm > a && rm < b) {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::IntegralDidNotConverge);
        }
        let l = self.refine(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = self.refine(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Ok(l + r)
    }

    fn finite(&mut self, a: f64, b: f64, tol: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        const START: usize = 8;
        let h = (b - a) / START as f64;
        let mut total = 0.0;
        let mut x0 = a;
        let mut f0 = self.eval(a)?;
        for i in 0..START {
            let x1 = if i + 1 == START { b } else { a + (i + 1) as f64 * h };
            let xm = 0.5 * (x0 + x1);
            let fm = self.eval(xm)?;
            let f1 = self.eval(x1)?;
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            total += self.refine(x0, x1, f0, fm, f1, whole, tol / START as f64, MAX_DEPTH)?;
            x0 = x1;
            f0 = f1;
        }
        Ok(total)
    }
}

/// Adaptive Simpson quadrature. An infinite `hi` is handled by geometric
/// segments starting at `lo + 10`, see [`integrate_with_scale`].
pub fn integrate(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    integrate_with_scale(f, lo, hi, tol, 10.0)
}

/// As [`integrate`], with the first tail segment `[lo, lo + scale]` for an
/// infinite upper limit. Segments double in length until both the segment
/// contribution and the integrand at its end fall below `tol * 1e-3`.
pub fn integrate_with_scale(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64, scale: f64) -> Result<f64> {
    if !(tol > 0.0) || lo.is_nan() || hi.is_nan() {
        return Err(Error::InvalidParameter("integrate needs tol > 0 and ordered limits".into()));
    }
    let mut s = Simpson { f, evals: 0 };
    if hi.is_finite() {
        return s.finite(lo, hi, tol);
    }
    let envelope = tol * 1e-3;
    let mut a = lo;
    let mut width = if scale > 0.0 && scale.is_finite() { scale } else { 10.0 };
    let mut total = s.finite(a, a + width, 0.5 * tol)?;
    let mut budget = 0.5 * tol;
    for _ in 0..MAX_DOUBLINGS {
        a += width;
        width *= 2.0;
        budget *= 0.5;
        let part = s.finite(a, a + width, budget.max(envelope * 1e-3))?;
        total += part;
        let tail = s.eval(a + width)?;
        if part.abs() < envelope && tail.abs() < envelope {
            return Ok(total);
        }
    }
    Err(Error::IntegralDidNotConverge)
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
}

impl RootOptions {
    pub fn new(tol: f64) -> Self {
        Self { xtol: tol, ftol: tol, max_iter: 200 }
    }
}

/// Bracketed root of `f` on `[lo, hi]`.
pub fn find_root(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    find_root_with(f, lo, hi, RootOptions::new(tol))
}

/// Illinois false position, falling back to bisection whenever a step fails
/// to halve the bracket. Stops once `|f| <= ftol` or the bracket is narrower
/// than `xtol`.
pub fn find_root_with(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, opts: RootOptions) -> Result<f64> {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a);
    let mut fb = f(b);
    if fa.is_nan() || fb.is_nan() {
        return Err(Error::RootNotBracketed);
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootNotBracketed);
    }
    if fa.abs() <= opts.ftol && fa.abs() <= fb.abs() {
        return Ok(a);
    }
    if fb.abs() <= opts.ftol {
        return Ok(b);
    }
    let mut side = 0i8;
    let mut last_width = b - a;
    for iter in 0..opts.max_iter {
        if b - a <= opts.xtol {
            break;
        }
        let secant = (a * fb - b * fa) / (fb - fa);
        let bisect = iter % 3 == 2 && (b - a) > 0.5 * last_width;
        let x = if !bisect && secant > a && secant < b { secant } else { 0.5 * (a + b) };
        if iter % 3 == 2 {
            last_width = b - a;
        }
        let fx = f(x);
        if fx.is_nan() {
            return Err(Error::RootNotBracketed);
        }
        if fx == 0.0 || fx.abs() <= opts.ftol {
            return Ok(x);
        }
        if fx.signum() == fb.signum() {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Plain bisection, separating the sign test from evaluation so callers can
/// supply an expensive predicate. Returns the midpoint of the final bracket.
pub fn bisect(mut positive: impl FnMut(f64) -> Result<bool>, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<(f64, usize)> {
    let (mut a, mut b) = (lo, hi);
    let mut iters = 0;
    while b - a > xtol {
        if iters == max_iter {
            return Err(Error::FixedPointDidNotConverge);
        }
        let m = 0.5 * (a + b);
        if positive(m)? {
            a = m;
        } else {
            b = m;
        }
        iters += 1;
    }
    Ok((0.5 * (a + b), iters))
}
