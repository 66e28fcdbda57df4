//! Event-driven simulation of the observable queue under a threshold profile.
//!
//! Deviations are evaluated with non-interacting shadow customers: a
//! deviator's payoff depends only on the customers ahead of it, so every
//! real arrival spawns one shadow per deviation that replays its position
//! with the deviated threshold. Shadows are invisible to everyone else, so
//! the population is not perturbed.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::vec::Vec;
use core::cmp::Ordering;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::distributions::ServiceModel;
use crate::profile::ThresholdProfile;
use crate::utility::MarketParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Coordinate {
    /// Type-II patience for arrivals finding `n` customers.
    S(usize),
    /// Type-I patience with `n` ahead after a completion.
    T(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Deviation {
    pub coordinate: Coordinate,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgeWindow {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: MarketParams,
    pub model: ServiceModel,
    pub profile: ThresholdProfile,
    pub horizon_events: u64,
    pub warmup_events: u64,
    pub seed: u64,
    pub deviations: Vec<Deviation>,
    /// Every `tag_every`-th joining arrival spawns shadows.
    pub tag_every: u64,
    pub batches: usize,
    pub age_bin: f64,
    pub age_max: f64,
    pub y_bin: f64,
    pub y_windows: Vec<AgeWindow>,
}

impl SimConfig {
    pub fn new(params: MarketParams, model: ServiceModel, profile: ThresholdProfile, horizon_events: u64, seed: u64) -> Self {
        Self {
            params,
            model,
            profile,
            horizon_events,
            warmup_events: horizon_events / 10,
            seed,
            deviations: Vec::new(),
            tag_every: 1,
            batches: 20,
            age_bin: 0.1,
            age_max: 40.0,
            y_bin: 0.05,
            y_windows: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.horizon_events == 0 || self.warmup_events >= self.horizon_events {
            return Err(Error::InvalidParameter("horizon must exceed warmup and be positive".into()));
        }
        if self.batches < 2 || self.tag_every == 0 {
            return Err(Error::InvalidParameter("need at least 2 batches and tag_every >= 1".into()));
        }
        if !(self.age_bin > 0.0 && self.age_max > self.age_bin && self.y_bin > 0.0) {
            return Err(Error::InvalidParameter("histogram bins must be positive".into()));
        }
        if !self.profile.is_resolved() {
            return Err(Error::InvalidParameter("profile has unresolved thresholds".into()));
        }
        for d in &self.deviations {
            let ok = match d.coordinate {
                Coordinate::S(n) => n >= 1 && n < self.profile.n_max,
                Coordinate::T(n) => n >= 1 && n + 1 < self.profile.n_max,
            };
            if !ok || !(d.value >= 0.0) {
                return Err(Error::InvalidParameter("deviation names a coordinate outside the profile".into()));
            }
        }
        Ok(())
    }
}

/// Mean with a batch-means standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: u64,
}

impl Estimate {
    /// Number of standard errors separating the estimate from `x`.
    pub fn z_score(&self, x: f64) -> f64 {
        if self.se > 0.0 {
            (self.mean - x) / self.se
        } else if self.mean == x {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Per-batch sums and counts of a ratio statistic.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchStat {
    pub sums: Vec<f64>,
    pub counts: Vec<f64>,
}

impl BatchStat {
    fn new(batches: usize) -> Self {
        Self { sums: alloc::vec![0.0; batches], counts: alloc::vec![0.0; batches] }
    }

    fn add(&mut self, batch: usize, x: f64, weight: f64) {
        self.sums[batch] += x;
        self.counts[batch] += weight;
    }

    pub fn merge(&mut self, other: &BatchStat) {
        self.sums.extend_from_slice(&other.sums);
        self.counts.extend_from_slice(&other.counts);
    }

    /// Ratio estimator `Σ sums / Σ counts` with its batch-means standard error.
    pub fn estimate(&self) -> Estimate {
        let total: f64 = self.counts.iter().sum();
        if total <= 0.0 {
            return Estimate::default();
        }
        let mean = self.sums.iter().sum::<f64>() / total;
        let used: Vec<usize> = (0..self.counts.len()).filter(|&b| self.counts[b] > 0.0).collect();
        let b = used.len() as f64;
        let se = if used.len() >= 2 {
            let cbar = total / b;
            let ss: f64 = used.iter().map(|&i| (self.sums[i] - mean * self.counts[i]).powi(2)).sum();
            (ss / (b * (b - 1.0))).sqrt() / cbar
        } else {
            0.0
        };
        Estimate { mean, se, count: total.round() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub lo: f64,
    pub bin: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    fn new(lo: f64, hi: f64, bin: f64) -> Self {
        let n = ((hi - lo) / bin).ceil().max(1.0) as usize;
        Self { lo, bin, counts: alloc::vec![0; n], overflow: 0 }
    }

    fn add(&mut self, x: f64) {
        let i = ((x - self.lo) / self.bin).floor();
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
    }

    /// Fraction of all samples falling in each bin.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// The `counts.len() + 1` bin boundaries.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| self.lo + i as f64 * self.bin).collect()
    }

    /// L1 distance between the empirical bin probabilities and `masses`,
    /// with the overflow bin compared against the mass left over.
    pub fn l1_distance(&self, masses: &[f64]) -> f64 {
        let p = self.probabilities();
        let total = self.total().max(1) as f64;
        let inside: f64 = p.iter().zip(masses).map(|(a, b)| (a - b).abs()).sum();
        let rest = (1.0 - masses.iter().sum::<f64>()).max(0.0);
        inside + (self.overflow as f64 / total - rest).abs()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        (self.lo + i as f64 * self.bin, self.lo + (i + 1) as f64 * self.bin)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizedHistogram {
    pub histogram: Histogram,
    /// Density per bin (probability divided by bin width).
    pub density: Vec<f64>,
    /// Set when fewer than 1000 samples qualified.
    pub low_sample: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowHistogram {
    pub window: AgeWindow,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdPayoff {
    pub coordinate: Coordinate,
    pub threshold: f64,
    /// `V - C (R + (k-1) x̄)` at the customer's own timeout, `R` the realized residual.
    pub stat: BatchStat,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviationStat {
    pub deviation: Deviation,
    /// Shadow payoff minus the paired real payoff, over arrivals for which
    /// the coordinate can matter.
    pub delta: BatchStat,
    pub tagged: BatchStat,
    pub base: BatchStat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventCounts {
    pub events: u64,
    pub arrivals: u64,
    pub balks: u64,
    pub services: u64,
    pub own_timeouts: u64,
    pub cascades: u64,
}

impl EventCounts {
    fn merge(&mut self, o: &EventCounts) {
        self.events += o.events;
        self.arrivals += o.arrivals;
        self.balks += o.balks;
        self.services += o.services;
        self.own_timeouts += o.own_timeouts;
        self.cascades += o.cascades;
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimEstimate {
    /// Arrival-instant occupancy per `n = 0..=n_max`.
    pub occupancy: Vec<BatchStat>,
    pub age_histograms: Vec<Histogram>,
    pub y_histograms: Vec<WindowHistogram>,
    /// Realized residual service seen by arrivals finding `n`.
    pub residual_at_arrival: Vec<BatchStat>,
    pub utility_at_threshold: Vec<ThresholdPayoff>,
    pub deviations: Vec<DeviationStat>,
    pub base_payoff: BatchStat,
    pub counts: EventCounts,
    pub replications: usize,
}

impl SimEstimate {
    pub fn pi_hat(&self) -> Vec<Estimate> {
        self.occupancy.iter().map(|s| s.estimate()).collect()
    }

    pub fn merge(&mut self, other: &SimEstimate) {
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            a.merge(b);
        }
        for (a, b) in self.age_histograms.iter_mut().zip(&other.age_histograms) {
            a.merge(b);
        }
        for (a, b) in self.y_histograms.iter_mut().zip(&other.y_histograms) {
            a.histogram.merge(&b.histogram);
        }
        for (a, b) in self.residual_at_arrival.iter_mut().zip(&other.residual_at_arrival) {
            a.merge(b);
        }
        for (a, b) in self.utility_at_threshold.iter_mut().zip(&other.utility_at_threshold) {
            a.stat.merge(&b.stat);
        }
        for (a, b) in self.deviations.iter_mut().zip(&other.deviations) {
            a.delta.merge(&b.delta);
            a.tagged.merge(&b.tagged);
            a.base.merge(&b.base);
        }
        self.base_payoff.merge(&other.base_payoff);
        self.counts.merge(&other.counts);
        self.replications += other.replications;
    }

    /// Normalized age histogram at arrivals finding `n`; empty for `n = 0`.
    pub fn estimate_age_given_n(&self, n: usize) -> NormalizedHistogram {
        let histogram = if n == 0 {
            Histogram { lo: 0.0, bin: 1.0, counts: Vec::new(), overflow: 0 }
        } else {
            self.age_histograms.get(n).cloned().unwrap_or(Histogram { lo: 0.0, bin: 1.0, counts: Vec::new(), overflow: 0 })
        };
        let total = histogram.total();
        let density = histogram.probabilities().iter().map(|p| p / histogram.bin).collect();
        NormalizedHistogram { low_sample: total < 1000, density, histogram }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepartureCause {
    Served,
    OwnTimeout,
    Cascade,
    Balk,
}

/// Trace record passed to an observer.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Arrival { time: f64, id: u64, found: usize, joined: bool },
    ServiceStart { time: f64, id: u64, arrival: f64 },
    Departure { time: f64, id: u64, cause: DepartureCause, arrival: f64, type_one: bool, deadline: f64 },
    Completion { time: f64, id: u64 },
}

impl TraceEvent {
    pub fn time(&self) -> f64 {
        match *self {
            TraceEvent::Arrival { time, .. }
            | TraceEvent::ServiceStart { time, .. }
            | TraceEvent::Departure { time, .. }
            | TraceEvent::Completion { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Completion,
    Arrival,
    Deadline { id: u64, version: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl Event {
    fn class(&self) -> u8 {
        match self.kind {
            Kind::Completion => 0,
            Kind::Arrival => 1,
            Kind::Deadline { .. } => 2,
        }
    }
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    /// Reversed for the max-heap: earliest time first, completions before
    /// other events at the same instant, then insertion order.
    fn cmp(&self, o: &Self) -> Ordering {
        o.time
            .total_cmp(&self.time)
            .then_with(|| o.class().cmp(&self.class()))
            .then_with(|| o.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct Waiter {
    id: u64,
    arrival: f64,
    type_one: bool,
    deadline: f64,
    version: u32,
    coordinate: Coordinate,
}

#[derive(Debug, Clone)]
struct Job {
    id: u64,
    start: f64,
    end: f64,
}

/// A non-interacting copy of a tagged arrival. Slot 0 of a group follows
/// the profile; slot `d + 1` follows deviation `d`.
#[derive(Debug, Clone)]
struct Shadow {
    group: usize,
    slot: usize,
    deadline: f64,
}

#[derive(Debug, Clone)]
struct Group {
    real_id: u64,
    arrival: f64,
    found: usize,
    batch: usize,
    payoffs: Vec<Option<f64>>,
    open: usize,
}

#[derive(Debug, Clone, Copy)]
struct PendingGap {
    time: f64,
    age: f64,
    found: usize,
}

type Observer<'o> = Option<&'o mut dyn FnMut(&TraceEvent)>;

pub struct Simulation<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    inter: Exp<f64>,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    next_id: u64,
    server: Option<Job>,
    queue: VecDeque<Waiter>,
    shadows: Vec<Shadow>,
    groups: Vec<Option<Group>>,
    free_groups: Vec<usize>,
    pending: Option<PendingGap>,
    est: SimEstimate,
    events: u64,
    recorded_arrivals: u64,
    batch_len: u64,
}

/// Runs one replication.
pub fn run(cfg: &SimConfig) -> Result<SimEstimate> {
    Simulation::new(cfg)?.run(None)
}

/// Runs one replication, passing every trace event to `observer`.
pub fn run_traced(cfg: &SimConfig, observer: &mut dyn FnMut(&TraceEvent)) -> Result<SimEstimate> {
    Simulation::new(cfg)?.run(Some(observer))
}

/// Paired payoff difference of `cfg.deviations[0]` against the profile.
pub fn deviation_payoff(cfg: &SimConfig) -> Result<DeviationStat> {
    if cfg.deviations.is_empty() {
        return Err(Error::InvalidParameter("no deviation configured".into()));
    }
    Ok(run(cfg)?.deviations.swap_remove(0))
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n_max = cfg.profile.n_max;
        let b = cfg.batches;
        let est = SimEstimate {
            occupancy: (0..=n_max).map(|_| BatchStat::new(b)).collect(),
            age_histograms: (0..=n_max).map(|_| Histogram::new(0.0, cfg.age_max, cfg.age_bin)).collect(),
            y_histograms: cfg
                .y_windows
                .iter()
                .map(|w| WindowHistogram { window: *w, histogram: Histogram::new(0.0, cfg.age_max, cfg.y_bin) })
                .collect(),
            residual_at_arrival: (0..=n_max).map(|_| BatchStat::new(b)).collect(),
            utility_at_threshold: (1..n_max)
                .map(Coordinate::S)
                .chain((1..n_max.saturating_sub(1)).map(Coordinate::T))
                .map(|c| ThresholdPayoff { coordinate: c, threshold: threshold_of(&cfg.profile, c), stat: BatchStat::new(b) })
                .collect(),
            deviations: cfg
                .deviations
                .iter()
                .map(|d| DeviationStat { deviation: *d, delta: BatchStat::new(b), tagged: BatchStat::new(b), base: BatchStat::new(b) })
                .collect(),
            base_payoff: BatchStat::new(b),
            counts: EventCounts::default(),
            replications: 1,
        };
        // Roughly one arrival per two events in a busy system.
        let expected_arrivals = (cfg.horizon_events - cfg.warmup_events) as f64 * 0.5;
        Ok(Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            inter: Exp::new(cfg.params.lambda).map_err(|_| Error::InvalidParameter("lambda".into()))?,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            next_id: 0,
            server: None,
            queue: VecDeque::new(),
            shadows: Vec::new(),
            groups: Vec::new(),
            free_groups: Vec::new(),
            pending: None,
            est,
            events: 0,
            recorded_arrivals: 0,
            batch_len: ((expected_arrivals / b as f64).ceil() as u64).max(1),
        })
    }

    pub fn run(mut self, mut observer: Observer<'_>) -> Result<SimEstimate> {
        let first = self.inter.sample(&mut self.rng);
        self.push(first, Kind::Arrival);
        while self.events < self.cfg.horizon_events {
            let Some(ev) = self.heap.pop() else { break };
            if let Kind::Deadline { id, version } = ev.kind {
                if !self.queue.iter().any(|w| w.id == id && w.version == version) {
                    continue;
                }
            }
            self.expire_shadows(ev.time, ev.kind == Kind::Completion);
            self.now = ev.time;
            self.events += 1;
            if self.recording() {
                self.est.counts.events += 1;
            }
            match ev.kind {
                Kind::Arrival => self.arrival(&mut observer),
                Kind::Completion => self.completion(&mut observer),
                Kind::Deadline { id, .. } => self.timeout(id, &mut observer),
            }
        }
        Ok(self.est)
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    fn recording(&self) -> bool {
        self.events > self.cfg.warmup_events
    }

    fn batch(&self) -> usize {
        ((self.recorded_arrivals / self.batch_len) as usize).min(self.cfg.batches - 1)
    }

    fn in_system(&self) -> usize {
        self.queue.len() + usize::from(self.server.is_some())
    }

    fn threshold(&self, c: Coordinate, slot: usize) -> f64 {
        if slot > 0 {
            let d = self.cfg.deviations[slot - 1];
            if d.coordinate == c {
                return d.value;
            }
        }
        threshold_of(&self.cfg.profile, c)
    }

    /// Real customers ahead of a customer with id `id`.
    fn ahead_of(&self, id: u64) -> usize {
        usize::from(self.server.as_ref().is_some_and(|j| j.id < id)) + self.queue.partition_point(|w| w.id < id)
    }

    fn arrival(&mut self, observer: &mut Observer<'_>) {
        let gap = self.inter.sample(&mut self.rng);
        self.push(self.now + gap, Kind::Arrival);
        let found = self.in_system();
        let recording = self.recording();
        let age = self.server.as_ref().map(|j| self.now - j.start);
        if let Some(p) = self.pending.take() {
            if recording {
                for (i, w) in self.cfg.y_windows.iter().enumerate() {
                    if w.n == p.found && p.age >= w.lo && p.age < w.hi {
                        self.est.y_histograms[i].histogram.add(self.now - p.time);
                    }
                }
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        let batch = self.batch();
        if recording {
            self.est.counts.arrivals += 1;
            for (n, s) in self.est.occupancy.iter_mut().enumerate() {
                s.add(batch, if n == found { 1.0 } else { 0.0 }, 1.0);
            }
            if let (Some(a), Some(j)) = (age, self.server.as_ref()) {
                self.est.age_histograms[found].add(a);
                self.est.residual_at_arrival[found].add(batch, j.end - self.now, 1.0);
            }
            self.recorded_arrivals += 1;
        }
        let joined = found < self.cfg.profile.n_max;
        if let Some(obs) = observer.as_mut() {
            obs(&TraceEvent::Arrival { time: self.now, id, found, joined });
        }
        if !joined {
            if recording {
                self.est.counts.balks += 1;
            }
            return;
        }
        self.pending = Some(PendingGap { time: self.now, age: age.unwrap_or(0.0), found });
        if recording && id.is_multiple_of(self.cfg.tag_every) {
            if found > 0 {
                self.spawn_group(id, found, batch);
            } else {
                for d in &mut self.est.deviations {
                    d.delta.add(batch, 0.0, 0.0);
                }
                self.est.base_payoff.add(batch, self.cfg.params.v, 1.0);
            }
        }
        if found == 0 {
            self.start_service(id, self.now, observer);
            return;
        }
        let coordinate = Coordinate::S(found);
        let deadline = self.now + threshold_of(&self.cfg.profile, coordinate);
        self.queue.push_back(Waiter { id, arrival: self.now, type_one: false, deadline, version: 0, coordinate });
        if deadline.is_finite() {
            self.push(deadline, Kind::Deadline { id, version: 0 });
        }
    }

    fn spawn_group(&mut self, real_id: u64, found: usize, batch: usize) {
        let slots = self.cfg.deviations.len() + 1;
        let group = Group { real_id, arrival: self.now, found, batch, payoffs: alloc::vec![None; slots], open: slots };
        let g = match self.free_groups.pop() {
            Some(g) => {
                self.groups[g] = Some(group);
                g
            }
            None => {
                self.groups.push(Some(group));
                self.groups.len() - 1
            }
        };
        for slot in 0..slots {
            let deadline = self.now + self.threshold(Coordinate::S(found), slot);
            self.shadows.push(Shadow { group: g, slot, deadline });
        }
    }

    /// Settles shadows whose own deadline falls before `t`, or at `t` when
    /// the event at `t` is not a completion.
    fn expire_shadows(&mut self, t: f64, completion: bool) {
        let mut i = 0;
        while i < self.shadows.len() {
            let d = self.shadows[i].deadline;
            if d < t || (d == t && !completion) {
                let s = self.shadows.swap_remove(i);
                self.settle(s, false, d);
            } else {
                i += 1;
            }
        }
    }

    fn settle(&mut self, s: Shadow, served: bool, at: f64) {
        let Some(g) = self.groups[s.group].as_mut() else { return };
        let p = &self.cfg.params;
        g.payoffs[s.slot] = Some(if served { p.v } else { 0.0 } - p.c * (at - g.arrival));
        g.open -= 1;
        if g.open > 0 {
            return;
        }
        let g = self.groups[s.group].take().unwrap_or_else(|| unreachable!());
        self.free_groups.push(s.group);
        let base = g.payoffs[0].unwrap_or(0.0);
        self.est.base_payoff.add(g.batch, base, 1.0);
        for (d, stat) in self.est.deviations.iter_mut().enumerate() {
            let relevant = match stat.deviation.coordinate {
                Coordinate::S(n) => n == g.found,
                Coordinate::T(n) => g.found > n,
            };
            if relevant {
                let dev = g.payoffs[d + 1].unwrap_or(0.0);
                stat.delta.add(g.batch, dev - base, 1.0);
                stat.tagged.add(g.batch, dev, 1.0);
                stat.base.add(g.batch, base, 1.0);
            } else {
                stat.delta.add(g.batch, 0.0, 0.0);
            }
        }
    }

    fn start_service(&mut self, id: u64, arrival: f64, observer: &mut Observer<'_>) {
        let x = self.cfg.model.sample(&mut self.rng);
        self.server = Some(Job { id, start: self.now, end: self.now + x });
        self.push(self.now + x, Kind::Completion);
        if self.recording() {
            self.est.counts.services += 1;
        }
        if let Some(obs) = observer.as_mut() {
            obs(&TraceEvent::ServiceStart { time: self.now, id, arrival });
        }
    }

    fn completion(&mut self, observer: &mut Observer<'_>) {
        self.pending = None;
        let Some(job) = self.server.take() else { return };
        if let Some(obs) = observer.as_mut() {
            obs(&TraceEvent::Completion { time: self.now, id: job.id });
        }
        if let Some(next) = self.queue.pop_front() {
            if let Some(obs) = observer.as_mut() {
                obs(&TraceEvent::Departure {
                    time: self.now,
                    id: next.id,
                    cause: DepartureCause::Served,
                    arrival: next.arrival,
                    type_one: next.type_one,
                    deadline: next.deadline,
                });
            }
            self.start_service(next.id, next.arrival, observer);
        }
        let profile = &self.cfg.profile;
        let mut timers = Vec::new();
        for (j, w) in self.queue.iter_mut().enumerate() {
            let k = j + 1;
            w.type_one = true;
            w.coordinate = Coordinate::T(k);
            w.version += 1;
            w.deadline = self.now + profile.t_n(k);
            if w.deadline.is_finite() {
                timers.push((w.deadline, Kind::Deadline { id: w.id, version: w.version }));
            }
        }
        for (t, k) in timers {
            self.push(t, k);
        }
        let mut i = 0;
        while i < self.shadows.len() {
            let s = &self.shadows[i];
            let Some(real_id) = self.groups[s.group].as_ref().map(|g| g.real_id) else {
                self.shadows.swap_remove(i);
                continue;
            };
            let k = self.ahead_of(real_id);
            if k == 0 {
                let s = self.shadows.swap_remove(i);
                self.settle(s, true, self.now);
                continue;
            }
            let slot = s.slot;
            self.shadows[i].deadline = self.now + self.threshold(Coordinate::T(k), slot);
            i += 1;
        }
    }

    /// Own timeout of waiter `id`; everyone behind it leaves with it.
    fn timeout(&mut self, id: u64, observer: &mut Observer<'_>) {
        self.pending = None;
        let Some(pos) = self.queue.iter().position(|w| w.id == id) else { return };
        let recording = self.recording();
        let w = &self.queue[pos];
        if recording {
            let k = pos + 1;
            let r = self.server.as_ref().map_or(0.0, |j| j.end - self.now);
            let p = &self.cfg.params;
            let margin = p.v - p.c * (r + (k - 1) as f64 * self.cfg.model.mean());
            let batch = self.batch();
            if let Some(tp) = self.est.utility_at_threshold.iter_mut().find(|tp| tp.coordinate == w.coordinate) {
                tp.stat.add(batch, margin, 1.0);
            }
        }
        let leaving: Vec<Waiter> = self.queue.drain(pos..).collect();
        for (j, w) in leaving.iter().enumerate() {
            let cause = if j == 0 { DepartureCause::OwnTimeout } else { DepartureCause::Cascade };
            if recording {
                match cause {
                    DepartureCause::OwnTimeout => self.est.counts.own_timeouts += 1,
                    _ => self.est.counts.cascades += 1,
                }
            }
            if let Some(obs) = observer.as_mut() {
                obs(&TraceEvent::Departure {
                    time: self.now,
                    id: w.id,
                    cause,
                    arrival: w.arrival,
                    type_one: w.type_one,
                    deadline: w.deadline,
                });
            }
        }
        let mut i = 0;
        while i < self.shadows.len() {
            let behind = self.groups[self.shadows[i].group].as_ref().is_some_and(|g| g.real_id > id);
            if behind {
                let s = self.shadows.swap_remove(i);
                self.settle(s, false, self.now);
            } else {
                i += 1;
            }
        }
    }
}

fn threshold_of(profile: &ThresholdProfile, c: Coordinate) -> f64 {
    match c {
        Coordinate::S(n) => profile.s_n(n),
        Coordinate::T(n) => profile.t_n(n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn paper_cfg(events: u64, seed: u64) -> SimConfig {
        let params = MarketParams::new(3.0, 4.85, 1.0).unwrap();
        let model = ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap();
        let profile = ThresholdProfile::from_values(3, &[7.737], &[7.2, 3.13]).unwrap();
        SimConfig::new(params, model, profile, events, seed)
    }

    #[test]
    fn occupancy_sums_to_one() {
        let est = run(&paper_cfg(200_000, 1)).unwrap();
        let total: f64 = est.pi_hat().iter().map(|e| e.mean).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(est.counts.arrivals > 0 && est.counts.services > 0);
    }

    #[test]
    fn same_seed_same_result() {
        let a = run(&paper_cfg(50_000, 7)).unwrap();
        let b = run(&paper_cfg(50_000, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_system_blocking() {
        let params = MarketParams::new(1.0, 5.0, 1.0).unwrap();
        let model = ServiceModel::exponential(1.0).unwrap();
        let profile = ThresholdProfile::from_values(1, &[], &[]).unwrap();
        let est = run(&SimConfig::new(params, model, profile, 400_000, 3)).unwrap();
        let pi = est.pi_hat();
        assert!((pi[0].mean - 0.5).abs() < 0.01, "{:?}", pi);
    }

    #[test]
    fn null_deviation_has_zero_delta() {
        let mut cfg = paper_cfg(100_000, 5);
        cfg.deviations = vec![Deviation { coordinate: Coordinate::S(2), value: 3.13 }];
        let d = deviation_payoff(&cfg).unwrap();
        let e = d.delta.estimate();
        assert!(e.count > 0);
        assert!(e.mean.abs() < 1e-12);
    }

    #[test]
    fn trace_is_time_ordered_and_fcfs() {
        let cfg = paper_cfg(20_000, 11);
        let mut last = 0.0;
        let mut served = Vec::new();
        let mut ordered = true;
        run_traced(&cfg, &mut |e| {
            ordered &= e.time() >= last;
            last = e.time();
            if let TraceEvent::ServiceStart { id, .. } = e {
                served.push(*id);
            }
        })
        .unwrap();
        assert!(ordered);
        assert!(served.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn merged_estimates_concatenate_batches() {
        let mut a = run(&paper_cfg(30_000, 1)).unwrap();
        let b = run(&paper_cfg(30_000, 2)).unwrap();
        a.merge(&b);
        assert_eq!(a.replications, 2);
        assert_eq!(a.occupancy[0].sums.len(), 40);
    }
}
