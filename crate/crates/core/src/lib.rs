//! Equilibrium abandonment profiles for an observable M/G/1 queue.
//!
//! Customers see the queue length on arrival and every completion or
//! abandonment afterwards. Service times have increasing mean residual life.
//! A waiting customer who has seen a completion knows the service age and
//! leaves once `T_n` has elapsed since that completion; one who has not must
//! infer the age and leaves `S_n` after arriving. Arrivals that find `n_max`
//! customers balk.
//!
//! The crate is `no_std` with `alloc`. File formats, the command line and
//! parallel replications live in the companion `renege` crate.

#![no_std]

extern crate alloc;

pub mod age_posterior;
pub mod distributions;
pub mod equilibrium;
mod error;
pub mod numerics;
pub mod profile;
pub mod simulator;
pub mod steady_state;
pub mod utility;

pub use age_posterior::{AgePosterior, ArrivalMixture};
pub use distributions::{ServiceKind, ServiceModel};
pub use equilibrium::{EquilibriumSolver, SolverOptions};
pub use error::{Error, Result};
pub use numerics::{Grid, Mesh, Tolerance};
pub use profile::{Threshold, ThresholdProfile};
pub use simulator::{SimConfig, SimEstimate, Simulation};
pub use steady_state::{SteadyState, StateStructure};
pub use utility::MarketParams;
