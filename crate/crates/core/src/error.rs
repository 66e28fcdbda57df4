use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("integral did not converge")]
    IntegralDidNotConverge,
    #[error("root not bracketed")]
    RootNotBracketed,
    #[error("hazard undefined beyond support")]
    BeyondSupport,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model failed IMRL certification")]
    NotImrl,
    #[error("no normalizing pi0")]
    NoNormalizingPi0,
    #[error("conditioning on null event (n = {0})")]
    NullEvent(usize),
    #[error("posterior undefined")]
    PosteriorUndefined,
    #[error("inconsistent state: customer past threshold")]
    PastThreshold,
    #[error("S fixed point did not converge")]
    FixedPointDidNotConverge,
    #[error("analytic steady state requires n_max <= 3 (got {0}); simulation required")]
    SimulationRequired(usize),
    #[error("illegal state combination: {0}")]
    IllegalState(String),
}
