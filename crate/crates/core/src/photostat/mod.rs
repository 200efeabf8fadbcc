//! Photon-number algebra and the analytic expectation engine.
//!
//! Detectors are click detectors: a channel fires with probability
//! `1 − (1−η)ⁿ·exp(−dark)`. Probabilities are computed in closed form from
//! negative-binomial generating functions; [`heralded_g2_enumerated`] repeats
//! the calculation by explicit enumeration.

mod dist;
mod engine;

pub(crate) use dist::negbin_terms;
pub use dist::{negative_binomial, pair_distribution, thin, PhotonNumberDist, DEFAULT_N_MAX, TRUNCATION_LIMIT};
pub use engine::{
    blocked_pulses, expected_rates, herald_probability, heralded_g2, heralded_g2_enumerated, heralded_signal_dist,
    mixture_g2, mixture_ratio, ChannelProbs, ChannelRates, PulseModel,
};
