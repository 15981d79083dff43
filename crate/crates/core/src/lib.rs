//! Interference alignment for 3-user molecular interference channels by the
//! choice of molecule releasing and sampling times, with optional
//! reaction-based cancellation of the aligned interference.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alignment;
pub mod asymptotic;
pub mod detection;
pub mod error;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod reaction;
pub mod search;

pub use alignment::{beamforming, check_conditions, BeamformingSet};
pub use error::{Error, Result};
pub use model::{channel_set, impulse_response, ChannelSet, Scenario, TimingSchedule};
pub use reaction::{lemma2_region, reaction_residuals, Lemma2Region};
