//! Downlink power control for dense small-cell grids.
//!
//! * [`netsim`]: topology, SINR, rates, power model and energy efficiency.
//! * [`observation`]: per-SBS partial observations and the state matrix.
//! * [`actor`]: the drawer-structured deterministic policy network.
//! * [`learner`]: deterministic-target policy gradient training.
//! * [`baselines`]: max power, almost-blank subframes and DDPG.
//! * [`bench`]: configuration, experiment runs and result files.

pub mod actor;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod learner;
pub mod netsim;
pub mod observation;
pub mod tensor;

pub use error::{Error, Result};
