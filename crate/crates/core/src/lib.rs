//! Hybrid random access for coexisting mMTC and URLLC devices.
//!
//! mMTC devices contend through a four-step procedure in which the base
//! station uses timing-advance (TA) information to separate devices that
//! picked the same preamble, then resolves the leftovers with power-domain
//! successive interference cancellation (SIC). URLLC devices take a
//! contention-free two-step path whose resources are sized by an
//! attention-LSTM forecast of the URLLC arrival count.
//!
//! Modules:
//! - [`geometry`]: cell layout, TA quantization and annulus probabilities
//! - [`traffic`]: Poisson URLLC arrivals and windowed-max training labels
//! - [`phy`]: Zadoff-Chu preambles and circular-correlation detection
//! - [`sic`]: power levels and the symbolic SIC decode rule
//! - [`protocol`]: the per-slot access procedure and the random-power baseline
//! - [`analytic`]: closed-form expected number of successful devices
//! - [`predictor`]: two-layer LSTM with additive attention, trained by BPTT
//! - [`montecarlo`]: seeded trial orchestration and simulation-vs-model checks

pub mod analytic;
pub mod error;
pub mod geometry;
pub mod montecarlo;
pub mod phy;
pub mod predictor;
pub mod protocol;
pub mod sic;
pub mod traffic;

pub use error::{Error, Result};
