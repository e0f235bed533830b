//! Analysis and simulation of vehicle chains under an asymmetric
//! bidirectional PD controller.
//!
//! Every vehicle is a double integrator that reacts to its predecessor
//! through `p1 = a1 + b1 s` and to its follower through `p2 = a2 + b2 s`.
//! The crate covers:
//!
//! * [`tf`]: the elementary transfer functions and the flow functions
//!   `C1`, `C2` by which disturbances travel backward and forward,
//! * [`freq`]: H-infinity estimates on the imaginary axis, the flow-norm
//!   conditions and the asymmetry tuner,
//! * [`chain`]: the tridiagonal chain operator, a direct solver, and the
//!   closed-form per-vehicle responses to a leader disturbance,
//! * [`sim`]: time-domain integration of the closed loop and the
//!   `(L2, l2)` norms used as the string-stability criterion.

pub mod chain;
pub mod error;
pub mod freq;
pub mod sim;
pub mod tf;

pub use error::{Error, Result};
pub use tf::{AffineTerm, ComplexPoint, ControllerGains};
