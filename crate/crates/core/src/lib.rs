//! Dwell times, trapping regions and simulation for switched systems whose
//! modes have distinct exponentially stable equilibria.

pub mod dwell;
pub mod error;
pub mod format;
pub mod lyapunov;
pub mod runner;
pub mod sampling;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
pub use signal::{signal_from_dwell, validate_dwell, Dwell, SwitchingSignal};
pub use system::{example_system, make_affine_subsystem, ClassKFn, Label, Subsystem, SwitchedSystem};
