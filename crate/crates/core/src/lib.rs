//! Separated learning and control for paired model/actual cyber-physical
//! systems over finite spaces.

pub mod belief;
pub mod config;
pub mod dp;
pub mod gaussian;
pub mod memory;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod simulator;
pub mod system;

pub use belief::{FilterError, JointBelief};
pub use config::{load_system, parse_system, ConfigError, RawSystem};
pub use memory::{DelayedMemory, MemoryError};
pub use policy::{Information, Strategy};
pub use system::{Coupling, System, SystemError};
