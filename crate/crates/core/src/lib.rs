//! Decentralized passivity-based design tools for grid-forming inverters in
//! microgrids.
//!
//! The crate assembles DQ-frame models of RLC line networks and LC-filtered
//! inverters, certifies output strict passivity of state-feedback inverter
//! controllers, searches for controllers that maximize the passivity index
//! under practical constraints, and simulates interconnected microgrids
//! through load steps and plug-in events.

pub mod certify;
pub mod config;
pub mod dqframe;
pub mod inverter;
pub mod linalg;
pub mod lti;
pub mod network;
pub mod output;
pub mod sim;
pub mod synthesize;

pub use dqframe::{DQPair, SyncFrame};
pub use inverter::{AugmentedPlant, ClosedLoopBus, ControllerGains, InverterParams, VirtualImpedance};
pub use lti::LtiSystem;
pub use network::{Line, LineSection, NetworkModel};
