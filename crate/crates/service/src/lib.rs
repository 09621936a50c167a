//! Resource-manager emulator, orchestrator and experiment harness.

pub mod api;
pub mod clock;
pub mod rm;
pub mod journal;
pub mod orchestrator;
pub mod harness;
pub mod http;
