//! Cooperative indoor UAV stack: a deterministic simulated arena, APF-shaped
//! TD3 guidance, GAT-based two-UAV task allocation, depth/IMU altitude fusion
//! and the allocation server that ties them together.

pub mod allocserver;
pub mod altitude;
pub mod apf;
pub mod error;
pub mod guidance;
pub mod sensors;
pub mod simenv;
pub mod taskalloc;
pub mod td3;
pub mod world;

pub use error::{Error, Result};
