//! PTZ camera driving: the VISCA codec, transports (UDP and an in-memory
//! VISCA camera), camera backends, and the motion-plan executor.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{GestureId, Kinematics};

mod camera;
mod driver;
mod transport;
pub mod visca;

pub use camera::{Camera, SimCamera, ViscaCamera, ViscaResponder};
pub use driver::{execute, DriverEvent, DriverHandle, MotionDone};
pub use transport::{LoopbackTransport, Transport, UdpTransport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub pan: f64,
    pub tilt: f64,
    pub moving: bool,
}

/// Driver settings, loadable from JSON with defaults for missing keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    pub kinematics: Kinematics,
    pub poll_interval_ms: u64,
    pub arrival_tolerance_deg: f64,
    /// Wait for a reply before resending.
    pub reply_timeout_ms: u64,
    /// Resends after the first attempt before giving up.
    pub retries: u32,
    /// Prefix frames with the 8-byte VISCA-over-IP header.
    pub ip_header: bool,
    pub port: u16,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            kinematics: Kinematics::default(),
            poll_interval_ms: 50,
            arrival_tolerance_deg: 1.0,
            reply_timeout_ms: 200,
            retries: 2,
            ip_header: false,
            port: 52381,
        }
    }
}

impl DriverConfig {
    pub fn reply_timeout(&self) -> Duration {
        Duration::from_millis(self.reply_timeout_ms)
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("camera did not reach its target within {limit_ms} ms (gesture {gesture})")]
    Timeout { gesture: GestureId, limit_ms: u64 },
    #[error("camera rejected command with error code {0:#04x}")]
    CameraError(u8),
    #[error("cannot encode command: {0}")]
    Encode(#[from] visca::EncodeError),
    #[error("plan for gesture {0} was preempted")]
    Preempted(GestureId),
}

impl From<std::io::Error> for DriverError {
    fn from(e: std::io::Error) -> Self {
        DriverError::Transport(e.to_string())
    }
}
