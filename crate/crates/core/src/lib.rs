pub mod clock;
pub mod codebook;
pub mod conductor;
pub mod detector;
pub mod ensemble;
pub mod planner;
pub mod ptz;
pub mod score;
pub mod session;
pub mod sim;
pub mod sweep;
