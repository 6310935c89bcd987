//! Cardiac dipole simulator and the least-squares oracle.

mod angle;
mod device;
mod jitter;
mod lsq;
mod projection;
mod trajectory;

pub use angle::{wrap_phi, ViewAngle};
pub use device::{apply_device, DeviceProfile};
pub use jitter::{PlacementJitter, DEFAULT_JITTER_STD_DEG, MAX_JITTER_DEG};
pub use lsq::{estimate_dipole_lsq, oracle_synthesize, LeadGeometry, MIN_SINGULAR_VALUE};
pub use projection::{project_direction, project_lead_far, project_lead_full, wilson_terminal};
pub use trajectory::{
    default_packets, synth_dipole_trajectory, synth_with, DipoleTrajectory, TrajectoryConfig, WavePacket,
    QRS_PACKETS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DipoleError {
    #[error("angle (theta={theta}, phi={phi}) outside theta in [0,180], phi in (-180,180]")]
    InvalidAngle { theta: f64, phi: f64 },
    #[error("electrode {distance} m from the source; must exceed 0.01 m")]
    Singularity { distance: f64 },
    #[error("degenerate lead geometry over {leads} leads: condition number {condition:e}")]
    DegenerateGeometry { condition: f64, leads: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
