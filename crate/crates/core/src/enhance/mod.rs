//! The enhancement network and its training objective.

pub mod can;
pub mod loss;

pub use can::{build_can, can_forward, default_schedule, literal_schedule, receptive_field, CanConfig, CanModel};
pub use loss::{perceptual_loss, Fidelity, LossTerms, PerceptualLoss};
