//! Differential item functioning (DIF) detection for binary survey items.
//!
//! Four procedures share one decision record: Mantel-Haenszel, single-level
//! logistic regression, random-intercept logistic regression and Lord's Wald
//! test on 1PL calibrations. The numerical kernels are generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the precision.

pub mod data;
pub mod dif;
pub mod dist;
pub mod error;
pub mod glm;
pub mod glmm;
pub mod irt;
pub mod linalg;
pub mod optim;
pub mod quadrature;
pub mod report;
pub mod scalar;
pub mod sim;

pub use data::{DifDataset, RecodeSpec, RespondentRecord};
pub use dif::{DifDecision, DifMethod, Verdict};
pub use error::{Error, Result};
pub use glm::DesignSpec;
pub use glmm::{GlmmDesign, Method};
pub use irt::ItemResponseMatrix;
pub use scalar::Scalar;
pub use sim::{SimConfig, SimReport};

pub type Matrix = linalg::Matrix<f64>;
pub type FittedGlm = glm::FittedGlm<f64>;
pub type FittedGlmm = glmm::FittedGlmm<f64>;
pub type GlmmParams = glmm::GlmmParams<f64>;
pub type IrtCalibration = irt::IrtCalibration<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type FittedGlm32 = glm::FittedGlm<f32>;
pub type FittedGlmm32 = glmm::FittedGlmm<f32>;
pub type GlmmParams32 = glmm::GlmmParams<f32>;
pub type IrtCalibration32 = irt::IrtCalibration<f32>;
