//! Interpolation of receiver-sub-sampled ultrasound RF data.
//!
//! The crate covers the full desk-scale pipeline: point-scatterer RF
//! simulation ([`phantom`]), the Depth×Rx×SC data model and dynamic-aperture
//! masks ([`data`]), Hankel lifting and convolutional framelets ([`hankel`],
//! [`framelets`]), a low-rank Hankel completion baseline ([`completion`]), a
//! from-scratch CNN interpolator ([`neural`]), delay-and-sum beamforming
//! ([`beamform`]) and experiment drivers ([`eval`]).

pub mod beamform;
pub mod completion;
pub mod data;
pub mod error;
pub mod eval;
pub mod framelets;
pub mod hankel;
pub mod neural;
pub mod phantom;
pub mod seeding;

pub use error::{Error, Result};
