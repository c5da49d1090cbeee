//! Downlink channel reconstruction for FDD massive MIMO from uplink-derived
//! path geometry plus quantized per-path phase feedback.
//!
//! The crate is organized bottom-up:
//!
//! * [`channel`] – ULA steering vectors, multipath UL/DL channel synthesis and
//!   random scene generation.
//! * [`feedback`] – uniform scalar phase quantization and the DFT-codebook
//!   baseline.
//! * [`allocation`] – the phase-compensation factor, the normalized MMSE curve
//!   and optimal (greedy marginal-analysis) feedback-bit allocation.
//! * [`reconstruction`] – the MMSE channel estimate, its error covariance and
//!   outer-product approximation diagnostics.
//! * [`precoding`] – the sum-SE lower bound, generalized power iteration
//!   precoding (GPIP), ZF and WMMSE baselines.
//! * [`sim`] – seeded Monte Carlo campaigns producing CSV records.

pub mod allocation;
pub mod channel;
pub mod error;
pub mod feedback;
pub mod linalg;
pub mod precoding;
pub mod reconstruction;
pub mod sim;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
