//! Sensing-parameter estimation for perceptive mobile networks.
//!
//! The crate synthesizes multiuser OFDMA signals over clustered multipath
//! channels and recovers per-path delay, angles, Doppler and power:
//!
//! - [`scene`]: ground-truth multipath and exact channel matrices
//! - [`waveform`]: OFDM numerology, symbols and the received signal
//! - [`sparse`]: dictionaries plus OMP and SBL joint-sparse solvers
//! - [`direct`]: estimation straight from received blocks with known symbols
//! - [`indirect`]: estimation from reconstructed per-user channels
//! - [`clutter`]: recursive background subtraction
//! - [`baseline`]: classical 2D-DFT range-angle maps
//! - [`harness`]: configs, scenario runs, matching and CSV output

pub mod baseline;
pub mod clutter;
pub mod direct;
pub mod error;
pub mod harness;
pub mod indirect;
pub mod linalg;
pub mod scene;
pub mod sparse;
pub mod waveform;

pub use error::{Error, Result, SolverError};
pub use linalg::CMat;
pub use scene::{PathParams, Scene, UlaConfig};
pub use waveform::{Allocation, OfdmGrid};
