//! Average correlations of random matrix product states and isometric
//! tensor network states, computed exactly through replica transfer
//! matrices and sampled by Monte Carlo.

pub mod ensemble;
pub mod error;
pub mod permgroup;
pub mod rational;
pub mod spectra;
pub mod transfer1d;
pub mod transfer2d;
pub mod weingarten;

mod par;

pub use error::{Error, Result};
pub use permgroup::{GroupOrder, Permutation};
pub use rational::RationalMatrix;
pub use transfer1d::Params;
