pub mod characteristics;
pub mod ensembles;
pub mod flow;
pub mod homogenization;
pub mod error;
pub mod experiment;
pub mod quadrature;
pub mod spectral;
pub mod universality;

pub use error::{Error, Result};
