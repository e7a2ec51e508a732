//! Numerical substrate: dense matrices, seeded streams, samplers, quadrature
//! and root finding.

pub mod dist;
mod matrix;
pub mod quad;
mod rng;
pub mod roots;

pub use dist::{gamma_sample, gaussian_sample, nakagami_pdf, nakagami_sample, standard_normal};
pub use matrix::Matrix;
pub use quad::quad_adaptive;
pub use rng::RngStream;
pub use roots::bisect;
