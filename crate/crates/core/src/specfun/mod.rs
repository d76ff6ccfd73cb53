//! Special functions behind the covariance kernels and spectral densities.

mod bessel;
mod gamma;
mod hyperu;
pub mod quadrature;

pub(crate) use bessel::ln_bessel_k_unchecked;
pub use bessel::{bessel_k, ln_bessel_k};
pub(crate) use gamma::ln_gamma_unchecked;
pub use gamma::{ln_gamma, ln_gamma_ratio, normal_cdf, normal_pdf, normal_quantile, reg_lower_gamma, reg_upper_gamma};
pub use hyperu::{hyper_u, ln_hyper_u};
pub use quadrature::{integrate, QuadResult, QuadratureConfig};
