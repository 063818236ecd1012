//! Numerical geometry and spectral analysis for gas-giant metrics
//! g = x^{-α}(dx² + h(x, y)), 0 < α < 2, on manifolds with boundary.

pub mod error;
pub mod fit;
pub mod flow;
pub mod jacobi;
pub mod metric;
pub mod ode;
pub mod quad;
pub mod spectral;
pub mod spline;
pub mod xray;

pub use error::{GeoError, Result};
