//! Special functions, dense linear algebra, quadrature, finite differences
//! and minimization.

pub mod diff;
pub mod linalg;
pub mod optimize;
pub mod quadrature;
pub mod special;

pub use diff::{fd_gradient, fd_hessian, fd_jacobian};
pub use linalg::{cholesky, symmetric_eigen, Matrix, SpdMatrix};
pub use optimize::{minimize, minimize_with_hessian};
pub use quadrature::{integrate_1d, integrate_1d_with_breaks, Tolerances};
pub use special::{
    euler_totient, normal_cdf, normal_pdf, normal_quantile, normal_sf, riemann_zeta, t_cdf, t_pdf, t_quantile,
};
