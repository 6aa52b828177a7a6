//! Dense linear algebra substrate: matrices, products, SVD, seeded
//! initialization.

mod matrix;
mod rng;
mod svd;

pub use matrix::{matmul, relu, Matrix};
pub(crate) use matrix::{matmul_t_unchecked, matmul_unchecked, t_matmul_unchecked};
pub use rng::{kaiming_init, normal_matrix, Rng};
pub use svd::{svd, SvdResult};
