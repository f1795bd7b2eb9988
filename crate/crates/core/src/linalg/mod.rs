//! Dense linear algebra: the matrix type, Householder QR, Jacobi SVD and
//! the spectral helpers used everywhere else.

mod matrix;
mod qr;
mod spectral;
mod svd;

pub use matrix::{dot, norm2, DenseMatrix};
pub use qr::{householder_qr, QrFactors};
pub use spectral::{
    angle_matrix, eps_rank, eps_rank_of_values, matrix_with_spectrum, orth, power_spectral_norm, random_orthogonal,
    random_orthonormal_columns, rowspace_distance, spectral_norm, truncate_to_rank, truncate_to_tolerance,
    SpectrumSpec,
};
pub use svd::{singular_values, svd, SvdResult, MAX_SWEEPS};
