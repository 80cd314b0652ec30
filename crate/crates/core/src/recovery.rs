//! Global motions from the low-rank factorization.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix4};

use crate::error::{Error, Result};
use crate::se3::{project_to_se3, RigidMotion};

/// Reads the global motions off `X = U V`.
///
/// Block `(1, i)` of `X` is `M_1^-1 M_i`. Each block is projected onto SE(3)
/// and the list is re-anchored so that the first motion is exactly the
/// identity.
pub fn recover_global_motions(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    n: usize,
) -> Result<Vec<RigidMotion>> {
    if u.nrows() != 4 * n || v.ncols() != 4 * n || u.ncols() != v.nrows() {
        return Err(Error::Dimension("factors do not match the scan count"));
    }
    let first_row = u.rows(0, 4) * v;
    recover_from_block_row(&first_row, n)
}

/// Same as [`recover_global_motions`] for an explicit `4N x 4N` matrix.
pub fn recover_from_matrix(x: &DMatrix<f64>, n: usize) -> Result<Vec<RigidMotion>> {
    if x.nrows() != 4 * n || x.ncols() != 4 * n {
        return Err(Error::Dimension("matrix does not match the scan count"));
    }
    recover_from_block_row(&x.rows(0, 4).into_owned(), n)
}

fn recover_from_block_row(row: &DMatrix<f64>, n: usize) -> Result<Vec<RigidMotion>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut motions = (0..n)
        .map(|i| {
            let block: Matrix4<f64> = row.fixed_view::<4, 4>(0, 4 * i).into_owned();
            project_to_se3(&block)
        })
        .collect::<Result<Vec<_>>>()?;
    let anchor = motions[0].invert();
    for m in motions.iter_mut().skip(1) {
        *m = anchor.compose(m);
    }
    motions[0] = RigidMotion::identity();
    Ok(motions)
}
