//! Block matrices of relative motions.
//!
//! For `N` scans the reconstructed matrix `X^` is `4N x 4N`; block `(i, j)`
//! holds the relative motion `M_ij = M_i^-1 M_j` when it was observed and
//! zeros otherwise. Diagonal blocks are always `I_4`. `W` carries one weight
//! per block and `Omega = ceil(W)` marks observed entries.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix4};

use crate::error::{Error, Result};
use crate::se3::RigidMotion;

/// One observed block: `M_ij` with its normalized weight in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub i: usize,
    pub j: usize,
    pub motion: RigidMotion,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMotionMatrix {
    n: usize,
    x_hat: DMatrix<f64>,
    w: DMatrix<f64>,
    omega: DMatrix<f64>,
}

impl BlockMotionMatrix {
    /// Stacks observations into `X^`, `W` and `Omega`. Indices are 0-based.
    pub fn assemble(n: usize, observations: &[Observation]) -> Result<Self> {
        if n == 0 {
            return Err(Error::IndexOutOfRange { index: 0, n });
        }
        let dim = 4 * n;
        let mut m = Self {
            n,
            x_hat: DMatrix::zeros(dim, dim),
            w: DMatrix::zeros(dim, dim),
            omega: DMatrix::zeros(dim, dim),
        };
        for k in 0..n {
            m.set_block(k, k, &Matrix4::identity(), 1.0);
        }
        let mut seen = vec![false; n * n];
        for ob in observations {
            for index in [ob.i, ob.j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if ob.i == ob.j {
                return Err(Error::DuplicatePair(ob.i, ob.j));
            }
            if seen[ob.i * n + ob.j] {
                return Err(Error::DuplicatePair(ob.i, ob.j));
            }
            if !(ob.weight > 0.0 && ob.weight <= 1.0) {
                return Err(Error::InvalidConfig("block weight must lie in (0, 1]"));
            }
            seen[ob.i * n + ob.j] = true;
            m.set_block(ob.i, ob.j, &ob.motion.to_homogeneous(), ob.weight);
        }
        Ok(m)
    }

    /// Builds a matrix from raw parts. `omega` is derived as `ceil(w)`.
    pub fn from_parts(x_hat: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let dim = x_hat.nrows();
        if dim == 0 || !dim.is_multiple_of(4) || x_hat.ncols() != dim {
            return Err(Error::Dimension(
                "matrix must be square with size a multiple of 4",
            ));
        }
        if w.shape() != x_hat.shape() {
            return Err(Error::Dimension(
                "weight matrix shape differs from motion matrix",
            ));
        }
        if w.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig("weights must lie in [0, 1]"));
        }
        let omega = w.map(libm::ceil);
        Ok(Self {
            n: dim / 4,
            x_hat,
            w,
            omega,
        })
    }

    fn set_block(&mut self, i: usize, j: usize, block: &Matrix4<f64>, weight: f64) {
        self.x_hat
            .fixed_view_mut::<4, 4>(4 * i, 4 * j)
            .copy_from(block);
        self.w.fixed_view_mut::<4, 4>(4 * i, 4 * j).fill(weight);
        self.omega
            .fixed_view_mut::<4, 4>(4 * i, 4 * j)
            .fill(libm::ceil(weight));
    }

    pub fn n_scans(&self) -> usize {
        self.n
    }

    pub fn x_hat(&self) -> &DMatrix<f64> {
        &self.x_hat
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix4<f64> {
        self.x_hat.fixed_view::<4, 4>(4 * i, 4 * j).into_owned()
    }

    pub fn block_weight(&self, i: usize, j: usize) -> f64 {
        self.w[(4 * i, 4 * j)]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.omega[(4 * i, 4 * j)] > 0.0
    }

    /// Number of observed blocks, diagonal included.
    pub fn observed_blocks(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_observed(i, j))
            .count()
    }

    /// Fills every missing block `(j, i)` whose transpose `(i, j)` is observed
    /// with `M_ij^-1` and the same weight. Pairs observed in both directions
    /// are left untouched.
    pub fn complete(&self) -> BlockMotionMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j || !self.is_observed(i, j) || self.is_observed(j, i) {
                    continue;
                }
                let inverse = invert_homogeneous(&self.block(i, j));
                out.set_block(j, i, &inverse, self.block_weight(i, j));
            }
        }
        out
    }

    /// Number of connected components of the undirected graph whose edges
    /// are the observed off-diagonal blocks.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.is_observed(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

// Blocks stored in X^ are homogeneous rigid motions; invert them as such.
fn invert_homogeneous(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    RigidMotion::from_parts_unchecked(r, t)
        .invert()
        .to_homogeneous()
}

/// The noise-free block matrix `X` with block `(i, j) = M_i^-1 M_j`.
pub fn exact_matrix(global_motions: &[RigidMotion]) -> DMatrix<f64> {
    let n = global_motions.len();
    let inverses: Vec<Matrix4<f64>> = global_motions
        .iter()
        .map(|m| m.invert().to_homogeneous())
        .collect();
    let homs: Vec<Matrix4<f64>> = global_motions.iter().map(|m| m.to_homogeneous()).collect();
    let mut x = DMatrix::zeros(4 * n, 4 * n);
    for i in 0..n {
        for j in 0..n {
            x.fixed_view_mut::<4, 4>(4 * i, 4 * j)
                .copy_from(&(inverses[i] * homs[j]));
        }
    }
    x
}

/// `U = [M_1^-1; ...; M_N^-1]` and `V = [M_1 ... M_N]`, so that `X = U V`.
pub fn exact_factors(global_motions: &[RigidMotion]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = global_motions.len();
    let mut u = DMatrix::zeros(4 * n, 4);
    let mut v = DMatrix::zeros(4, 4 * n);
    for (i, m) in global_motions.iter().enumerate() {
        u.fixed_view_mut::<4, 4>(4 * i, 0)
            .copy_from(&m.invert().to_homogeneous());
        v.fixed_view_mut::<4, 4>(0, 4 * i)
            .copy_from(&m.to_homogeneous());
    }
    (u, v)
}
