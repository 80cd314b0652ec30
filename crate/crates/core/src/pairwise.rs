//! Pairwise registration: overlap estimation, trimmed ICP and reliability
//! weights.
//!
//! For a data scan `P` and a model scan `Q` under a motion `M`, every point of
//! `M P` is paired with its nearest neighbour in `Q`. With the pair distances
//! sorted ascending, the trimmed objective of the first `k` pairs is
//!
//! ```text
//! psi(k) = (sum_{a <= k} d_a^2) / (k * (k / n)^(1 + lambda))
//! ```
//!
//! The minimizing `k` fixes a distance threshold; the overlap is the fraction
//! of pairs at or below it. Trimmed ICP alternates this estimate with a closed
//! form rigid fit on the retained pairs.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix4};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::NeighborIndex;
use crate::se3::{RigidMotion, Svd3};
use crate::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrIcpConfig {
    /// Exponent `lambda` of the overlap penalty.
    pub lambda_trim: f64,
    /// A scan pair is registered only when its overlap exceeds this.
    pub xi_threshold: f64,
    pub max_iterations: usize,
    /// Stop once the relative decrease of `psi` falls below this.
    pub convergence_tol: f64,
}

impl Default for TrIcpConfig {
    fn default() -> Self {
        Self {
            lambda_trim: 2.0,
            xi_threshold: 0.4,
            max_iterations: 100,
            convergence_tol: 1e-8,
        }
    }
}

impl TrIcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi_threshold > 0.0 && self.xi_threshold <= 1.0) {
            return Err(Error::InvalidConfig("xi_threshold must lie in (0, 1]"));
        }
        if !(self.lambda_trim > 0.0) {
            return Err(Error::InvalidConfig("lambda_trim must be positive"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Result of a trimmed ICP run for one ordered scan pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseEstimate {
    /// Motion mapping data-scan coordinates into the model-scan frame.
    pub motion: RigidMotion,
    /// Estimated overlap fraction of the data scan.
    pub overlap: f64,
    /// Mean squared distance over the retained pairs (`Pe`).
    pub trimmed_mse: f64,
    /// Mean squared nearest-neighbour spacing of the model scan (`Qe`).
    pub model_resolution: f64,
    /// Raw weight `Qe / Pe^2`; replaced by the normalized weight once all
    /// estimates of a round are known.
    pub weight: f64,
    /// `psi` after every accepted iteration, starting with the initial motion.
    pub psi_history: Vec<f64>,
}

impl PairwiseEstimate {
    pub fn psi(&self) -> f64 {
        *self.psi_history.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEstimate {
    /// Overlap fraction `n_ij / n_i`.
    pub xi: f64,
    pub distance_threshold: f64,
    /// Number of pairs at or below the threshold.
    pub retained: usize,
    /// Trimmed objective over the retained pairs.
    pub psi: f64,
}

/// Sorted correspondences of a data scan against a model index.
#[derive(Debug, Clone)]
pub(crate) struct Correspondences {
    /// `(distance, data index, model index)`, ascending by distance.
    pub pairs: Vec<(f64, usize, usize)>,
}

impl Correspondences {
    pub fn search(data: &[Point3], motion: &RigidMotion, model: &NeighborIndex) -> Self {
        let mut pairs: Vec<(f64, usize, usize)> = data
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let (b, d) = model.nearest(&motion.transform_point(p));
                (d, a, b)
            })
            .collect();
        pairs.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        Self { pairs }
    }

    pub fn overlap(&self, lambda: f64) -> OverlapEstimate {
        let n = self.pairs.len();
        let distances: Vec<f64> = self.pairs.iter().map(|p| p.0).collect();
        let (k, _) = minimize_trimmed_objective(&distances, lambda);
        let threshold = distances[k - 1];
        let retained = distances.partition_point(|&d| d <= threshold);
        let sum: f64 = distances[..retained].iter().map(|d| d * d).sum();
        OverlapEstimate {
            xi: retained as f64 / n as f64,
            distance_threshold: threshold,
            retained,
            psi: trimmed_objective(sum, retained, n, lambda),
        }
    }
}

/// Smallest prefix length considered by the overlap search.
pub fn min_prefix(n: usize) -> usize {
    let k = libm::ceil(0.05 * n as f64) as usize;
    k.max(10).min(n).max(1)
}

fn trimmed_objective(sum_sq: f64, k: usize, n: usize, lambda: f64) -> f64 {
    let xi = k as f64 / n as f64;
    sum_sq / (k as f64 * libm::pow(xi, 1.0 + lambda))
}

/// Minimizes `psi(k)` over `k in [min_prefix(n), n]` for ascending
/// `distances`. Exact ties resolve to the largest `k`.
pub fn minimize_trimmed_objective(distances: &[f64], lambda: f64) -> (usize, f64) {
    let n = distances.len();
    let k_min = min_prefix(n);
    let mut sum = 0.0;
    let mut best = (n, f64::INFINITY);
    for (i, d) in distances.iter().enumerate() {
        sum += d * d;
        let k = i + 1;
        if k < k_min {
            continue;
        }
        let psi = trimmed_objective(sum, k, n, lambda);
        if psi <= best.1 {
            best = (k, psi);
        }
    }
    best
}

/// Overlap of `source` (moved by `motion`) onto `target`.
pub fn estimate_overlap(
    source: &PointCloud,
    target: &PointCloud,
    motion: &RigidMotion,
    cfg: &TrIcpConfig,
) -> Result<OverlapEstimate> {
    let index = NeighborIndex::build(target)?;
    Ok(estimate_overlap_indexed(
        source.points(),
        &index,
        motion,
        cfg,
    ))
}

pub fn estimate_overlap_indexed(
    source: &[Point3],
    target: &NeighborIndex,
    motion: &RigidMotion,
    cfg: &TrIcpConfig,
) -> OverlapEstimate {
    Correspondences::search(source, motion, target).overlap(cfg.lambda_trim)
}

/// Least-squares rigid motion taking `src` onto `dst` (centroid-subtracted
/// SVD of the cross-covariance with determinant correction).
pub fn fit_rigid(src: &[Point3], dst: &[Point3]) -> Result<RigidMotion> {
    if src.len() != dst.len() {
        return Err(Error::Dimension("fit_rigid needs equally many points"));
    }
    if src.is_empty() {
        return Err(Error::DegenerateGeometry { rank: 0 });
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
    }
    let svd = Svd3::new(&h);
    let rank = svd.rank(1e-12);
    if rank < 2 {
        return Err(Error::DegenerateGeometry { rank });
    }
    // h = U S V^T; R = V diag(1, 1, det(V U^T)) U^T
    let d = (svd.v * svd.u.transpose()).determinant().signum();
    let r =
        svd.v * Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d)) * svd.u.transpose();
    let t = cd - r * cs;
    Ok(RigidMotion::from_parts_unchecked(r, t))
}

/// Trimmed ICP of `source` against `target` from `init`.
pub fn trimmed_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidMotion,
    cfg: &TrIcpConfig,
) -> Result<PairwiseEstimate> {
    let index = NeighborIndex::build(target)?;
    let qe = index.self_resolution()?;
    trimmed_icp_indexed(source.points(), &index, qe, init, cfg)
}

/// Trimmed ICP against a prebuilt model index with known resolution `qe`.
pub fn trimmed_icp_indexed(
    source: &[Point3],
    target: &NeighborIndex,
    qe: f64,
    init: &RigidMotion,
    cfg: &TrIcpConfig,
) -> Result<PairwiseEstimate> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut motion = *init;
    let mut corr = Correspondences::search(source, &motion, target);
    let mut overlap = corr.overlap(cfg.lambda_trim);
    let mut history = alloc::vec![overlap.psi];

    for _ in 0..cfg.max_iterations {
        if overlap.psi == 0.0 {
            break;
        }
        let retained = &corr.pairs[..overlap.retained];
        let src: Vec<Point3> = retained.iter().map(|&(_, a, _)| source[a]).collect();
        let dst: Vec<Point3> = retained
            .iter()
            .map(|&(_, _, b)| target.points()[b])
            .collect();
        let candidate = fit_rigid(&src, &dst)?;
        let next_corr = Correspondences::search(source, &candidate, target);
        let next = next_corr.overlap(cfg.lambda_trim);
        if next.psi > overlap.psi {
            // rounding noise at convergence; keep the last accepted motion
            break;
        }
        let rel = (overlap.psi - next.psi) / overlap.psi;
        motion = candidate;
        corr = next_corr;
        overlap = next;
        history.push(overlap.psi);
        if rel < cfg.convergence_tol {
            break;
        }
    }

    let sum: f64 = corr.pairs[..overlap.retained]
        .iter()
        .map(|p| p.0 * p.0)
        .sum();
    let pe = sum / overlap.retained as f64;
    Ok(PairwiseEstimate {
        motion,
        overlap: overlap.xi,
        trimmed_mse: pe,
        model_resolution: qe,
        weight: compute_weight(pe, qe),
        psi_history: history,
    })
}

/// `A = Qe / Pe^2`, with `Pe` floored at `1e-12 * Qe`.
pub fn compute_weight(pe: f64, qe: f64) -> f64 {
    let floor = 1e-12 * qe;
    if pe < floor {
        qe / (floor * floor)
    } else {
        qe / (pe * pe)
    }
}

/// `B = A / max(A)`.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if weights.is_empty() {
        return Err(Error::NoWeights);
    }
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::InvalidConfig("weights must be positive and finite"));
    }
    Ok(weights.iter().map(|w| w / max).collect())
}

/// 4x4 block filled with `b`.
pub fn expand_weight(b: f64) -> Matrix4<f64> {
    Matrix4::repeat(b)
}
