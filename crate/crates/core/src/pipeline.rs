//! The outer registration loop and the `Obj` quality metric.
//!
//! Every outer iteration re-estimates the overlap of all ordered scan pairs
//! under the current global motions, refines the pairs whose overlap exceeds
//! the threshold with trimmed ICP, builds and completes the weighted block
//! matrix, decomposes it and reads the global motions back.

use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{BlockMotionMatrix, Observation};
use crate::nn::NeighborIndex;
use crate::pairwise::{
    estimate_overlap_indexed, normalize_weights, trimmed_icp_indexed, TrIcpConfig,
};
use crate::recovery::recover_global_motions;
use crate::se3::RigidMotion;
use crate::wlrs::{decompose, WlrsConfig};
use crate::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tricp: TrIcpConfig,
    pub wlrs: WlrsConfig,
    /// Cap on outer iterations.
    pub max_outer: usize,
    /// Largest per-scan rotation change (radians) counted as converged.
    pub rotation_tol: f64,
    /// Largest per-scan translation change, relative to the largest scan
    /// bounding-box diagonal, counted as converged.
    pub translation_tol: f64,
    /// Relative decrease of `Obj` below which the loop is considered
    /// stalled. An increase also counts; the best state seen is returned.
    pub objective_tol: f64,
    /// Fill unobserved blocks from their observed transposes.
    pub complete: bool,
    /// Use reliability weights; `false` gives every observed block weight 1.
    pub weighted: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tricp: TrIcpConfig::default(),
            wlrs: WlrsConfig::default(),
            max_outer: 30,
            rotation_tol: 1e-5,
            translation_tol: 1e-6,
            objective_tol: 1e-5,
            complete: true,
            weighted: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tricp.validate()?;
        self.wlrs.validate()?;
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max_outer must be positive"));
        }
        if !(self.rotation_tol >= 0.0 && self.translation_tol >= 0.0 && self.objective_tol >= 0.0) {
            return Err(Error::InvalidConfig(
                "convergence tolerances must be non-negative",
            ));
        }
        Ok(())
    }
}

/// One row of the run history. Iteration 0 describes the initial motions.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Ordered pairs that passed the overlap threshold.
    pub selected_pairs: usize,
    /// Observed off-diagonal blocks after completion.
    pub observed_blocks: usize,
    pub decomposition_iterations: usize,
    pub decomposition_converged: bool,
    pub max_rotation_change: f64,
    pub max_translation_change: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationRun {
    pub scans: Vec<PointCloud>,
    /// Global motions; the first is always the identity.
    pub motions: Vec<RigidMotion>,
    pub history: Vec<IterationRecord>,
    pub config: PipelineConfig,
}

impl RegistrationRun {
    /// Pairs scans with initial global motions. The motions are re-anchored
    /// so that the first one is the identity.
    pub fn new(
        scans: Vec<PointCloud>,
        initial: Vec<RigidMotion>,
        config: PipelineConfig,
    ) -> Result<Self> {
        if scans.len() < 2 {
            return Err(Error::TooFewPoints(scans.len()));
        }
        if initial.len() != scans.len() {
            return Err(Error::Dimension("one initial motion per scan is required"));
        }
        config.validate()?;
        Ok(Self {
            scans,
            motions: anchor(&initial),
            history: Vec::new(),
            config,
        })
    }

    pub fn initial_objective(&self) -> Option<f64> {
        self.history.first().map(|r| r.objective)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.history.last().map(|r| r.objective)
    }
}

fn anchor(motions: &[RigidMotion]) -> Vec<RigidMotion> {
    let inv = motions[0].invert();
    let mut out: Vec<RigidMotion> = motions.iter().map(|m| inv.compose(m)).collect();
    out[0] = RigidMotion::identity();
    out
}

/// Progress notifications emitted by [`register_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// The initial objective has been evaluated.
    Initialized,
    /// Overlap estimation and pair selection are done.
    PairsSelected { iteration: usize },
    /// Trimmed ICP has refined every selected pair.
    PairsRefined { iteration: usize },
    /// Decomposition and motion recovery are done.
    Decomposed { iteration: usize },
    /// The iteration's objective has been evaluated.
    IterationDone { iteration: usize },
}

/// Runs the registration loop. See [`register_with`].
pub fn register(run: RegistrationRun) -> Result<RegistrationRun> {
    register_with(run, |_| {})
}

/// Runs the registration loop, calling `observer` at each stage so callers
/// can attach timings or logging.
///
/// Returns [`Error::GraphDisconnected`] when the selected pairs do not link
/// every scan, and [`Error::RegistrationNotConverged`] (carrying the state
/// with the lowest objective) when `max_outer` is exhausted.
pub fn register_with(
    mut run: RegistrationRun,
    mut observer: impl FnMut(Stage),
) -> Result<RegistrationRun> {
    run.config.validate()?;
    let n = run.scans.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let cfg = run.config.clone();
    let indices: Vec<NeighborIndex> = par_map(n, |i| NeighborIndex::build(&run.scans[i]))
        .into_iter()
        .collect::<Result<_>>()?;
    let resolutions: Vec<f64> = par_map(n, |i| indices[i].self_resolution())
        .into_iter()
        .collect::<Result<_>>()?;
    // translations enter the decomposition in units of this length so the
    // solver's spectral scaling is independent of scene units
    let scale = run
        .scans
        .iter()
        .map(|s| s.bbox_diagonal())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    run.history.clear();
    let mut previous = objective(&run.scans, &run.motions, &cfg.tricp)?;
    run.history.push(IterationRecord {
        iteration: 0,
        objective: previous,
        selected_pairs: 0,
        observed_blocks: 0,
        decomposition_iterations: 0,
        decomposition_converged: true,
        max_rotation_change: 0.0,
        max_translation_change: 0.0,
    });
    observer(Stage::Initialized);
    let mut best = (previous, run.motions.clone());

    for iteration in 1..=cfg.max_outer {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .collect();
        // motion taking scan i's local frame into scan j's
        let relative = |i: usize, j: usize| run.motions[j].invert().compose(&run.motions[i]);
        let overlaps = par_map(pairs.len(), |k| {
            let (i, j) = pairs[k];
            estimate_overlap_indexed(
                run.scans[i].points(),
                &indices[j],
                &relative(i, j),
                &cfg.tricp,
            )
            .xi
        });
        let selected: Vec<(usize, usize)> = pairs
            .iter()
            .zip(&overlaps)
            .filter(|(_, &xi)| xi > cfg.tricp.xi_threshold)
            .map(|(&p, _)| p)
            .collect();
        observer(Stage::PairsSelected { iteration });

        let refined = par_map(selected.len(), |k| {
            let (i, j) = selected[k];
            trimmed_icp_indexed(
                run.scans[i].points(),
                &indices[j],
                resolutions[j],
                &relative(i, j),
                &cfg.tricp,
            )
        });
        // A pair whose correspondences collapse onto a point or a line (a
        // scan far from the other) yields no relative motion; it is dropped
        // as if it had not been selected.
        let mut kept = Vec::with_capacity(selected.len());
        let mut estimates = Vec::with_capacity(selected.len());
        for (pair, result) in selected.iter().zip(refined) {
            match result {
                Ok(est) => {
                    kept.push(*pair);
                    estimates.push(est);
                }
                Err(Error::DegenerateGeometry { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let selected = kept;
        observer(Stage::PairsRefined { iteration });

        let weights = if selected.is_empty() {
            Vec::new()
        } else if cfg.weighted {
            normalize_weights(&estimates.iter().map(|e| e.weight).collect::<Vec<_>>())?
        } else {
            alloc::vec![1.0; selected.len()]
        };
        let observations: Vec<Observation> = selected
            .iter()
            .zip(&estimates)
            .zip(&weights)
            .map(|((&(i, j), est), &weight)| Observation {
                i,
                j,
                motion: scale_translation(&est.motion.invert(), 1.0 / scale),
                weight,
            })
            .collect();
        let mut matrix = BlockMotionMatrix::assemble(n, &observations)?;
        if cfg.complete {
            matrix = matrix.complete();
        }
        let components = matrix.connected_components();
        if components > 1 {
            return Err(Error::GraphDisconnected { components });
        }
        let decomposition = match decompose(&matrix, &cfg.wlrs) {
            Ok(d) => d,
            // the last iterate is still a usable estimate; the flag below
            // records that the tolerance was not met
            Err(Error::NotConverged { partial, .. }) => *partial,
            Err(e) => return Err(e),
        };
        let recovered = recover_global_motions(&decomposition.u, &decomposition.v, n)?;
        let motions: Vec<RigidMotion> = recovered
            .iter()
            .map(|m| scale_translation(m, scale))
            .collect();
        observer(Stage::Decomposed { iteration });

        let obj = objective(&run.scans, &motions, &cfg.tricp)?;
        let (max_rot, max_trans) = run
            .motions
            .iter()
            .zip(&motions)
            .map(|(a, b)| a.distance_to(b))
            .fold((0.0f64, 0.0f64), |acc, d| (acc.0.max(d.0), acc.1.max(d.1)));
        run.history.push(IterationRecord {
            iteration,
            objective: obj,
            selected_pairs: selected.len(),
            observed_blocks: matrix.observed_blocks() - n,
            decomposition_iterations: decomposition.residual_history.len(),
            decomposition_converged: decomposition.converged,
            max_rotation_change: max_rot,
            max_translation_change: max_trans,
        });
        run.motions = motions;
        observer(Stage::IterationDone { iteration });

        if obj < best.0 {
            best = (obj, run.motions.clone());
        }
        let motion_settled = max_rot < cfg.rotation_tol && max_trans < cfg.translation_tol * scale;
        // pairwise refinement works on discrete correspondences, so once the
        // scans are aligned Obj jitters at the sampling level instead of
        // decreasing; a non-decrease ends the loop
        let objective_settled = previous == 0.0 || (previous - obj) / previous < cfg.objective_tol;
        if motion_settled || objective_settled {
            run.motions = best.1;
            return Ok(run);
        }
        previous = obj;
    }

    let iterations = cfg.max_outer;
    run.motions = best.1;
    Err(Error::RegistrationNotConverged {
        iterations,
        best: alloc::boxed::Box::new(run),
    })
}

fn scale_translation(m: &RigidMotion, factor: f64) -> RigidMotion {
    RigidMotion::from_parts_unchecked(*m.rotation(), m.translation() * factor)
}

/// Mean over scans of the trimmed objective of each transformed scan against
/// the union of all other transformed scans, with the overlap re-estimated
/// per scan.
pub fn objective(scans: &[PointCloud], motions: &[RigidMotion], cfg: &TrIcpConfig) -> Result<f64> {
    let n = scans.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if motions.len() != n {
        return Err(Error::Dimension("one motion per scan is required"));
    }
    let placed: Vec<Vec<Point3>> = par_map(n, |i| scans[i].transformed_points(&motions[i]));
    let values = par_map(n, |i| -> Result<f64> {
        let others: Vec<Point3> = placed
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .flat_map(|(_, pts)| pts.iter().copied())
            .collect();
        let model = NeighborIndex::from_points(&others)?;
        Ok(estimate_overlap_indexed(&placed[i], &model, &RigidMotion::identity(), cfg).psi)
    });
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(sum / n as f64)
}

#[cfg(feature = "parallel")]
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Rippled torus; the ripples break its rotational symmetry.
    fn surface(u: f64, v: f64) -> Point3 {
        let rho = 0.4 * (1.0 + 0.25 * (4.0 * u + 2.0 * v).sin() + 0.2 * (7.0 * u - v + 1.0).cos());
        let ring = 1.0 + rho * v.cos();
        Point3::new(ring * u.cos(), ring * u.sin(), rho * v.sin())
    }

    // Points of the outward-facing band whose azimuth lies in [a0, a1).
    fn patch(rng: &mut ChaCha8Rng, a0: f64, a1: f64, count: usize) -> Vec<Point3> {
        (0..count)
            .map(|_| {
                let u = rng.random_range(a0..a1);
                let v = rng.random_range(-1.0..1.0);
                surface(u, v)
            })
            .collect()
    }

    struct Scene {
        scans: Vec<PointCloud>,
        truth: Vec<RigidMotion>,
    }

    /// `views` scans around the ring with adjacent overlap `overlap`.
    fn ring(views: usize, overlap: f64) -> Vec<(f64, f64)> {
        let step = core::f64::consts::TAU / views as f64;
        let width = step / (1.0 - overlap);
        (0..views)
            .map(|k| (k as f64 * step, k as f64 * step + width))
            .collect()
    }

    fn scene(seed: u64, windows: &[(f64, f64)], points: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = Vec::new();
        let mut scans = Vec::new();
        for (k, &(a0, a1)) in windows.iter().enumerate() {
            let m = if k == 0 {
                RigidMotion::identity()
            } else {
                let w = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let t = Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                );
                RigidMotion::from_axis_angle(w, t)
            };
            let local: Vec<Point3> = patch(&mut rng, a0, a1, points)
                .iter()
                .map(|p| m.invert().transform_point(p))
                .collect();
            scans.push(PointCloud::new(alloc::format!("s{k}"), local).unwrap());
            truth.push(m);
        }
        Scene { scans, truth }
    }

    fn perturb(truth: &[RigidMotion], seed: u64, w: f64) -> Vec<RigidMotion> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        truth
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if k == 0 {
                    *m
                } else {
                    let d = Vector3::new(
                        rng.random_range(-w..w),
                        rng.random_range(-w..w),
                        rng.random_range(-w..w),
                    );
                    RigidMotion::from_axis_angle(d, Vector3::zeros()) * *m
                }
            })
            .collect()
    }

    #[test]
    fn identical_pair_converges_at_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = patch(&mut rng, 0.0, 2.0, 600);
        let scans = vec![
            PointCloud::new("a", pts.clone()).unwrap(),
            PointCloud::new("b", pts).unwrap(),
        ];
        let run = RegistrationRun::new(
            scans,
            vec![RigidMotion::identity(); 2],
            PipelineConfig::default(),
        )
        .unwrap();
        let out = register(run).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.final_objective().unwrap() < 1e-12);
        for m in &out.motions {
            let (dr, dt) = m.distance_to(&RigidMotion::identity());
            assert!(dr < 1e-9 && dt < 1e-9);
        }
        assert_eq!(out.motions[0], RigidMotion::identity());
    }

    #[test]
    fn objective_of_coincident_scans_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = patch(&mut rng, 0.0, 3.0, 500);
        let scans = vec![
            PointCloud::new("a", pts.clone()).unwrap(),
            PointCloud::new("b", pts).unwrap(),
        ];
        let obj = objective(
            &scans,
            &[RigidMotion::identity(); 2],
            &TrIcpConfig::default(),
        )
        .unwrap();
        assert!(obj < 1e-12);
    }

    #[test]
    fn objective_grows_under_perturbation() {
        let s = scene(3, &ring(6, 0.6), 1500);
        let cfg = TrIcpConfig::default();
        let base = objective(&s.scans, &s.truth, &cfg).unwrap();
        let mut moved = s.truth.clone();
        moved[3] =
            RigidMotion::from_axis_angle(Vector3::new(0.0, 0.1, 0.0), Vector3::zeros()) * moved[3];
        assert!(objective(&s.scans, &moved, &cfg).unwrap() > base);
    }

    #[test]
    fn recovers_perturbed_scene() {
        let s = scene(4, &ring(8, 0.7), 5000);
        let init = perturb(&s.truth, 40, 0.06);
        let run = RegistrationRun::new(s.scans.clone(), init, PipelineConfig::default()).unwrap();
        let out = match register(run) {
            Ok(r) => r,
            Err(Error::RegistrationNotConverged { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        assert!(out.final_objective().unwrap() <= out.initial_objective().unwrap());
        let diag = s
            .scans
            .iter()
            .map(|c| c.bbox_diagonal())
            .fold(0.0, f64::max);
        for (m, t) in out.motions.iter().zip(&s.truth) {
            let (dr, dt) = m.distance_to(t);
            assert!(dr < 0.005, "rotation error {dr}");
            assert!(dt < 0.005 * diag, "translation error {dt}");
        }
        assert!(out.motions[0] == RigidMotion::identity());
    }

    #[test]
    fn isolated_view_disconnects_graph() {
        // the third view shares only a sliver with each of the others, so no
        // pair involving it clears the overlap threshold
        let s = scene(5, &[(0.0, 2.0), (0.3, 2.3), (1.75, 3.75)], 1500);
        let run = RegistrationRun::new(s.scans, s.truth, PipelineConfig::default()).unwrap();
        assert!(matches!(
            register(run),
            Err(Error::GraphDisconnected { components: 2 })
        ));
    }

    #[test]
    fn distant_view_is_selected_and_pulled_in() {
        // A scan far from everything has a flat distance profile, for which
        // the trimmed objective favours full overlap, so its pairs pass the
        // overlap test. Refinement then drags it onto the others instead of
        // leaving it disconnected.
        let mut s = scene(8, &ring(4, 0.6), 1500);
        let far = RigidMotion::from_axis_angle(Vector3::zeros(), Vector3::new(300.0, 0.0, 0.0));
        s.truth[3] = far * s.truth[3];
        let cfg = TrIcpConfig::default();
        let index = NeighborIndex::build(&s.scans[0]).unwrap();
        let rel = s.truth[0].invert().compose(&s.truth[3]);
        let xi = estimate_overlap_indexed(s.scans[3].points(), &index, &rel, &cfg).xi;
        assert!(xi > cfg.xi_threshold, "xi {xi}");

        let config = PipelineConfig {
            max_outer: 2,
            ..PipelineConfig::default()
        };
        let run = RegistrationRun::new(s.scans, s.truth, config).unwrap();
        let out = match register(run) {
            Ok(r) => r,
            Err(Error::RegistrationNotConverged { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(out.history[1].selected_pairs, 12);
        assert!(out.final_objective().unwrap() < 1e-3 * out.initial_objective().unwrap());
    }

    #[test]
    fn degenerate_pairs_are_dropped() {
        // a scan of collinear points supports no rigid fit in either direction
        let s = scene(9, &ring(3, 0.6), 800);
        let line: Vec<Point3> = (0..50)
            .map(|k| Point3::new(1.0 + 0.01 * k as f64, 0.0, 0.0))
            .collect();
        let mut scans = s.scans;
        scans.push(PointCloud::new("line", line).unwrap());
        let mut motions = s.truth;
        motions.push(RigidMotion::identity());
        let run = RegistrationRun::new(scans, motions, PipelineConfig::default()).unwrap();
        assert!(matches!(
            register(run),
            Err(Error::GraphDisconnected { components: 2 })
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = scene(6, &ring(5, 0.6), 1000);
        let init = perturb(&s.truth, 60, 0.05);
        let go = || {
            let run =
                RegistrationRun::new(s.scans.clone(), init.clone(), PipelineConfig::default())
                    .unwrap();
            match register(run) {
                Ok(r) => r,
                Err(Error::RegistrationNotConverged { best, .. }) => *best,
                Err(e) => panic!("{e}"),
            }
        };
        let (a, b) = (go(), go());
        assert_eq!(a.history, b.history);
        assert_eq!(a.motions, b.motions);
    }

    #[test]
    fn initial_motions_are_anchored() {
        let s = scene(7, &ring(3, 0.6), 200);
        let g =
            RigidMotion::from_axis_angle(Vector3::new(0.2, 0.0, 0.1), Vector3::new(1.0, 0.0, 0.0));
        let shifted: Vec<RigidMotion> = s.truth.iter().map(|m| g * *m).collect();
        let run = RegistrationRun::new(s.scans, shifted, PipelineConfig::default()).unwrap();
        assert_eq!(run.motions[0], RigidMotion::identity());
        for (m, t) in run.motions.iter().zip(&s.truth) {
            assert!(m.distance_to(t).0 < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let c = PointCloud::new("a", vec![Point3::zeros(), Point3::x()]).unwrap();
        assert!(RegistrationRun::new(
            vec![c.clone()],
            vec![RigidMotion::identity()],
            PipelineConfig::default()
        )
        .is_err());
        assert!(matches!(
            RegistrationRun::new(
                vec![c.clone(), c],
                vec![RigidMotion::identity()],
                PipelineConfig::default()
            ),
            Err(Error::Dimension(_))
        ));
    }
}
