//! Synthetic multi-view scenes with known ground truth.
//!
//! A closed analytic surface (or an open height field) is cut into views by
//! overlapping parameter windows. Each view is sampled independently, offset
//! by Gaussian noise and expressed in its own frame through the inverse of its
//! ground-truth motion. Initial motions are the ground truth with a uniform
//! per-axis rotation perturbation.

use std::f64::consts::{FRAC_PI_3, TAU};

use mvreg_core::se3::rotation_exp;
use mvreg_core::{Error, Point3, PointCloud, RigidMotion};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Sphere,
    Torus,
    WaveGrid,
}

impl Surface {
    pub fn name(self) -> &'static str {
        match self {
            Surface::Sphere => "sphere",
            Surface::Torus => "torus",
            Surface::WaveGrid => "wave-grid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sphere" => Some(Surface::Sphere),
            "torus" => Some(Surface::Torus),
            "wave-grid" | "wavegrid" | "wave_grid" => Some(Surface::WaveGrid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub surface: Surface,
    pub n_views: usize,
    pub points_per_view: usize,
    /// Fraction of a view shared with each neighbouring view.
    pub overlap_target: f64,
    /// Point noise standard deviation as a fraction of the surface's
    /// bounding-box diagonal.
    pub noise_sigma: f64,
    /// Half-width (radians) of the uniform per-axis rotation noise applied to
    /// the initial motions.
    pub rotation_perturbation: f64,
    /// Largest rotation angle of the ground-truth view motions.
    pub pose_rotation: f64,
    /// Largest translation component of the ground-truth view motions, as a
    /// fraction of the bounding-box diagonal.
    pub pose_translation: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            surface: Surface::Torus,
            n_views: 8,
            points_per_view: 5000,
            overlap_target: 0.7,
            noise_sigma: 0.0,
            rotation_perturbation: 0.06,
            pose_rotation: 0.5,
            pose_translation: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scans: Vec<PointCloud>,
    pub ground_truth: Vec<RigidMotion>,
    pub initial: Vec<RigidMotion>,
}

// Windows are widened a little beyond the nominal overlap: boundary samples
// and sampling noise move the measured overlap by a few percent.
const WINDOW_MARGIN: f64 = 0.05;

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.4;
const GRID_DEPTH: f64 = 1.5;

/// Point on the surface at parameters `(u, v)`. Closed surfaces use the
/// azimuth `u` in `[0, 2pi)`; the height field uses `u` as the x coordinate.
/// Every surface carries ripples that break its continuous symmetries.
pub fn surface_point(surface: Surface, u: f64, v: f64) -> Point3 {
    match surface {
        Surface::Sphere => {
            let r = 1.0
                + 0.2 * (4.0 * u + v).sin() * (2.0 * v).cos()
                + 0.12 * (7.0 * u + 1.0).cos() * v.sin();
            Point3::new(r * v.sin() * u.cos(), r * v.sin() * u.sin(), r * v.cos())
        }
        Surface::Torus => {
            let rho = TORUS_MINOR
                * (1.0 + 0.25 * (4.0 * u + 2.0 * v).sin() + 0.2 * (7.0 * u - v + 1.0).cos());
            let ring = TORUS_MAJOR + rho * v.cos();
            Point3::new(ring * u.cos(), ring * u.sin(), rho * v.sin())
        }
        Surface::WaveGrid => {
            let z = 0.2 * (4.1 * u + 0.3).sin() * (2.7 * v).cos()
                + 0.12 * (5.3 * u * v).sin()
                + 0.08 * (6.0 * v).sin();
            Point3::new(u, v, z)
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_views < 2 {
            return Err(Error::InvalidConfig("a scene needs at least two views"));
        }
        if self.points_per_view < 10 {
            return Err(Error::InvalidConfig("a view needs at least ten points"));
        }
        if !(0.0..0.95).contains(&self.overlap_target) {
            return Err(Error::InvalidConfig("overlap_target must lie in [0, 0.95)"));
        }
        if !(self.noise_sigma >= 0.0 && self.rotation_perturbation >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be non-negative"));
        }
        Ok(())
    }

    /// Parameter-space windows `(u0, u1)`, one per view.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        let n = self.n_views as f64;
        let overlap = (self.overlap_target + WINDOW_MARGIN).min(0.97);
        match self.surface {
            Surface::Sphere | Surface::Torus => {
                let step = TAU / n;
                let width = (step / (1.0 - overlap)).min(TAU);
                (0..self.n_views)
                    .map(|k| {
                        let c = k as f64 * step;
                        (c - 0.5 * width, c + 0.5 * width)
                    })
                    .collect()
            }
            Surface::WaveGrid => {
                let width = 1.0;
                let step = width * (1.0 - overlap);
                (0..self.n_views)
                    .map(|k| (k as f64 * step, k as f64 * step + width))
                    .collect()
            }
        }
    }

    /// Bounding-box diagonal of the whole surface.
    pub fn diagonal(&self) -> f64 {
        match self.surface {
            Surface::Sphere => 2.0 * 1.32 * 3f64.sqrt(),
            Surface::Torus => {
                let tube = 1.45 * TORUS_MINOR;
                let outer = TORUS_MAJOR + tube;
                (8.0 * outer * outer + 4.0 * tube * tube).sqrt()
            }
            Surface::WaveGrid => {
                let length = self.windows().last().map_or(1.0, |w| w.1);
                (length * length + GRID_DEPTH * GRID_DEPTH + 0.8 * 0.8).sqrt()
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, window: (f64, f64)) -> Point3 {
        loop {
            let u = rng.random_range(window.0..window.1);
            match self.surface {
                Surface::Sphere => {
                    // uniform on the sphere, polar caps removed so the caps are
                    // not shared by every view
                    let v = rng.random_range(-0.9f64..0.9).acos();
                    return surface_point(self.surface, u, v);
                }
                Surface::Torus => {
                    // a scanner outside the ring sees the outward-facing band of the tube
                    let v = rng.random_range(-FRAC_PI_3..FRAC_PI_3);
                    // area element is proportional to the ring radius
                    let keep = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                    if rng.random::<f64>() <= keep {
                        return surface_point(self.surface, u, v);
                    }
                }
                Surface::WaveGrid => {
                    let v = rng.random_range(0.0..GRID_DEPTH);
                    return surface_point(self.surface, u, v);
                }
            }
        }
    }
}

fn uniform_vector(rng: &mut ChaCha8Rng, half_width: f64) -> Vector3<f64> {
    if half_width == 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
    )
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi = rng.random_range(0.0..TAU);
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Perturbs every motion except the first by a rotation `exp(w)` applied on
/// the left of its rotation, with each component of `w` uniform in
/// `[-half_width, half_width]`. The rotation change is `|w| <= sqrt(3) half_width`.
pub fn perturb_rotations(
    motions: &[RigidMotion],
    half_width: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<RigidMotion> {
    motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            if k == 0 {
                return *m;
            }
            let r = rotation_exp(&uniform_vector(rng, half_width)) * m.rotation();
            RigidMotion::from_parts(r, *m.translation())
                .expect("product of rotations is a rotation")
        })
        .collect()
}

/// Draws a scene. Identical `(scene, seed)` pairs give identical output.
pub fn generate_scene(scene: &SyntheticScene, seed: u64) -> Result<GeneratedScene, Error> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = scene.diagonal();
    let noise = Normal::new(0.0, scene.noise_sigma * diag)
        .map_err(|_| Error::InvalidConfig("noise_sigma"))?;

    let ground_truth: Vec<RigidMotion> = (0..scene.n_views)
        .map(|k| {
            if k == 0 {
                return RigidMotion::identity();
            }
            let angle = rng.random_range(0.0..=scene.pose_rotation);
            let axis = random_axis(&mut rng);
            let t = uniform_vector(&mut rng, scene.pose_translation * diag);
            RigidMotion::from_axis_angle(axis * angle, t)
        })
        .collect();

    let mut scans = Vec::with_capacity(scene.n_views);
    for (k, window) in scene.windows().into_iter().enumerate() {
        let to_local = ground_truth[k].invert();
        let points: Vec<Point3> = (0..scene.points_per_view)
            .map(|_| {
                let p = scene.sample(&mut rng, window);
                let jitter = Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
                to_local.transform_point(&(p + jitter))
            })
            .collect();
        scans.push(PointCloud::new(format!("view{k:02}"), points)?);
    }

    let initial = perturb_rotations(&ground_truth, scene.rotation_perturbation, &mut rng);
    Ok(GeneratedScene {
        scans,
        ground_truth,
        initial,
    })
}

/// Parameter-space overlap between two windows as a fraction of the first.
pub fn window_overlap(a: (f64, f64), b: (f64, f64), periodic: bool) -> f64 {
    let width = a.1 - a.0;
    let shared = |shift: f64| ((a.1).min(b.1 + shift) - (a.0).max(b.0 + shift)).max(0.0);
    let total = if periodic {
        shared(-TAU) + shared(0.0) + shared(TAU)
    } else {
        shared(0.0)
    };
    (total / width).min(1.0)
}
