//! Flat `key = value` configuration files.
//!
//! Lines starting with `#` are comments. Keys are grouped by prefix:
//!
//! | key | meaning |
//! |-----|---------|
//! | `seed` | seed for every randomized step |
//! | `tricp.lambda_trim`, `tricp.xi_threshold`, `tricp.max_iterations`, `tricp.convergence_tol` | pairwise registration |
//! | `wlrs.rank`, `wlrs.lambda_nuclear`, `wlrs.rho`, `wlrs.mu_init`, `wlrs.mu_cap`, `wlrs.inner_tol`, `wlrs.outer_tol`, `wlrs.max_inner`, `wlrs.max_outer` | decomposition; `auto` selects the default for `lambda_nuclear` and `mu_init` |
//! | `pipeline.max_outer`, `pipeline.rotation_tol`, `pipeline.translation_tol`, `pipeline.objective_tol`, `pipeline.complete`, `pipeline.weighted` | outer loop |
//! | `synth.surface`, `synth.n_views`, `synth.points_per_view`, `synth.overlap_target`, `synth.noise_sigma`, `synth.rotation_perturbation`, `synth.pose_rotation`, `synth.pose_translation` | synthetic scene |
//! | `input.scans`, `input.motions`, `input.format` | scan files (whitespace or comma separated), initial motions, cloud format (`ply`, `ply_ascii`, `ply_binary_le`, `xyz`) |
//! | `output.dir`, `output.motions`, `output.report`, `output.timings` | output locations |
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvreg_core::PipelineConfig;

use crate::formats::{fmt_f64, CloudFormat};
use crate::synth::{Surface, SyntheticScene};
use crate::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Present when any `synth.*` key is set.
    pub synth: Option<SyntheticScene>,
    pub scans: Vec<PathBuf>,
    pub motions: Option<PathBuf>,
    pub format: Option<CloudFormat>,
    pub output_dir: PathBuf,
    pub output_motions: String,
    pub output_report: String,
    pub output_timings: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pipeline: PipelineConfig::default(),
            synth: None,
            scans: Vec::new(),
            motions: None,
            format: None,
            output_dir: PathBuf::from("."),
            output_motions: "motions.txt".into(),
            output_report: "report.txt".into(),
            output_timings: "timings.csv".into(),
        }
    }
}

/// `(line number, key, value)` triples in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, IoError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| IoError::line(k + 1, "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(IoError::line(k + 1, "empty key"));
        }
        out.push((k + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, IoError> {
    value
        .parse()
        .map_err(|_| IoError::line(line, format!("invalid value {value:?} for {key}")))
}

fn optional(line: usize, key: &str, value: &str) -> Result<Option<f64>, IoError> {
    if value == "auto" {
        Ok(None)
    } else {
        num(line, key, value).map(Some)
    }
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool, IoError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(IoError::line(
            line,
            format!("invalid boolean {value:?} for {key}"),
        )),
    }
}

pub fn parse_format(value: &str) -> Option<CloudFormat> {
    match value {
        "ply" | "ply_ascii" => Some(CloudFormat::PlyAscii),
        "ply_binary_le" | "ply_binary" => Some(CloudFormat::PlyBinaryLe),
        "xyz" => Some(CloudFormat::Xyz),
        _ => None,
    }
}

impl RunConfig {
    /// Parses a config; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, IoError> {
        let mut cfg = RunConfig {
            output_dir: base.to_path_buf(),
            ..Default::default()
        };
        let resolve = |v: &str| base.join(v);
        for (line, key, value) in parse_pairs(text)? {
            let (l, k, v) = (line, key.as_str(), value.as_str());
            let p = &mut cfg.pipeline;
            match k {
                "seed" => cfg.seed = num(l, k, v)?,
                "tricp.lambda_trim" => p.tricp.lambda_trim = num(l, k, v)?,
                "tricp.xi_threshold" => p.tricp.xi_threshold = num(l, k, v)?,
                "tricp.max_iterations" => p.tricp.max_iterations = num(l, k, v)?,
                "tricp.convergence_tol" => p.tricp.convergence_tol = num(l, k, v)?,
                "wlrs.rank" => p.wlrs.rank = num(l, k, v)?,
                "wlrs.lambda_nuclear" => p.wlrs.lambda_nuclear = optional(l, k, v)?,
                "wlrs.rho" => p.wlrs.rho = num(l, k, v)?,
                "wlrs.mu_init" => p.wlrs.mu_init = optional(l, k, v)?,
                "wlrs.mu_cap" => p.wlrs.mu_cap = num(l, k, v)?,
                "wlrs.inner_tol" => p.wlrs.inner_tol = num(l, k, v)?,
                "wlrs.outer_tol" => p.wlrs.outer_tol = num(l, k, v)?,
                "wlrs.max_inner" => p.wlrs.max_inner = num(l, k, v)?,
                "wlrs.max_outer" => p.wlrs.max_outer = num(l, k, v)?,
                "pipeline.max_outer" => p.max_outer = num(l, k, v)?,
                "pipeline.rotation_tol" => p.rotation_tol = num(l, k, v)?,
                "pipeline.translation_tol" => p.translation_tol = num(l, k, v)?,
                "pipeline.objective_tol" => p.objective_tol = num(l, k, v)?,
                "pipeline.complete" => p.complete = boolean(l, k, v)?,
                "pipeline.weighted" => p.weighted = boolean(l, k, v)?,
                "input.scans" => {
                    cfg.scans = v
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(resolve)
                        .collect()
                }
                "input.motions" => cfg.motions = Some(resolve(v)),
                "input.format" => {
                    cfg.format = Some(
                        parse_format(v)
                            .ok_or_else(|| IoError::line(l, format!("unknown format {v:?}")))?,
                    )
                }
                "output.dir" => cfg.output_dir = resolve(v),
                "output.motions" => cfg.output_motions = v.to_string(),
                "output.report" => cfg.output_report = v.to_string(),
                "output.timings" => cfg.output_timings = v.to_string(),
                _ if k.starts_with("synth.") => {
                    let s = cfg.synth.get_or_insert_with(SyntheticScene::default);
                    match k {
                        "synth.surface" => {
                            s.surface = Surface::from_name(v)
                                .ok_or_else(|| IoError::line(l, format!("unknown surface {v:?}")))?
                        }
                        "synth.n_views" => s.n_views = num(l, k, v)?,
                        "synth.points_per_view" => s.points_per_view = num(l, k, v)?,
                        "synth.overlap_target" => s.overlap_target = num(l, k, v)?,
                        "synth.noise_sigma" => s.noise_sigma = num(l, k, v)?,
                        "synth.rotation_perturbation" => s.rotation_perturbation = num(l, k, v)?,
                        "synth.pose_rotation" => s.pose_rotation = num(l, k, v)?,
                        "synth.pose_translation" => s.pose_translation = num(l, k, v)?,
                        _ => return Err(IoError::line(l, format!("unknown key {k}"))),
                    }
                }
                _ => return Err(IoError::line(l, format!("unknown key {k}"))),
            }
        }
        cfg.pipeline.validate()?;
        if let Some(s) = &cfg.synth {
            s.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// The effective configuration as `key = value` lines. Paths are echoed
    /// as file names only so reports do not depend on where a run happens.
    pub fn echo(&self) -> Vec<(String, String)> {
        let p = &self.pipeline;
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), fmt_f64);
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("tricp.lambda_trim".into(), fmt_f64(p.tricp.lambda_trim)),
            ("tricp.xi_threshold".into(), fmt_f64(p.tricp.xi_threshold)),
            (
                "tricp.max_iterations".into(),
                p.tricp.max_iterations.to_string(),
            ),
            (
                "tricp.convergence_tol".into(),
                fmt_f64(p.tricp.convergence_tol),
            ),
            ("wlrs.rank".into(), p.wlrs.rank.to_string()),
            ("wlrs.lambda_nuclear".into(), opt(p.wlrs.lambda_nuclear)),
            ("wlrs.rho".into(), fmt_f64(p.wlrs.rho)),
            ("wlrs.mu_init".into(), opt(p.wlrs.mu_init)),
            ("wlrs.mu_cap".into(), fmt_f64(p.wlrs.mu_cap)),
            ("wlrs.inner_tol".into(), fmt_f64(p.wlrs.inner_tol)),
            ("wlrs.outer_tol".into(), fmt_f64(p.wlrs.outer_tol)),
            ("wlrs.max_inner".into(), p.wlrs.max_inner.to_string()),
            ("wlrs.max_outer".into(), p.wlrs.max_outer.to_string()),
            ("pipeline.max_outer".into(), p.max_outer.to_string()),
            ("pipeline.rotation_tol".into(), fmt_f64(p.rotation_tol)),
            (
                "pipeline.translation_tol".into(),
                fmt_f64(p.translation_tol),
            ),
            ("pipeline.objective_tol".into(), fmt_f64(p.objective_tol)),
            ("pipeline.complete".into(), p.complete.to_string()),
            ("pipeline.weighted".into(), p.weighted.to_string()),
        ];
        if let Some(s) = &self.synth {
            out.extend([
                ("synth.surface".to_string(), s.surface.name().to_string()),
                ("synth.n_views".into(), s.n_views.to_string()),
                (
                    "synth.points_per_view".into(),
                    s.points_per_view.to_string(),
                ),
                ("synth.overlap_target".into(), fmt_f64(s.overlap_target)),
                ("synth.noise_sigma".into(), fmt_f64(s.noise_sigma)),
                (
                    "synth.rotation_perturbation".into(),
                    fmt_f64(s.rotation_perturbation),
                ),
                ("synth.pose_rotation".into(), fmt_f64(s.pose_rotation)),
                ("synth.pose_translation".into(), fmt_f64(s.pose_translation)),
            ]);
        }
        let name = |p: &Path| {
            p.file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
        };
        if !self.scans.is_empty() {
            let names: Vec<String> = self.scans.iter().map(|p| name(p)).collect();
            out.push(("input.scans".into(), names.join(" ")));
        }
        if let Some(m) = &self.motions {
            out.push(("input.motions".into(), name(m)));
        }
        out
    }
}
