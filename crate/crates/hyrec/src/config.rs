//! Experiment configuration (JSON). Unknown keys are rejected everywhere.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hyrec_core::compress::CompressMethod;
use hyrec_core::driver::{InnerStop, SolverConfig, DEFAULT_MAX_CYCLES};
use hyrec_core::projreg::{Omega, RegMethod, DEFAULT_TAU};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub stream: StreamSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phantom {
    #[default]
    Smooth,
    SheppLogan,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Blur1d {
        size: usize,
        psf_sigma: f64,
        noise_level: f64,
        #[serde(default)]
        seed: u64,
    },
    Blur2d {
        size: usize,
        psf_sigma: f64,
        noise_level: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        phantom: Phantom,
    },
    Tomo {
        size: usize,
        /// Evenly spaced over [0°, 180°).
        n_angles: usize,
        #[serde(default)]
        rays: Option<usize>,
        noise_level: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "shepp_logan")]
        phantom: Phantom,
    },
}

fn shepp_logan() -> Phantom {
    Phantom::SheppLogan
}

impl ProblemSpec {
    pub fn seed(&self) -> u64 {
        match *self {
            ProblemSpec::Blur1d { seed, .. }
            | ProblemSpec::Blur2d { seed, .. }
            | ProblemSpec::Tomo { seed, .. } => seed,
        }
    }

    pub fn set_seed(&mut self, s: u64) {
        match self {
            ProblemSpec::Blur1d { seed, .. }
            | ProblemSpec::Blur2d { seed, .. }
            | ProblemSpec::Tomo { seed, .. } => *seed = s,
        }
    }

    pub fn noise_level(&self) -> f64 {
        match *self {
            ProblemSpec::Blur1d { noise_level, .. }
            | ProblemSpec::Blur2d { noise_level, .. }
            | ProblemSpec::Tomo { noise_level, .. } => noise_level,
        }
    }

    fn validate(&self) -> Result<()> {
        let (size, min) = match *self {
            ProblemSpec::Blur1d { size, .. } | ProblemSpec::Blur2d { size, .. } => (size, 1),
            ProblemSpec::Tomo { size, n_angles, .. } => {
                if n_angles == 0 {
                    bail!("problem.n_angles must be positive");
                }
                (size, 2)
            }
        };
        if size < min {
            bail!("problem.size must be at least {min}");
        }
        let nl = self.noise_level();
        if !(nl >= 0.0 && nl.is_finite()) {
            bail!("problem.noise_level must be a nonnegative number");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    Hybr,
    Recycle,
    /// Both solvers on the same data, one CSV.
    Compare,
}

/// Regularization rule; noise quantities left out are filled in from the
/// generated problem.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegSpec {
    // Empty braces so extra keys are rejected.
    Optimal {},
    Gcv {},
    Wgcv {
        #[serde(default = "auto")]
        omega: Omega,
    },
    Upre {
        #[serde(default)]
        noise_variance: Option<f64>,
    },
    Dp {
        #[serde(default)]
        noise_norm: Option<f64>,
        #[serde(default)]
        tau: Option<f64>,
    },
}

fn auto() -> Omega {
    Omega::Auto
}

impl Default for RegSpec {
    fn default() -> Self {
        RegSpec::Wgcv { omega: Omega::Auto }
    }
}

impl RegSpec {
    pub fn resolve(&self, noise_norm: f64, rows: usize) -> RegMethod {
        match *self {
            RegSpec::Optimal {} => RegMethod::Optimal,
            RegSpec::Gcv {} => RegMethod::Gcv,
            RegSpec::Wgcv { omega } => RegMethod::Wgcv { omega },
            RegSpec::Upre { noise_variance } => RegMethod::Upre {
                noise_variance: noise_variance.unwrap_or(noise_norm * noise_norm / rows as f64),
            },
            RegSpec::Dp {
                noise_norm: nn,
                tau,
            } => RegMethod::Dp {
                noise_norm: nn.unwrap_or(noise_norm),
                tau: tau.unwrap_or(DEFAULT_TAU),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerStopSpec {
    MaxFill {},
    GcvFlat { tol: f64, window: usize },
}

impl From<InnerStopSpec> for InnerStop {
    fn from(s: InnerStopSpec) -> Self {
        match s {
            InnerStopSpec::MaxFill {} => InnerStop::MaxFill,
            InnerStopSpec::GcvFlat { tol, window } => InnerStop::GcvFlat { tol, window },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub storage_limit: usize,
    pub compress: CompressMethod,
    pub reg: RegSpec,
    pub reorth: bool,
    pub max_cycles: usize,
    pub inner_stop: InnerStopSpec,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: SolverMethod::Hybr,
            storage_limit: 30,
            compress: CompressMethod::Tsvd {
                q: 15,
                eps_tol: 0.0,
            },
            reg: RegSpec::default(),
            reorth: true,
            max_cycles: DEFAULT_MAX_CYCLES,
            inner_stop: InnerStopSpec::MaxFill {},
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self, noise_norm: f64, rows: usize) -> SolverConfig {
        SolverConfig {
            storage_limit: self.storage_limit,
            compress: self.compress,
            reg: self.reg.resolve(noise_norm, rows),
            reorth: self.reorth,
            max_cycles: self.max_cycles,
            inner_stop: self.inner_stop.into(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    /// Number of contiguous angle groups (datasets).
    pub splits: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self { splits: 2 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub m: usize,
    pub k: usize,
    pub ell: usize,
    /// λ values, log-spaced on `[lambda_min_factor σ₁(B̂), σ₁(B̂)]`.
    pub lambda_count: usize,
    pub lambda_min_factor: f64,
    /// Tikhonov parameter for the solution direction in `W`; GCV when absent.
    pub x1_lambda: Option<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            m: 30,
            k: 15,
            ell: 10,
            lambda_count: 20,
            lambda_min_factor: 1e-6,
            x1_lambda: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid configuration")?;
        cfg.problem.validate()?;
        if cfg.stream.splits == 0 {
            bail!("stream.splits must be at least 1");
        }
        let v = &cfg.verify;
        if v.k == 0
            || v.k > v.m
            || v.lambda_count == 0
            || !(v.lambda_min_factor > 0.0 && v.lambda_min_factor <= 1.0)
        {
            bail!("verify needs 1 <= k <= m, lambda_count >= 1 and 0 < lambda_min_factor <= 1");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("in {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_str(
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002}}"#,
        )
        .unwrap();
        assert_eq!(c.solver.method, SolverMethod::Hybr);
        assert_eq!(c.solver.storage_limit, 30);
        assert_eq!(c.stream.splits, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = [
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002},"extra":1}"#,
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002,"colour":1}}"#,
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002},"solver":{"speed":1}}"#,
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002},"solver":{"reg":{"kind":"gcv","w":1}}}"#,
            r#"{"problem":{"kind":"blur1d","size":64,"psf_sigma":2,"noise_level":0.002},"solver":{"inner_stop":{"kind":"max_fill","w":1}}}"#,
        ];
        for b in bad {
            assert!(ExperimentConfig::from_str(b).is_err(), "{b}");
        }
    }

    #[test]
    fn noise_quantities_filled_from_problem() {
        let dp = RegSpec::Dp {
            noise_norm: None,
            tau: None,
        };
        assert_eq!(
            dp.resolve(0.5, 100),
            RegMethod::Dp {
                noise_norm: 0.5,
                tau: DEFAULT_TAU
            }
        );
        let up = RegSpec::Upre {
            noise_variance: None,
        };
        assert_eq!(
            up.resolve(2.0, 100),
            RegMethod::Upre {
                noise_variance: 0.04
            }
        );
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_str(
            r#"{"problem":{"kind":"blur1d","size":0,"psf_sigma":2,"noise_level":0.002}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_str(
            r#"{"problem":{"kind":"tomo","size":8,"n_angles":0,"noise_level":0.002}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_str(
            r#"{"problem":{"kind":"blur1d","size":8,"psf_sigma":2,"noise_level":0.002},"verify":{"m":3,"k":5}}"#
        )
        .is_err());
    }
}
