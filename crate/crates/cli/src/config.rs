//! Run settings as stored in checkpoints, and their translation into core
//! configuration values.

use clap::ValueEnum;
use margfit_core::grad::{Engine, PerturbationConfig, Sides};
use margfit_core::infer::{InferenceConfig, Mode, Rho, RhoAssignment};
use margfit_core::losses::LossKind;
use serde::{Deserialize, Serialize};

use crate::io::GridDims;
use crate::CliError;

/// Parses a loss name such as `univ_logistic` or `smooth_class:alpha=50`.
pub fn parse_loss(s: &str) -> Result<LossKind, String> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (s.trim(), None),
    };
    let kind = match name {
        "surrogate_likelihood" => LossKind::SurrogateLikelihood,
        "truncated_em" => LossKind::TruncatedEm,
        "pseudolikelihood" => LossKind::Pseudolikelihood,
        "piecewise" => LossKind::Piecewise,
        "univ_logistic" => LossKind::UnivLogistic,
        "clique_logistic" => LossKind::CliqueLogistic,
        "univ_quad" => LossKind::UnivQuad,
        "smooth_class" => {
            let a = arg.ok_or("smooth_class needs a sharpness, e.g. smooth_class:alpha=50")?;
            let v = a.strip_prefix("alpha=").unwrap_or(a);
            let alpha: f64 = v.parse().map_err(|_| format!("bad alpha {v:?}"))?;
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(format!("alpha must be positive, got {alpha}"));
            }
            return Ok(LossKind::SmoothClass { alpha });
        }
        _ => return Err(format!("unknown loss {name:?}")),
    };
    match arg {
        Some(a) => Err(format!("loss {name} takes no argument, got {a:?}")),
        None => Ok(kind),
    }
}

pub fn loss_name(kind: &LossKind) -> String {
    match kind {
        LossKind::SurrogateLikelihood => "surrogate_likelihood".into(),
        LossKind::TruncatedEm => "truncated_em".into(),
        LossKind::Pseudolikelihood => "pseudolikelihood".into(),
        LossKind::Piecewise => "piecewise".into(),
        LossKind::UnivLogistic => "univ_logistic".into(),
        LossKind::CliqueLogistic => "clique_logistic".into(),
        LossKind::SmoothClass { alpha } => format!("smooth_class:alpha={alpha}"),
        LossKind::UnivQuad => "univ_quad".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodName {
    /// Mean field.
    #[value(alias = "mean_field")]
    Mf,
    /// Tree-reweighted belief propagation.
    Trw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EngineName {
    Backprop,
    Perturbation,
    /// Converged TRW only.
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum InitName {
    /// `surrogate` for smooth_class, `independent` for other marginal
    /// losses, `zero` otherwise.
    Auto,
    Zero,
    /// Fit the independent model first.
    Independent,
    /// Fit the surrogate likelihood first.
    Surrogate,
    /// Standard normal weights drawn from `--seed`.
    Random,
    /// Weights of an existing checkpoint.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSpec {
    pub method: MethodName,
    /// `comb`, or a uniform edge appearance probability. Unset means comb
    /// on grids and 1 elsewhere.
    pub rho: Option<String>,
    /// Sweeps for truncated inference.
    pub sweeps: usize,
    /// Run to convergence at this threshold instead of truncating.
    pub threshold: Option<f64>,
    /// Sweep cap for converged inference.
    pub max_sweeps: usize,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        InferenceSpec {
            method: MethodName::Trw,
            rho: None,
            sweeps: 5,
            threshold: None,
            max_sweeps: 10_000,
        }
    }
}

impl InferenceSpec {
    pub fn mode(&self) -> Mode {
        match self.threshold {
            Some(threshold) => Mode::Converged {
                threshold,
                max_iters: self.max_sweeps,
            },
            None => Mode::Truncated(self.sweeps),
        }
    }

    pub fn rho(&self, grid: Option<GridDims>) -> Result<Rho, CliError> {
        match (self.rho.as_deref(), grid) {
            (None | Some("comb"), Some(d)) => Ok(RhoAssignment::grid_combs(d.rows, d.cols)?.spec()),
            (Some("comb"), None) => Err(CliError::input(
                "rho=comb needs a grid dataset; pass a number instead".into(),
            )),
            (None, None) => Ok(Rho::Uniform(1.0)),
            (Some(v), _) => v
                .parse()
                .map(Rho::Uniform)
                .map_err(|_| CliError::input(format!("rho must be `comb` or a number, got {v:?}"))),
        }
    }

    pub fn resolve(&self, grid: Option<GridDims>) -> Result<InferenceConfig, CliError> {
        let cfg = match self.method {
            MethodName::Mf => InferenceConfig::mean_field(self.mode()),
            MethodName::Trw => InferenceConfig::trw(self.rho(grid)?, self.mode()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSpec {
    pub kind: EngineName,
    /// Perturbation only: 1, 2 or 4.
    pub sides: u32,
    /// Perturbation only: step multiplier.
    pub multiplier: f64,
}

impl Default for EngineSpec {
    fn default() -> Self {
        EngineSpec {
            kind: EngineName::Backprop,
            sides: 2,
            multiplier: 1.0,
        }
    }
}

impl EngineSpec {
    pub fn resolve(&self) -> Result<Engine, CliError> {
        Ok(match self.kind {
            EngineName::Backprop => Engine::Backprop,
            EngineName::Implicit => Engine::Implicit,
            EngineName::Perturbation => {
                if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
                    return Err(CliError::input(format!(
                        "multiplier must be positive, got {}",
                        self.multiplier
                    )));
                }
                Engine::Perturbation(PerturbationConfig {
                    sides: Sides::from_count(self.sides)?,
                    multiplier: self.multiplier,
                })
            }
        })
    }
}

/// Everything needed to repeat a training run or evaluate its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub loss: String,
    pub inference: InferenceSpec,
    pub engine: EngineSpec,
    pub lambda: f64,
    pub iterations: usize,
    pub grad_tol: f64,
    pub init: InitName,
    pub freeze_edges: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            loss: "univ_logistic".into(),
            inference: InferenceSpec::default(),
            engine: EngineSpec::default(),
            lambda: 1e-4,
            iterations: 100,
            grad_tol: 1e-6,
            init: InitName::Auto,
            freeze_edges: false,
        }
    }
}

impl RunConfig {
    pub fn loss(&self) -> Result<LossKind, CliError> {
        parse_loss(&self.loss).map_err(CliError::Input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_names_round_trip() {
        for s in [
            "surrogate_likelihood",
            "truncated_em",
            "pseudolikelihood",
            "piecewise",
            "univ_logistic",
            "clique_logistic",
            "smooth_class:alpha=50",
            "univ_quad",
        ] {
            assert_eq!(loss_name(&parse_loss(s).unwrap()), s);
        }
        assert_eq!(
            parse_loss("smooth_class:15").unwrap(),
            LossKind::SmoothClass { alpha: 15.0 }
        );
    }

    #[test]
    fn bad_losses_are_rejected() {
        for s in [
            "",
            "logistic",
            "smooth_class",
            "smooth_class:alpha=-1",
            "univ_quad:3",
        ] {
            assert!(parse_loss(s).is_err(), "{s}");
        }
    }

    #[test]
    fn rho_defaults_follow_the_dataset() {
        let grid = Some(GridDims { rows: 3, cols: 3 });
        let mut spec = InferenceSpec::default();
        assert!(matches!(spec.rho(grid).unwrap(), Rho::PerEdge(_)));
        assert_eq!(spec.rho(None).unwrap(), Rho::Uniform(1.0));
        spec.rho = Some("comb".into());
        assert!(spec.rho(None).is_err());
        spec.rho = Some("0.5".into());
        assert_eq!(spec.rho(grid).unwrap(), Rho::Uniform(0.5));
        spec.rho = Some("x".into());
        assert!(spec.rho(grid).is_err());
    }

    #[test]
    fn engine_checks_its_settings() {
        let mut e = EngineSpec {
            kind: EngineName::Perturbation,
            sides: 3,
            multiplier: 1.0,
        };
        assert!(e.resolve().is_err());
        e.sides = 4;
        assert!(e.resolve().is_ok());
        e.multiplier = 0.0;
        assert!(e.resolve().is_err());
    }

    #[test]
    fn config_serializes_with_snake_case_names() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert!(text.contains("\"method\":\"trw\""));
        assert!(text.contains("\"kind\":\"backprop\""));
        assert!(text.contains("\"init\":\"auto\""));
    }
}
