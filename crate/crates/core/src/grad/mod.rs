//! Engines turning a loss gradient with respect to the marginals into a
//! gradient with respect to the parameters.
//!
//! * [`perturbation_grad`] differences the inference output along dQ/dμ.
//! * [`back_mean_field`] and [`back_trw`] run reverse sweeps over a recorded
//!   [`InferenceTrace`](crate::infer::InferenceTrace) and return the exact
//!   gradient of the truncated, unrolled computation.
//! * [`implicit_diff_grad`] solves the linear system given by the
//!   optimality conditions of converged TRW. It is a dense small-scale
//!   reference.

mod backprop;
mod implicit;
mod perturbation;

pub use backprop::{back_mean_field, back_trw, backnorm};
pub use implicit::{entropy_trw_hessian, implicit_diff_grad, local_polytope_constraints};
pub use perturbation::{perturb_step_size, perturbation_grad, PerturbationConfig, Sides};

use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, InferenceOutput, Method};
use crate::model::{Params, Tables};

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub grad: Tables,
    /// Extra inference runs the engine needed.
    pub inference_calls: usize,
    /// Perturbation size, for the perturbation engine.
    pub step: Option<f64>,
    pub clamps: u64,
}

impl GradResult {
    pub(crate) fn new(grad: Tables) -> Self {
        GradResult {
            grad,
            inference_calls: 0,
            step: None,
            clamps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    /// Reverse sweep over the recorded trace.
    Backprop,
    Perturbation(PerturbationConfig),
    /// Converged TRW only.
    Implicit,
}

impl Engine {
    /// Whether inference must record a trace for this engine.
    pub fn needs_trace(&self) -> bool {
        matches!(self, Engine::Backprop)
    }
}

/// Applies `engine` to a finished inference run.
pub fn loss_gradient(
    theta: &Params,
    config: &InferenceConfig,
    out: &InferenceOutput,
    dq_dmu: &Tables,
    engine: &Engine,
) -> Result<GradResult> {
    match engine {
        Engine::Backprop => {
            let trace = out.trace.as_ref().ok_or(Error::TraceMismatch(
                "inference ran without recording a trace",
            ))?;
            match &config.method {
                Method::MeanField => back_mean_field(theta, trace, &out.marginals, dq_dmu),
                Method::Trw(rho) => {
                    let rho = rho.resolve(theta.graph())?;
                    let messages = out
                        .messages
                        .as_ref()
                        .ok_or(Error::TraceMismatch("TRW output without messages"))?;
                    back_trw(theta, trace, messages, &out.marginals, dq_dmu, &rho)
                }
            }
        }
        Engine::Perturbation(p) => perturbation_grad(theta, config, dq_dmu, p),
        Engine::Implicit => match &config.method {
            Method::MeanField => Err(Error::InvalidConfig(
                "implicit differentiation applies to TRW only".into(),
            )),
            Method::Trw(rho) => {
                let rho = rho.resolve(theta.graph())?;
                implicit_diff_grad(theta, &out.marginals, dq_dmu, &rho)
            }
        },
    }
}
