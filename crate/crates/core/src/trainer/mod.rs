//! Conditional-model training: linear feature parametrization, empirical
//! risk over a dataset and L-BFGS minimization.
//!
//! The optimizer minimizes `R(γ) / N_obs` where
//! `R(γ) = Σ_instances L + λ N_obs ‖γ‖²` and `N_obs` is the number of
//! observed nodes in the dataset, so λ is relative to a per-node risk.

mod features;
pub mod lbfgs;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

pub use features::{FeatureModel, Instance};
pub use lbfgs::{LbfgsConfig, Status};

use crate::error::{Error, Result};
use crate::exact::{hamming_error, mpm_decide};
use crate::grad::Engine;
use crate::infer::{infer, InferenceConfig, Mode};
use crate::losses::{evaluate, LossKind};

/// Per-instance result of the risk pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub inference_calls: usize,
    pub clamps: u64,
}

impl InstanceEval {
    pub fn zero(width: usize) -> Self {
        InstanceEval {
            value: 0.0,
            grad: vec![0.0; width],
            inference_calls: 0,
            clamps: 0,
        }
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &InstanceEval) {
        self.value += other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
        self.inference_calls += other.inference_calls;
        self.clamps += other.clamps;
    }
}

/// Runs independent per-instance jobs.
pub trait Executor {
    /// Results in index order.
    fn map(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<InstanceEval> + Sync),
    ) -> Vec<Result<InstanceEval>>;

    /// Sum of all results, each with a gradient of length `width`. The
    /// default adds them up in index order, which makes the result
    /// independent of scheduling.
    fn sum(
        &self,
        count: usize,
        width: usize,
        job: &(dyn Fn(usize) -> Result<InstanceEval> + Sync),
    ) -> Result<InstanceEval> {
        let mut total = InstanceEval::zero(width);
        for r in self.map(count, job) {
            total.accumulate(&r?);
        }
        Ok(total)
    }
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<InstanceEval> + Sync),
    ) -> Vec<Result<InstanceEval>> {
        (0..count).map(job).collect()
    }
}

/// Wall-clock source, in seconds since an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    /// Fit the independent model first and start from it.
    Independent,
    /// Fit the surrogate likelihood (truncated EM when some labels are
    /// hidden) from the independent model with the same inference, and start
    /// from that.
    Surrogate,
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub inference: InferenceConfig,
    pub engine: Engine,
    pub lambda: f64,
    pub optimizer: LbfgsConfig,
    pub init: Init,
    /// Hold the edge weights `G` at their initial value.
    pub freeze_edges: bool,
}

impl TrainConfig {
    pub fn new(loss: LossKind, inference: InferenceConfig, engine: Engine) -> Self {
        TrainConfig {
            loss,
            inference,
            engine,
            lambda: 0.0,
            optimizer: LbfgsConfig::default(),
            init: Init::Zero,
            freeze_edges: false,
        }
    }

    /// Unary-only model trained with the univariate logistic loss. Edge
    /// weights stay at zero, so one mean-field sweep gives exact marginals.
    pub fn independent(lambda: f64, optimizer: LbfgsConfig) -> Self {
        TrainConfig {
            loss: LossKind::UnivLogistic,
            inference: InferenceConfig::mean_field(Mode::Truncated(1)),
            engine: Engine::Backprop,
            lambda,
            optimizer,
            init: Init::Zero,
            freeze_edges: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        self.inference.validate()
    }
}

/// Risk value and gradient with respect to the flat weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Risk {
    /// `Σ L + λ N_obs ‖γ‖²`.
    pub value: f64,
    pub grad: Vec<f64>,
    pub observed: usize,
    pub inference_calls: usize,
    pub clamps: u64,
}

/// Sums the per-instance pipeline over `data` with `exec` and adds the
/// ridge term.
pub fn empirical_risk(
    fm: &FeatureModel,
    data: &[Instance],
    config: &TrainConfig,
    exec: &dyn Executor,
) -> Result<Risk> {
    let observed: usize = data.iter().map(|d| d.target.observed_count()).sum();
    let job = |k: usize| -> Result<InstanceEval> {
        let inst = &data[k];
        let theta = fm.build_theta(inst)?;
        let e = evaluate(
            &theta,
            &inst.target,
            &config.loss,
            &config.inference,
            &config.engine,
        )?;
        Ok(InstanceEval {
            value: e.value,
            grad: fm.backprop_features(&e.grad, inst)?,
            inference_calls: e.inference_calls,
            clamps: e.clamps,
        })
    };
    let total = exec.sum(data.len(), fm.weights.len(), &job)?;
    let mut risk = Risk {
        value: total.value,
        grad: total.grad,
        observed,
        inference_calls: total.inference_calls,
        clamps: total.clamps,
    };
    if config.lambda > 0.0 {
        let scale = config.lambda * observed as f64;
        risk.value += scale * fm.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in risk.grad.iter_mut().zip(&fm.weights) {
            *g += 2.0 * scale * w;
        }
    }
    Ok(risk)
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Risk per observed node, the quantity being minimized.
    pub risk: f64,
    pub grad_norm: f64,
    /// Seconds since training started.
    pub wall_time: f64,
    /// Cumulative inference runs.
    pub inference_calls: usize,
    pub restarted: bool,
    /// Model weights at this iterate.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Divergence {
    /// Likelihood-family risk went below zero, which no exact likelihood can.
    NegativeLikelihood { iteration: usize, risk: f64 },
    /// An accepted step raised the risk.
    RiskIncrease {
        iteration: usize,
        before: f64,
        after: f64,
    },
    /// The optimizer could not find a finite descent step.
    LineSearchFailure { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: FeatureModel,
    pub history: Vec<HistoryEntry>,
    pub status: Status,
    pub divergence: Option<Divergence>,
    pub risk: f64,
}

/// Progress callback, invoked for every history row as it is produced.
pub type Observer<'a> = Box<dyn FnMut(&HistoryEntry) + 'a>;

/// Fits `fm0` to `data`. The returned model is the last accepted iterate,
/// whose risk is never above the initial one.
pub fn train(
    fm0: &FeatureModel,
    data: &[Instance],
    config: &TrainConfig,
    exec: &dyn Executor,
    clock: &dyn Clock,
    mut observer: Option<Observer<'_>>,
) -> Result<TrainOutput> {
    config.validate()?;
    for inst in data {
        fm0.check(inst)?;
    }
    let mut start = fm0.clone();
    match &config.init {
        Init::Zero => start.weights.fill(0.0),
        Init::Weights(w) => {
            if w.len() != start.weights.len() {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "initial weights have {} entries, model needs {}",
                    w.len(),
                    start.weights.len()
                )));
            }
            start.weights.copy_from_slice(w);
        }
        Init::Independent => {
            let ind = TrainConfig::independent(config.lambda, config.optimizer);
            let fit = train(fm0, data, &ind, exec, clock, None)?;
            start = fit.model;
        }
        Init::Surrogate => {
            let hidden = data.iter().any(|d| !d.target.is_fully_observed());
            let pre = TrainConfig {
                loss: if hidden {
                    LossKind::TruncatedEm
                } else {
                    LossKind::SurrogateLikelihood
                },
                init: Init::Independent,
                freeze_edges: false,
                ..config.clone()
            };
            start = train(fm0, data, &pre, exec, clock, None)?.model;
        }
    }
    let observed: usize = data.iter().map(|d| d.target.observed_count()).sum();
    let norm = if observed > 0 {
        1.0 / observed as f64
    } else {
        1.0
    };
    let frozen = config.freeze_edges.then(|| start.edge_weight_range());
    let fixed = start.weights.clone();
    let t0 = clock.now();
    let calls = Cell::new(0usize);
    let objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut fm = start.clone();
        fm.weights.copy_from_slice(w);
        if let Some(r) = &frozen {
            fm.weights[r.clone()].copy_from_slice(&fixed[r.clone()]);
        }
        let risk = empirical_risk(&fm, data, config, exec)?;
        calls.set(calls.get() + risk.inference_calls);
        let mut g: Vec<f64> = risk.grad.iter().map(|v| v * norm).collect();
        if let Some(r) = &frozen {
            g[r.clone()].fill(0.0);
        }
        Ok((risk.value * norm, g))
    };
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut divergence = None;
    let likelihood = config.loss.is_likelihood_family();
    let on_step = |s: &lbfgs::Step<'_>| {
        if likelihood && s.value < 0.0 && divergence.is_none() {
            divergence = Some(Divergence::NegativeLikelihood {
                iteration: s.iteration,
                risk: s.value,
            });
        }
        if let Some(p) = history.last().map(|h| h.risk) {
            if s.value > p && divergence.is_none() {
                divergence = Some(Divergence::RiskIncrease {
                    iteration: s.iteration,
                    before: p,
                    after: s.value,
                });
            }
        }
        let entry = HistoryEntry {
            iteration: s.iteration,
            risk: s.value,
            grad_norm: s.grad_norm,
            wall_time: clock.now() - t0,
            inference_calls: calls.get(),
            restarted: s.restarted,
            weights: s.x.to_vec(),
        };
        if let Some(o) = observer.as_mut() {
            o(&entry);
        }
        history.push(entry);
    };
    let result = match lbfgs::minimize(start.weights.clone(), objective, &config.optimizer, on_step)
    {
        Ok(r) => r,
        Err(e) if history.is_empty() => {
            return Err(match e {
                Error::NonFinite(_) => Error::NonFiniteInitialRisk,
                other => other,
            })
        }
        Err(e) => return Err(e),
    };
    if !result.value.is_finite() {
        return Err(Error::NonFiniteInitialRisk);
    }
    if result.status == Status::LineSearchFailed && divergence.is_none() {
        divergence = Some(Divergence::LineSearchFailure {
            iteration: result.iterations,
        });
    }
    let mut model = start;
    model.weights = result.x;
    Ok(TrainOutput {
        model,
        history,
        status: result.status,
        divergence,
        risk: result.value,
    })
}

/// Loss and Hamming error of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean loss per observed node (no ridge term).
    pub loss: f64,
    /// Fraction of observed nodes whose MPM label is wrong.
    pub hamming_error: f64,
    pub instances: usize,
}

/// Evaluates `loss` and the MPM Hamming error of `fm` on `data`.
pub fn evaluate_model(
    fm: &FeatureModel,
    data: &[Instance],
    loss: &LossKind,
    inference: &InferenceConfig,
    exec: &dyn Executor,
) -> Result<Metrics> {
    let job = |k: usize| -> Result<InstanceEval> {
        let inst = &data[k];
        let theta = fm.build_theta(inst)?;
        let out = infer(&theta, &inference.clone().with_trace(false))?;
        let pred = mpm_decide(&out.marginals);
        let errors = hamming_error(&pred, &inst.target)? * inst.target.observed_count() as f64;
        let value = evaluate(&theta, &inst.target, loss, inference, &Engine::Backprop)?.value;
        Ok(InstanceEval {
            value,
            grad: vec![errors],
            inference_calls: 0,
            clamps: 0,
        })
    };
    let observed: usize = data.iter().map(|d| d.target.observed_count()).sum();
    let total = exec.sum(data.len(), 1, &job)?;
    let denom = observed.max(1) as f64;
    Ok(Metrics {
        loss: total.value / denom,
        hamming_error: total.grad[0] / denom,
        instances: data.len(),
    })
}

/// Short description of a divergence, for logs.
pub fn describe(d: &Divergence) -> String {
    match d {
        Divergence::NegativeLikelihood { iteration, risk } => {
            alloc::format!("likelihood risk {risk} below zero at iteration {iteration}")
        }
        Divergence::RiskIncrease {
            iteration,
            before,
            after,
        } => {
            alloc::format!("risk rose from {before} to {after} at iteration {iteration}")
        }
        Divergence::LineSearchFailure { iteration } => {
            alloc::format!("no descent step found after iteration {iteration}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::PerturbationConfig;
    use crate::infer::Rho;
    use crate::model::{Graph, Labeling};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_instance(rng: &mut ChaCha8Rng, hidden: bool) -> Instance {
        let g = Graph::grid(3, 3, 2).unwrap();
        let u: Vec<f64> = (0..9)
            .flat_map(|_| [1.0, rng.random_range(-1.0..1.0)])
            .collect();
        let v: Vec<f64> = (0..g.edge_count())
            .flat_map(|e| if e % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let x = (0..9)
            .map(|i| (!hidden || i % 4 != 1).then(|| rng.random_range(0..2)))
            .collect();
        Instance::new(g, u, v, Labeling::new(x)).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng) -> FeatureModel {
        let mut fm = FeatureModel::zeros(2, 2, 2);
        for w in fm.weights.iter_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        fm
    }

    #[test]
    fn empty_dataset_has_zero_risk() {
        let fm = FeatureModel::zeros(2, 2, 2);
        let cfg = TrainConfig::new(
            LossKind::UnivLogistic,
            InferenceConfig::mean_field(Mode::Truncated(2)),
            Engine::Backprop,
        );
        let r = empirical_risk(&fm, &[], &cfg, &Sequential).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn risk_is_additive_over_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = grid_instance(&mut rng, false);
        let fm = random_model(&mut rng);
        let cfg = TrainConfig::new(
            LossKind::CliqueLogistic,
            InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(3)),
            Engine::Backprop,
        );
        let one = empirical_risk(&fm, core::slice::from_ref(&inst), &cfg, &Sequential).unwrap();
        let two = empirical_risk(&fm, &[inst.clone(), inst], &cfg, &Sequential).unwrap();
        assert_eq!(two.value, 2.0 * one.value);
        for (a, b) in two.grad.iter().zip(&one.grad) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn risk_gradient_matches_differences_for_every_loss_and_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = [
            grid_instance(&mut rng, false),
            grid_instance(&mut rng, false),
        ];
        let partial = [grid_instance(&mut rng, true), grid_instance(&mut rng, true)];
        let fm = random_model(&mut rng);
        let losses = [
            LossKind::UnivLogistic,
            LossKind::CliqueLogistic,
            LossKind::SmoothClass { alpha: 5.0 },
            LossKind::UnivQuad,
            LossKind::SurrogateLikelihood,
            LossKind::TruncatedEm,
            LossKind::Pseudolikelihood,
            LossKind::Piecewise,
        ];
        let converged = InferenceConfig::trw(
            Rho::Uniform(0.5),
            Mode::Converged {
                threshold: 1e-12,
                max_iters: 10_000,
            },
        );
        let mut runs = Vec::new();
        for n in [1, 5] {
            runs.push((
                InferenceConfig::mean_field(Mode::Truncated(n)),
                Engine::Backprop,
            ));
            runs.push((
                InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(n)),
                Engine::Backprop,
            ));
        }
        runs.push((
            converged.clone(),
            Engine::Perturbation(PerturbationConfig::default()),
        ));
        runs.push((converged, Engine::Implicit));
        for (method, engine) in runs {
            for loss in losses {
                if !matches!(engine, Engine::Backprop) && !loss.is_marginal_based() {
                    continue;
                }
                let data: &[Instance] = if loss == LossKind::TruncatedEm {
                    &partial
                } else {
                    &full
                };
                let mut cfg = TrainConfig::new(loss, method.clone(), engine);
                cfg.lambda = 0.01;
                let r = empirical_risk(&fm, data, &cfg, &Sequential).unwrap();
                let h = 1e-6;
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..fm.weights.len() {
                    let mut p = fm.clone();
                    p.weights[k] += h;
                    let mut m = fm.clone();
                    m.weights[k] -= h;
                    let fd = (empirical_risk(&p, data, &cfg, &Sequential).unwrap().value
                        - empirical_risk(&m, data, &cfg, &Sequential).unwrap().value)
                        / (2.0 * h);
                    num += (fd - r.grad[k]).powi(2);
                    den += fd * fd;
                }
                let tol = if matches!(engine, Engine::Backprop) {
                    1e-4
                } else {
                    1e-3
                };
                assert!(
                    (num / den).sqrt() < tol,
                    "{loss} {engine:?} {:?}: {}",
                    method.mode,
                    (num / den).sqrt()
                );
            }
        }
    }

    #[test]
    fn hidden_labels_do_not_affect_marginal_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = grid_instance(&mut rng, true);
        let fm = random_model(&mut rng);
        for loss in [
            LossKind::UnivLogistic,
            LossKind::CliqueLogistic,
            LossKind::UnivQuad,
            LossKind::SmoothClass { alpha: 15.0 },
        ] {
            let cfg = TrainConfig::new(
                loss,
                InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(4)),
                Engine::Backprop,
            );
            let a = empirical_risk(&fm, core::slice::from_ref(&inst), &cfg, &Sequential).unwrap();
            // Hidden nodes carry no label at all; observing nothing extra must
            // leave the gradient bit-identical however they are stored.
            let mut other = inst.clone();
            other.target = Labeling::new(inst.target.as_slice().to_vec());
            let b = empirical_risk(&fm, &[other], &cfg, &Sequential).unwrap();
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn recovers_logistic_regression() {
        let g = Graph::new(vec![3; 5], vec![]).unwrap();
        let labels = [[0, 1, 1, 2, 1], [1, 1, 0, 2, 1]];
        let data: Vec<Instance> = labels
            .iter()
            .map(|x| Instance::new(g.clone(), vec![1.0; 5], vec![], Labeling::full(x)).unwrap())
            .collect();
        let mut cfg = TrainConfig::new(
            LossKind::UnivLogistic,
            InferenceConfig::mean_field(Mode::Truncated(1)),
            Engine::Backprop,
        );
        cfg.optimizer.grad_tol = 1e-9;
        cfg.optimizer.f_tol = 0.0;
        let out = train(
            &FeatureModel::zeros(3, 1, 1),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            None,
        )
        .unwrap();
        let final_grad = empirical_risk(&out.model, &data, &cfg, &Sequential).unwrap();
        assert!(final_grad.grad.iter().map(|v| v * v).sum::<f64>().sqrt() / 10.0 < 1e-6);
        let mut p = out.model.f().to_vec();
        crate::numeric::softmax_in_place(&mut p);
        for (got, want) in p.iter().zip([0.2, 0.6, 0.2]) {
            assert!((got - want).abs() < 1e-6);
        }
        assert!(out.history.windows(2).all(|w| w[1].risk <= w[0].risk));
    }

    #[test]
    fn heavy_ridge_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = [
            grid_instance(&mut rng, false),
            grid_instance(&mut rng, false),
        ];
        let mut cfg = TrainConfig::new(
            LossKind::UnivLogistic,
            InferenceConfig::mean_field(Mode::Truncated(2)),
            Engine::Backprop,
        );
        cfg.lambda = 1e6;
        let out = train(
            &FeatureModel::zeros(2, 2, 2),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            None,
        )
        .unwrap();
        assert!(out.model.weights.iter().all(|w| w.abs() < 1e-5));
    }

    #[test]
    fn frozen_edges_stay_put_and_history_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = [
            grid_instance(&mut rng, false),
            grid_instance(&mut rng, true),
        ];
        let mut cfg = TrainConfig::independent(
            0.0,
            LbfgsConfig {
                max_iters: 20,
                ..Default::default()
            },
        );
        cfg.init = Init::Zero;
        let out = train(
            &FeatureModel::zeros(2, 2, 2),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            None,
        )
        .unwrap();
        assert!(out.model.g().iter().all(|&w| w == 0.0));
        assert!(out.history.windows(2).all(|w| w[1].risk <= w[0].risk));
        assert!(out.divergence.is_none());

        let mut cfg = TrainConfig::new(
            LossKind::UnivLogistic,
            InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(3)),
            Engine::Backprop,
        );
        cfg.optimizer.max_iters = 5;
        cfg.init = Init::Independent;
        let mut rows = 0;
        let out = train(
            &FeatureModel::zeros(2, 2, 2),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            Some(Box::new(|_: &HistoryEntry| rows += 1)),
        )
        .unwrap();
        assert_eq!(rows, out.history.len());
        assert!(out.history.windows(2).all(|w| w[1].risk <= w[0].risk));
        assert!(out
            .history
            .windows(2)
            .all(|w| w[1].inference_calls >= w[0].inference_calls));
    }

    #[test]
    fn surrogate_init_is_a_two_stage_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = [
            grid_instance(&mut rng, false),
            grid_instance(&mut rng, false),
        ];
        let inference = InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(3));
        let mut cfg = TrainConfig::new(
            LossKind::SmoothClass { alpha: 5.0 },
            inference.clone(),
            Engine::Backprop,
        );
        cfg.optimizer.max_iters = 3;
        cfg.init = Init::Surrogate;
        let fm = FeatureModel::zeros(2, 2, 2);
        let out = train(&fm, &data, &cfg, &Sequential, &NoClock, None).unwrap();

        let mut pre = TrainConfig::new(LossKind::SurrogateLikelihood, inference, Engine::Backprop);
        pre.optimizer.max_iters = 3;
        pre.init = Init::Independent;
        let start = train(&fm, &data, &pre, &Sequential, &NoClock, None)
            .unwrap()
            .model;
        cfg.init = Init::Weights(start.weights.clone());
        let manual = train(&fm, &data, &cfg, &Sequential, &NoClock, None).unwrap();
        assert_eq!(out.model, manual.model);
        assert_ne!(start.weights, vec![0.0; 12]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = [grid_instance(&mut rng, false)];
        let mut cfg = TrainConfig::new(
            LossKind::UnivLogistic,
            InferenceConfig::mean_field(Mode::Truncated(1)),
            Engine::Backprop,
        );
        cfg.lambda = -1.0;
        assert!(train(
            &FeatureModel::zeros(2, 2, 2),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            None
        )
        .is_err());
        cfg.lambda = 0.0;
        cfg.init = Init::Weights(vec![f64::INFINITY; 12]);
        assert_eq!(
            train(
                &FeatureModel::zeros(2, 2, 2),
                &data,
                &cfg,
                &Sequential,
                &NoClock,
                None
            )
            .unwrap_err(),
            Error::NonFiniteInitialRisk
        );
        cfg.init = Init::Weights(vec![0.0; 3]);
        assert!(train(
            &FeatureModel::zeros(2, 2, 2),
            &data,
            &cfg,
            &Sequential,
            &NoClock,
            None
        )
        .is_err());
    }

    #[test]
    fn evaluation_counts_errors_on_observed_nodes() {
        let g = Graph::new(vec![2; 4], vec![]).unwrap();
        let inst = Instance::new(
            g,
            vec![1.0; 4],
            vec![],
            Labeling::new(vec![Some(0), Some(1), None, Some(0)]),
        )
        .unwrap();
        let fm = FeatureModel::from_parts(2, 1, 1, &[1.0, 0.0], &[0.0; 4]).unwrap();
        let m = evaluate_model(
            &fm,
            &[inst],
            &LossKind::UnivLogistic,
            &InferenceConfig::mean_field(Mode::Truncated(1)),
            &Sequential,
        )
        .unwrap();
        assert!((m.hamming_error - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.instances, 1);
    }
}
