//! Training losses. Everything here is minimized, so likelihoods appear
//! negated.
//!
//! Marginal-based losses ([`univ_logistic`], [`clique_logistic`],
//! [`smooth_class`], [`univ_quad`]) map marginals to a value and dQ/dμ; an
//! engine from [`crate::grad`] turns that into dL/dθ. Likelihood-style
//! losses produce dL/dθ directly. [`evaluate`] runs the whole pipeline for
//! one instance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grad::{loss_gradient, Engine};
use crate::infer::{
    approx_log_z, entropy_mf_grad, entropy_trw_grad, infer, InferenceConfig, Method, Mode,
};
use crate::model::{sufficient_stats, Graph, Labeling, Marginals, Params, Tables};
use crate::numeric::{floored, logsumexp, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SurrogateLikelihood,
    TruncatedEm,
    Pseudolikelihood,
    Piecewise,
    UnivLogistic,
    CliqueLogistic,
    SmoothClass { alpha: f64 },
    UnivQuad,
}

impl LossKind {
    /// Losses computed from marginals through dQ/dμ.
    pub fn is_marginal_based(&self) -> bool {
        matches!(
            self,
            LossKind::UnivLogistic
                | LossKind::CliqueLogistic
                | LossKind::SmoothClass { .. }
                | LossKind::UnivQuad
        )
    }

    /// Losses whose value is bounded below by zero when inference is exact.
    pub fn is_likelihood_family(&self) -> bool {
        !self.is_marginal_based()
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::SurrogateLikelihood => f.write_str("surrogate_likelihood"),
            LossKind::TruncatedEm => f.write_str("truncated_em"),
            LossKind::Pseudolikelihood => f.write_str("pseudolikelihood"),
            LossKind::Piecewise => f.write_str("piecewise"),
            LossKind::UnivLogistic => f.write_str("univ_logistic"),
            LossKind::CliqueLogistic => f.write_str("clique_logistic"),
            LossKind::SmoothClass { alpha } => write!(f, "smooth_class:alpha={alpha}"),
            LossKind::UnivQuad => f.write_str("univ_quad"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown loss `{s}`"));
        Ok(match s {
            "surrogate_likelihood" => LossKind::SurrogateLikelihood,
            "truncated_em" => LossKind::TruncatedEm,
            "pseudolikelihood" => LossKind::Pseudolikelihood,
            "piecewise" => LossKind::Piecewise,
            "univ_logistic" => LossKind::UnivLogistic,
            "clique_logistic" => LossKind::CliqueLogistic,
            "univ_quad" => LossKind::UnivQuad,
            _ => {
                let alpha = s
                    .strip_prefix("smooth_class:alpha=")
                    .ok_or_else(bad)?
                    .parse::<f64>()
                    .map_err(|_| bad())?;
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "smooth_class needs alpha > 0, got {alpha}"
                    )));
                }
                LossKind::SmoothClass { alpha }
            }
        })
    }
}

/// Value and dQ/dμ of a marginal-based loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalLoss {
    pub value: f64,
    pub dq_dmu: Tables,
    /// Target probabilities that had to be raised to the floor.
    pub clamps: u64,
}

fn check_target(mu: &Marginals, target: &Labeling) -> Result<()> {
    target.validate(mu.graph())
}

/// `−Σ_i log μ_i(x̂_i)` over observed nodes.
pub fn univ_logistic(mu: &Marginals, target: &Labeling) -> Result<MarginalLoss> {
    check_target(mu, target)?;
    let g = mu.graph().clone();
    let mut dq = Tables::zeros(&g);
    let mut value = 0.0;
    let mut clamps = 0;
    for i in 0..g.node_count() {
        if let Some(x) = target.get(i) {
            let p = floored(mu.unary(i)[x], &mut clamps);
            value -= libm::log(p);
            dq.unary_mut(i)[x] = -1.0 / p;
        }
    }
    Ok(MarginalLoss {
        value,
        dq_dmu: dq,
        clamps,
    })
}

/// `−Σ_e log μ_e(x̂_i, x̂_j)` over edges with both endpoints observed.
pub fn clique_logistic(mu: &Marginals, target: &Labeling) -> Result<MarginalLoss> {
    check_target(mu, target)?;
    let g = mu.graph().clone();
    let mut dq = Tables::zeros(&g);
    let mut value = 0.0;
    let mut clamps = 0;
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        if let (Some(a), Some(b)) = (target.get(i), target.get(j)) {
            let k = a * g.labels(j) + b;
            let p = floored(mu.edge(e)[k], &mut clamps);
            value -= libm::log(p);
            dq.edge_mut(e)[k] = -1.0 / p;
        }
    }
    Ok(MarginalLoss {
        value,
        dq_dmu: dq,
        clamps,
    })
}

/// `Σ_i S(max_{x ≠ x̂_i} μ_i(x) − μ_i(x̂_i))` with `S(t) = 1 / (1 + e^{−αt})`.
pub fn smooth_class(mu: &Marginals, target: &Labeling, alpha: f64) -> Result<MarginalLoss> {
    check_target(mu, target)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "smooth_class needs alpha > 0, got {alpha}"
        )));
    }
    let g = mu.graph().clone();
    let mut dq = Tables::zeros(&g);
    let mut value = 0.0;
    for i in 0..g.node_count() {
        let Some(x) = target.get(i) else { continue };
        let m = mu.unary(i);
        let Some((best, &pbest)) = m.iter().enumerate().filter(|&(k, _)| k != x).fold(
            None,
            |acc: Option<(usize, &f64)>, (k, p)| match acc {
                Some((_, q)) if *q >= *p => acc,
                _ => Some((k, p)),
            },
        ) else {
            continue;
        };
        let s = 1.0 / (1.0 + libm::exp(-alpha * (pbest - m[x])));
        value += s;
        let ds = alpha * s * (1.0 - s);
        dq.unary_mut(i)[best] += ds;
        dq.unary_mut(i)[x] -= ds;
    }
    Ok(MarginalLoss {
        value,
        dq_dmu: dq,
        clamps: 0,
    })
}

/// `Σ_i Σ_x (μ_i(x) − [x = x̂_i])²` over observed nodes.
pub fn univ_quad(mu: &Marginals, target: &Labeling) -> Result<MarginalLoss> {
    check_target(mu, target)?;
    let g = mu.graph().clone();
    let mut dq = Tables::zeros(&g);
    let mut value = 0.0;
    for i in 0..g.node_count() {
        let Some(x) = target.get(i) else { continue };
        let m = mu.unary(i).to_vec();
        for (k, (d, p)) in dq.unary_mut(i).iter_mut().zip(&m).enumerate() {
            let r = p - if k == x { 1.0 } else { 0.0 };
            value += r * r;
            *d = 2.0 * r;
        }
    }
    Ok(MarginalLoss {
        value,
        dq_dmu: dq,
        clamps: 0,
    })
}

/// Dispatches to the marginal-based loss named by `kind`.
pub fn marginal_loss(kind: &LossKind, mu: &Marginals, target: &Labeling) -> Result<MarginalLoss> {
    match *kind {
        LossKind::UnivLogistic => univ_logistic(mu, target),
        LossKind::CliqueLogistic => clique_logistic(mu, target),
        LossKind::SmoothClass { alpha } => smooth_class(mu, target, alpha),
        LossKind::UnivQuad => univ_quad(mu, target),
        _ => Err(Error::InvalidConfig(format!(
            "{kind} is not a marginal-based loss"
        ))),
    }
}

/// Value and parameter gradient of one loss on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Tables,
    /// Marginals the loss was computed from, when inference was run.
    pub marginals: Option<Marginals>,
    pub inference_calls: usize,
    pub clamps: u64,
}

fn entropy_grad(mu: &Marginals, method: &Method) -> Result<Tables> {
    Ok(match method {
        Method::MeanField => entropy_mf_grad(mu),
        Method::Trw(rho) => entropy_trw_grad(mu, &rho.resolve(mu.graph())?),
    })
}

fn check_engine(config: &InferenceConfig, engine: &Engine) -> Result<()> {
    if matches!(engine, Engine::Implicit) && matches!(config.mode, Mode::Truncated(_)) {
        return Err(Error::InvalidConfig(
            "implicit differentiation needs converged inference".into(),
        ));
    }
    Ok(())
}

/// Approximate log-partition function and its gradient. In converged mode
/// the gradient is the marginal vector. In truncated mode `θ·μ_N + H̃(μ_N)`
/// is differentiated exactly: `μ_N` plus the engine applied to
/// `θ + ∇H̃(μ_N)`.
fn log_partition(theta: &Params, config: &InferenceConfig, engine: &Engine) -> Result<Evaluation> {
    let truncated = matches!(config.mode, Mode::Truncated(_));
    let cfg = config.clone().with_trace(truncated && engine.needs_trace());
    let out = infer(theta, &cfg)?;
    let value = approx_log_z(theta, &out.marginals, &cfg.method)?;
    let mut grad = out.marginals.clone();
    let mut calls = 1;
    let mut clamps = out.clamps;
    if truncated {
        let mut dq = entropy_grad(&out.marginals, &cfg.method)?;
        dq.axpy(1.0, theta)?;
        let r = loss_gradient(theta, &cfg, &out, &dq, engine)?;
        grad.axpy(1.0, &r.grad)?;
        calls += r.inference_calls;
        clamps += r.clamps;
    }
    Ok(Evaluation {
        value,
        grad,
        marginals: Some(out.marginals),
        inference_calls: calls,
        clamps,
    })
}

/// `Ã(θ) − θ·f(x̂)` with gradient `μ̃ − f(x̂)` (plus the correction through
/// the unrolled inference in truncated mode). Needs a fully observed target.
pub fn surrogate_likelihood(
    theta: &Params,
    target: &Labeling,
    config: &InferenceConfig,
    engine: &Engine,
) -> Result<Evaluation> {
    check_engine(config, engine)?;
    let f = sufficient_stats(theta.graph(), target)?;
    let mut eval = log_partition(theta, config, engine)?;
    eval.value -= theta.dot(&f)?;
    eval.grad.axpy(-1.0, &f)?;
    Ok(eval)
}

/// Parameters of the model with every observed node reduced to its observed
/// label, plus the position of each clamped entry in the full layout.
pub fn clamp_params(theta: &Params, target: &Labeling) -> Result<(Params, Vec<usize>)> {
    let g = theta.graph();
    target.validate(g)?;
    let keep = |i: usize| -> Vec<usize> {
        match target.get(i) {
            Some(x) => vec![x],
            None => (0..g.labels(i)).collect(),
        }
    };
    let labels: Vec<usize> = (0..g.node_count()).map(|i| keep(i).len()).collect();
    let clamped = Graph::with_clamped_nodes(labels, g.edges().to_vec())?;
    let mut map = Vec::with_capacity(clamped.table_len());
    for i in 0..g.node_count() {
        let base = g.unary_range(i).start;
        map.extend(keep(i).into_iter().map(|a| base + a));
    }
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let base = g.edge_range(e).start;
        let lj = g.labels(j);
        let kj = keep(j);
        for a in keep(i) {
            for &b in &kj {
                map.push(base + a * lj + b);
            }
        }
    }
    let data = map.iter().map(|&k| theta.as_slice()[k]).collect();
    Ok((Tables::from_flat(&clamped, data)?, map))
}

/// `Ã(θ) − Ã(θ, z)` where the second term is computed on the model with
/// observed nodes clamped.
pub fn truncated_em(
    theta: &Params,
    target: &Labeling,
    config: &InferenceConfig,
    engine: &Engine,
) -> Result<Evaluation> {
    check_engine(config, engine)?;
    let (clamped, map) = clamp_params(theta, target)?;
    let full = log_partition(theta, config, engine)?;
    let part = log_partition(&clamped, config, engine)?;
    let mut grad = full.grad;
    for (&k, &v) in map.iter().zip(part.grad.as_slice()) {
        grad.as_mut_slice()[k] -= v;
    }
    Ok(Evaluation {
        value: full.value - part.value,
        grad,
        marginals: full.marginals,
        inference_calls: full.inference_calls + part.inference_calls,
        clamps: full.clamps + part.clamps,
    })
}

/// `−Σ_i log p(x̂_i | x̂_{−i})`, exact. Needs a fully observed target.
pub fn pseudolikelihood(theta: &Params, target: &Labeling) -> Result<Evaluation> {
    let g = theta.graph().clone();
    target.validate(&g)?;
    let x = target.to_full()?;
    let mut grad = Tables::zeros(&g);
    let mut value = 0.0;
    for i in 0..g.node_count() {
        let mut s = theta.unary(i).to_vec();
        for &e in g.incident(i) {
            let (a, b) = g.edge(e);
            let lb = g.labels(b);
            for (xi, v) in s.iter_mut().enumerate() {
                *v += if i == a {
                    theta.edge(e)[xi * lb + x[b]]
                } else {
                    theta.edge(e)[x[a] * lb + xi]
                };
            }
        }
        value -= s[x[i]] - logsumexp(&s);
        softmax_in_place(&mut s);
        s[x[i]] -= 1.0;
        for (d, v) in grad.unary_mut(i).iter_mut().zip(&s) {
            *d += v;
        }
        for &e in g.incident(i) {
            let (a, b) = g.edge(e);
            let lb = g.labels(b);
            let table = grad.edge_mut(e);
            for (xi, v) in s.iter().enumerate() {
                let k = if i == a {
                    xi * lb + x[b]
                } else {
                    x[a] * lb + xi
                };
                table[k] += v;
            }
        }
    }
    Ok(Evaluation {
        value,
        grad,
        marginals: None,
        inference_calls: 0,
        clamps: 0,
    })
}

/// `Σ_tables logsumexp(θ_table) − θ·f(x̂)` with every node and every edge
/// its own piece.
pub fn piecewise(theta: &Params, target: &Labeling) -> Result<Evaluation> {
    let g = theta.graph().clone();
    let f = sufficient_stats(&g, target)?;
    let mut grad = theta.clone();
    let mut value = -theta.dot(&f)?;
    let ranges = (0..g.node_count())
        .map(|i| g.unary_range(i))
        .chain((0..g.edge_count()).map(|e| g.edge_range(e)));
    for r in ranges {
        let table = &mut grad.as_mut_slice()[r];
        value += logsumexp(table);
        softmax_in_place(table);
    }
    grad.axpy(-1.0, &f)?;
    Ok(Evaluation {
        value,
        grad,
        marginals: None,
        inference_calls: 0,
        clamps: 0,
    })
}

/// Full per-instance pipeline: inference, loss, gradient engine.
pub fn evaluate(
    theta: &Params,
    target: &Labeling,
    kind: &LossKind,
    config: &InferenceConfig,
    engine: &Engine,
) -> Result<Evaluation> {
    match kind {
        LossKind::SurrogateLikelihood => surrogate_likelihood(theta, target, config, engine),
        LossKind::TruncatedEm => truncated_em(theta, target, config, engine),
        LossKind::Pseudolikelihood => pseudolikelihood(theta, target),
        LossKind::Piecewise => piecewise(theta, target),
        _ => {
            check_engine(config, engine)?;
            let cfg = config.clone().with_trace(engine.needs_trace());
            let out = infer(theta, &cfg)?;
            let loss = marginal_loss(kind, &out.marginals, target)?;
            let r = loss_gradient(theta, &cfg, &out, &loss.dq_dmu, engine)?;
            Ok(Evaluation {
                value: loss.value,
                grad: r.grad,
                inference_calls: 1 + r.inference_calls,
                clamps: out.clamps + loss.clamps + r.clamps,
                marginals: Some(out.marginals),
            })
        }
    }
}

/// Human-readable list of accepted loss names.
pub fn loss_names() -> String {
    String::from(
        "surrogate_likelihood, truncated_em, pseudolikelihood, piecewise, univ_logistic, \
         clique_logistic, smooth_class:alpha=<a>, univ_quad",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{brute_force, random_params};
    use crate::grad::PerturbationConfig;
    use crate::infer::{Rho, RhoAssignment};
    use alloc::string::ToString;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn one_node(p: &[f64]) -> Marginals {
        let g = Graph::new(vec![p.len()], vec![]).unwrap();
        Tables::from_flat(&g, p.to_vec()).unwrap()
    }

    #[test]
    fn univ_logistic_cases() {
        let l = univ_logistic(&one_node(&[0.8, 0.2]), &Labeling::full(&[0])).unwrap();
        assert!(close(l.value, 0.22314355131420976, 1e-12));
        assert_eq!(l.dq_dmu.as_slice(), &[-1.25, 0.0]);
        let g = Graph::chain(4, 2).unwrap();
        let l = univ_logistic(&Tables::uniform(&g), &Labeling::full(&[0, 1, 1, 0])).unwrap();
        assert!(close(l.value, 4.0 * 2f64.ln(), 1e-12));
        let l = univ_logistic(&one_node(&[1.0, 0.0]), &Labeling::full(&[0])).unwrap();
        assert_eq!(l.value, 0.0);
        let l = univ_logistic(&one_node(&[1.0, 0.0]), &Labeling::full(&[1])).unwrap();
        assert_eq!(l.clamps, 1);
        assert!(l.value.is_finite());
    }

    #[test]
    fn clique_logistic_cases() {
        let g = Graph::chain(2, 2).unwrap();
        let mu = Tables::from_parts(
            &g,
            &[vec![0.5, 0.5], vec![0.6, 0.4]],
            &[vec![0.4, 0.1, 0.2, 0.3]],
        )
        .unwrap();
        let l = clique_logistic(&mu, &Labeling::full(&[0, 0])).unwrap();
        assert!(close(l.value, 0.916290731874155, 1e-12));
        assert_eq!(l.dq_dmu.edge(0)[0], -2.5);
        let g = Graph::grid(2, 2, 2).unwrap();
        let l = clique_logistic(&Tables::uniform(&g), &Labeling::full(&[0, 1, 1, 0])).unwrap();
        assert!(close(l.value, 4.0 * 4f64.ln(), 1e-12));
        let hidden = Labeling::new(vec![Some(0), None, Some(1), Some(0)]);
        let l = clique_logistic(&Tables::uniform(&g), &hidden).unwrap();
        assert!(close(l.value, 2.0 * 4f64.ln(), 1e-12));
    }

    #[test]
    fn smooth_class_cases() {
        let l = smooth_class(&one_node(&[1.0, 0.0]), &Labeling::full(&[0]), 50.0).unwrap();
        assert!(close(l.value, 1.9287498479639178e-22, 1e-30));
        let l = smooth_class(&one_node(&[0.5, 0.5]), &Labeling::full(&[1]), 7.0).unwrap();
        assert_eq!(l.value, 0.5);
        let l = smooth_class(&one_node(&[0.3, 0.7]), &Labeling::full(&[0]), 5.0).unwrap();
        assert!(close(l.value, 0.8807970779778823, 1e-12));
        let l = smooth_class(&one_node(&[0.4, 0.3, 0.3]), &Labeling::full(&[0]), 5.0).unwrap();
        assert!(l.dq_dmu.as_slice()[1] > 0.0 && l.dq_dmu.as_slice()[2] == 0.0);
    }

    #[test]
    fn univ_quad_cases() {
        let l = univ_quad(&one_node(&[0.8, 0.2]), &Labeling::full(&[0])).unwrap();
        assert!(close(l.value, 0.08, 1e-15));
        assert!(
            close(l.dq_dmu.as_slice()[0], -0.4, 1e-15) && close(l.dq_dmu.as_slice()[1], 0.4, 1e-15)
        );
        let l = univ_quad(&one_node(&[0.5, 0.5]), &Labeling::full(&[0])).unwrap();
        assert_eq!(l.value, 0.5);
        assert_eq!(
            univ_quad(&one_node(&[0.0, 1.0]), &Labeling::full(&[1]))
                .unwrap()
                .value,
            0.0
        );
    }

    fn random_marginals(g: &alloc::sync::Arc<Graph>, rng: &mut ChaCha8Rng) -> Marginals {
        let theta = random_params(g, 1.0, 1.0, rng);
        brute_force(&theta).unwrap().marginals
    }

    #[test]
    fn marginal_loss_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Graph::grid(2, 3, 3).unwrap();
        let mu = random_marginals(&g, &mut rng);
        let target = Labeling::new(
            (0..6)
                .map(|i| (i != 4).then(|| rng.random_range(0..3)))
                .collect(),
        );
        for kind in [
            LossKind::UnivLogistic,
            LossKind::CliqueLogistic,
            LossKind::SmoothClass { alpha: 15.0 },
            LossKind::UnivQuad,
        ] {
            let l = marginal_loss(&kind, &mu, &target).unwrap();
            let h = 1e-7;
            for k in 0..g.table_len() {
                let mut p = mu.clone();
                p.as_mut_slice()[k] += h;
                let mut m = mu.clone();
                m.as_mut_slice()[k] -= h;
                let fd = (marginal_loss(&kind, &p, &target).unwrap().value
                    - marginal_loss(&kind, &m, &target).unwrap().value)
                    / (2.0 * h);
                assert!(
                    close(fd, l.dq_dmu.as_slice()[k], 1e-5 * (1.0 + fd.abs())),
                    "{kind} entry {k}"
                );
            }
            for k in g.unary_range(4) {
                assert_eq!(l.dq_dmu.as_slice()[k], 0.0);
            }
        }
    }

    #[test]
    fn univ_logistic_is_kl_up_to_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Graph::chain(3, 3).unwrap();
        let target = Labeling::full(&[2, 0, 1]);
        let kl = |mu: &Marginals| -> f64 {
            (0..3)
                .map(|i| -mu.unary(i)[target.get(i).unwrap()].ln())
                .sum()
        };
        let a = random_marginals(&g, &mut rng);
        let b = random_marginals(&g, &mut rng);
        let da =
            univ_logistic(&a, &target).unwrap().value - univ_logistic(&b, &target).unwrap().value;
        assert!(close(da, kl(&a) - kl(&b), 1e-12));
    }

    fn exact_nll(theta: &Params, x: &[usize]) -> f64 {
        let f = sufficient_stats(theta.graph(), &Labeling::full(x)).unwrap();
        brute_force(theta).unwrap().log_z - theta.dot(&f).unwrap()
    }

    fn fd_grad(theta: &Params, f: impl Fn(&Params) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..theta.as_slice().len())
            .map(|k| {
                let mut p = theta.clone();
                p.as_mut_slice()[k] += h;
                let mut m = theta.clone();
                m.as_mut_slice()[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn surrogate_likelihood_on_isolated_nodes_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Graph::new(vec![2, 2, 3], vec![]).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let x = [1, 0, 2];
        let cfg = InferenceConfig::mean_field(Mode::Converged {
            threshold: 1e-14,
            max_iters: 50,
        });
        let e = surrogate_likelihood(&theta, &Labeling::full(&x), &cfg, &Engine::Backprop).unwrap();
        assert!(close(e.value, exact_nll(&theta, &x), 1e-12));
        let fd = fd_grad(&theta, |t| exact_nll(t, &x));
        for (a, b) in e.grad.as_slice().iter().zip(&fd) {
            assert!(close(*a, *b, 1e-7));
        }
    }

    #[test]
    fn surrogate_likelihood_trw_upper_bounds_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = Graph::grid(2, 2, 2).unwrap();
        let rho = RhoAssignment::grid_combs(2, 2).unwrap();
        let cfg = InferenceConfig::trw(
            rho.spec(),
            Mode::Converged {
                threshold: 1e-12,
                max_iters: 5000,
            },
        );
        for _ in 0..5 {
            let theta = random_params(&g, 1.0, 1.0, &mut rng);
            let x = [
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(0..2),
                1,
            ];
            let e =
                surrogate_likelihood(&theta, &Labeling::full(&x), &cfg, &Engine::Backprop).unwrap();
            assert!(e.value >= exact_nll(&theta, &x) - 1e-8);
        }
    }

    #[test]
    fn surrogate_gradient_vanishes_at_moment_match() {
        // With θ = 0 on isolated nodes the marginals are uniform; a pair of
        // targets whose average statistics are uniform gives a zero sum.
        let g = Graph::new(vec![2, 2], vec![]).unwrap();
        let theta = Tables::zeros(&g);
        let cfg = InferenceConfig::mean_field(Mode::Converged {
            threshold: 1e-14,
            max_iters: 10,
        });
        let mut total = Tables::zeros(&g);
        for x in [[0, 1], [1, 0]] {
            let e =
                surrogate_likelihood(&theta, &Labeling::full(&x), &cfg, &Engine::Backprop).unwrap();
            total.axpy(1.0, &e.grad).unwrap();
        }
        assert!(total.max_abs() < 1e-15);
    }

    #[test]
    fn truncated_surrogate_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Graph::grid(3, 3, 2).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let x: Vec<usize> = (0..9).map(|_| rng.random_range(0..2)).collect();
        let target = Labeling::full(&x);
        let hidden = Labeling::new(
            x.iter()
                .enumerate()
                .map(|(i, &v)| (i % 3 != 1).then_some(v))
                .collect(),
        );
        for cfg in [
            InferenceConfig::mean_field(Mode::Truncated(3)),
            InferenceConfig::trw(Rho::Uniform(0.5), Mode::Truncated(3)),
        ] {
            for (kind, t) in [
                (LossKind::SurrogateLikelihood, &target),
                (LossKind::TruncatedEm, &hidden),
            ] {
                let e = evaluate(&theta, t, &kind, &cfg, &Engine::Backprop).unwrap();
                let fd = fd_grad(&theta, |p| {
                    evaluate(p, t, &kind, &cfg, &Engine::Backprop)
                        .unwrap()
                        .value
                });
                for (a, b) in e.grad.as_slice().iter().zip(&fd) {
                    assert!(close(*a, *b, 1e-6), "{kind}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn truncated_em_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Graph::grid(2, 2, 3).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let cfg = InferenceConfig::trw(
            Rho::Uniform(0.5),
            Mode::Converged {
                threshold: 1e-12,
                max_iters: 5000,
            },
        );
        let none = Labeling::new(vec![None; 4]);
        let e = truncated_em(&theta, &none, &cfg, &Engine::Backprop).unwrap();
        assert!(e.value.abs() < 1e-12 && e.grad.max_abs() < 1e-12);
        let full = Labeling::full(&[0, 2, 1, 1]);
        let em = truncated_em(&theta, &full, &cfg, &Engine::Backprop).unwrap();
        let sl = surrogate_likelihood(&theta, &full, &cfg, &Engine::Backprop).unwrap();
        assert!(close(em.value, sl.value, 1e-10));
        for (a, b) in em.grad.as_slice().iter().zip(sl.grad.as_slice()) {
            assert!(close(*a, *b, 1e-10));
        }
    }

    #[test]
    fn truncated_em_matches_brute_force_on_a_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = Graph::chain(3, 2).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let target = Labeling::new(vec![Some(1), None, Some(0)]);
        let cfg = InferenceConfig::trw(
            Rho::Uniform(1.0),
            Mode::Converged {
                threshold: 1e-13,
                max_iters: 100,
            },
        );
        let e = truncated_em(&theta, &target, &cfg, &Engine::Backprop).unwrap();
        let log_z = brute_force(&theta).unwrap().log_z;
        let clamped: Vec<f64> = (0..2)
            .map(|z| {
                let f = sufficient_stats(&g, &Labeling::full(&[1, z, 0])).unwrap();
                theta.dot(&f).unwrap()
            })
            .collect();
        assert!(close(e.value, log_z - logsumexp(&clamped), 1e-6));
    }

    #[test]
    fn pseudolikelihood_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = Graph::new(vec![2, 3], vec![]).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let pl = pseudolikelihood(&theta, &Labeling::full(&[1, 2])).unwrap();
        assert!(close(pl.value, exact_nll(&theta, &[1, 2]), 1e-12));

        let g = Graph::chain(2, 2).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let x = [1, 0];
        let p = |a: usize, b: usize| {
            let f = sufficient_stats(&g, &Labeling::full(&[a, b])).unwrap();
            theta.dot(&f).unwrap()
        };
        let first = p(1, 0) - logsumexp(&[p(0, 0), p(1, 0)]);
        let second = p(1, 0) - logsumexp(&[p(1, 0), p(1, 1)]);
        let pl = pseudolikelihood(&theta, &Labeling::full(&x)).unwrap();
        assert!(close(pl.value, -first - second, 1e-12));

        let g = Graph::grid(3, 3, 3).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let x: Vec<usize> = (0..9).map(|_| rng.random_range(0..3)).collect();
        let t = Labeling::full(&x);
        let pl = pseudolikelihood(&theta, &t).unwrap();
        let fd = fd_grad(&theta, |p| pseudolikelihood(p, &t).unwrap().value);
        for (a, b) in pl.grad.as_slice().iter().zip(&fd) {
            assert!(close(*a, *b, 1e-6));
        }
        assert!(matches!(
            pseudolikelihood(&theta, &Labeling::new(vec![None; 9])),
            Err(Error::HiddenLabel { .. })
        ));
    }

    #[test]
    fn piecewise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = Graph::new(vec![3, 2], vec![]).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let pw = piecewise(&theta, &Labeling::full(&[2, 0])).unwrap();
        assert!(close(pw.value, exact_nll(&theta, &[2, 0]), 1e-12));
        let g = Graph::grid(3, 3, 2).unwrap();
        for _ in 0..5 {
            let theta = random_params(&g, 1.0, 2.0, &mut rng);
            let x: Vec<usize> = (0..9).map(|_| rng.random_range(0..2)).collect();
            let t = Labeling::full(&x);
            let pw = piecewise(&theta, &t).unwrap();
            assert!(pw.value >= exact_nll(&theta, &x) - 1e-12);
            let fd = fd_grad(&theta, |p| piecewise(p, &t).unwrap().value);
            for (a, b) in pw.grad.as_slice().iter().zip(&fd) {
                assert!(close(*a, *b, 1e-6));
            }
        }
    }

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
            assert_eq!(s.parse::<LossKind>().unwrap().to_string(), s);
        }
        assert!("smooth_class".parse::<LossKind>().is_err());
        assert!("smooth_class:alpha=-1".parse::<LossKind>().is_err());
        assert!("likelihood".parse::<LossKind>().is_err());
    }

    #[test]
    fn implicit_needs_converged_inference() {
        let g = Graph::chain(2, 2).unwrap();
        let theta = Tables::zeros(&g);
        let cfg = InferenceConfig::trw(Rho::Uniform(1.0), Mode::Truncated(2));
        let t = Labeling::full(&[0, 1]);
        assert!(evaluate(&theta, &t, &LossKind::UnivLogistic, &cfg, &Engine::Implicit).is_err());
        let p = Engine::Perturbation(PerturbationConfig::default());
        assert!(evaluate(&theta, &t, &LossKind::UnivLogistic, &cfg, &p).is_ok());
    }
}
