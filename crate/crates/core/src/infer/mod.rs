//! Approximate marginal inference.
//!
//! Two variational methods are provided: naive mean field (coordinate ascent
//! over fully factorized distributions, a lower bound on the log-partition
//! function) and tree-reweighted belief propagation (local polytope plus the
//! reweighted entropy, an upper bound when the edge weights ρ come from a
//! distribution over spanning trees). TRW with ρ = 1 everywhere is loopy BP.
//!
//! Both can run for a fixed number of sweeps ([`Mode::Truncated`]) or until
//! the largest change of any node marginal over one sweep drops below a
//! threshold ([`Mode::Converged`]). When asked to, they record an
//! [`InferenceTrace`] holding every table as it was just before it was
//! overwritten; the reverse sweeps in [`crate::grad`] consume it.

mod mean_field;
mod rho;
mod trw;

use alloc::sync::Arc;
use alloc::vec::Vec;

pub use mean_field::mean_field;
pub use rho::RhoAssignment;
pub(crate) use trw::{slot_of, slot_parts, TrwState};
pub use trw::{trw, trw_from, MessageSet};

use crate::error::{Error, Result};
use crate::model::{Graph, Marginals, Params, Tables};
use crate::numeric::{xlogx, FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    MeanField,
    Trw(Rho),
}

/// Edge appearance probabilities, either one value for every edge or an
/// explicit per-edge vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Rho {
    Uniform(f64),
    PerEdge(Arc<Vec<f64>>),
}

impl Rho {
    /// Per-edge values for `graph`, validated to lie in (0, 1].
    pub fn resolve(&self, graph: &Graph) -> Result<Vec<f64>> {
        let values = match self {
            Rho::Uniform(v) => alloc::vec![*v; graph.edge_count()],
            Rho::PerEdge(v) => {
                if v.len() != graph.edge_count() {
                    return Err(Error::InvalidRho(alloc::format!(
                        "{} values for {} edges",
                        v.len(),
                        graph.edge_count()
                    )));
                }
                v.as_ref().clone()
            }
        };
        if let Some(bad) = values.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidRho(alloc::format!("{bad} is outside (0, 1]")));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Exactly this many sweeps.
    Truncated(usize),
    /// Sweep until the largest node-marginal change in a sweep is below
    /// `threshold`, or `max_iters` sweeps have run.
    Converged { threshold: f64, max_iters: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub method: Method,
    pub mode: Mode,
    /// Record the pre-update stack needed by the reverse sweeps.
    pub record_trace: bool,
}

impl InferenceConfig {
    pub fn mean_field(mode: Mode) -> Self {
        InferenceConfig {
            method: Method::MeanField,
            mode,
            record_trace: matches!(mode, Mode::Truncated(_)),
        }
    }

    pub fn trw(rho: Rho, mode: Mode) -> Self {
        InferenceConfig {
            method: Method::Trw(rho),
            mode,
            record_trace: matches!(mode, Mode::Truncated(_)),
        }
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Mode::Converged { threshold, .. } = self.mode {
            if !(threshold > 0.0) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "convergence threshold must be positive, got {threshold}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    MeanField,
    Trw,
}

/// Pre-update stack recorded during a forward run.
///
/// `updates[k]` is the node (mean field) or message slot (TRW) written by
/// the `k`-th update and `saved` holds the overwritten tables back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub kind: TraceKind,
    pub graph: Arc<Graph>,
    pub updates: Vec<usize>,
    pub saved: Vec<f64>,
    pub sweeps: usize,
}

impl InferenceTrace {
    pub(crate) fn new(kind: TraceKind, graph: &Arc<Graph>) -> Self {
        InferenceTrace {
            kind,
            graph: graph.clone(),
            updates: Vec::new(),
            saved: Vec::new(),
            sweeps: 0,
        }
    }

    /// Updates scheduled in one sweep.
    pub fn updates_per_sweep(&self) -> usize {
        match self.kind {
            TraceKind::MeanField => self.graph.node_count(),
            TraceKind::Trw => 2 * self.graph.edge_count(),
        }
    }

    /// Re-runs the recorded update sequence from the uniform start and
    /// returns the resulting marginals.
    pub fn replay(&self, theta: &Params, rho: Option<&[f64]>) -> Result<Marginals> {
        if !theta.graph().as_ref().eq(self.graph.as_ref()) {
            return Err(Error::TraceMismatch("trace was recorded on another graph"));
        }
        match self.kind {
            TraceKind::MeanField => {
                let mut mu = Tables::uniform(theta.graph());
                for &node in &self.updates {
                    mean_field::update_node(theta, &mut mu, node);
                }
                mean_field::fill_edge_products(&mut mu);
                Ok(mu)
            }
            TraceKind::Trw => {
                let rho = rho.ok_or(Error::TraceMismatch("TRW replay needs rho"))?;
                let mut state = TrwState::new(theta, rho);
                for &slot in &self.updates {
                    state.update(slot)?;
                }
                Ok(state.beliefs())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub marginals: Marginals,
    pub messages: Option<MessageSet>,
    pub trace: Option<InferenceTrace>,
    pub sweeps: usize,
    pub converged: bool,
    /// Number of times a message or marginal hit the numerical floor.
    pub clamps: u64,
}

/// Runs the configured method.
pub fn infer(theta: &Params, config: &InferenceConfig) -> Result<InferenceOutput> {
    config.validate()?;
    match &config.method {
        Method::MeanField => mean_field(theta, config.mode, config.record_trace),
        Method::Trw(rho) => {
            let rho = rho.resolve(theta.graph())?;
            trw(theta, &rho, config.mode, config.record_trace)
        }
    }
}

/// Entropy of a fully factorized distribution with the given node marginals.
pub fn entropy_mf(mu: &Marginals) -> f64 {
    let g = mu.graph();
    -(0..g.node_count())
        .map(|i| mu.unary(i).iter().map(|&p| xlogx(p)).sum::<f64>())
        .sum::<f64>()
}

/// Gradient of [`entropy_mf`]; edge entries are zero.
pub fn entropy_mf_grad(mu: &Marginals) -> Tables {
    let g = mu.graph().clone();
    let mut grad = Tables::zeros(&g);
    for i in 0..g.node_count() {
        for (d, &p) in grad.unary_mut(i).iter_mut().zip(mu.unary(i)) {
            *d = -(libm::log(p.max(FLOOR)) + 1.0);
        }
    }
    grad
}

/// Mutual information of an edge table against the node tables.
pub fn mutual_information(mu: &Marginals, e: usize) -> f64 {
    let g = mu.graph();
    let (i, j) = g.edge(e);
    let lj = g.labels(j);
    let (mi, mj) = (mu.unary(i), mu.unary(j));
    let mut total = 0.0;
    for (k, &p) in mu.edge(e).iter().enumerate() {
        if p > 0.0 {
            total += p * libm::log(p / (mi[k / lj] * mj[k % lj]));
        }
    }
    total
}

/// Reweighted entropy `Σ_i H(μ_i) − Σ_e ρ_e I(μ_e)`.
pub fn entropy_trw(mu: &Marginals, rho: &[f64]) -> f64 {
    let g = mu.graph();
    entropy_mf(mu)
        - (0..g.edge_count())
            .map(|e| rho[e] * mutual_information(mu, e))
            .sum::<f64>()
}

/// Gradient of [`entropy_trw`] with node and edge tables treated as
/// independent variables.
pub fn entropy_trw_grad(mu: &Marginals, rho: &[f64]) -> Tables {
    let g = mu.graph().clone();
    let mut grad = Tables::zeros(&g);
    for i in 0..g.node_count() {
        for (d, &p) in grad.unary_mut(i).iter_mut().zip(mu.unary(i)) {
            *d = -(libm::log(p.max(FLOOR)) + 1.0);
        }
    }
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let lj = g.labels(j);
        let r = rho[e];
        let mi = mu.unary(i).to_vec();
        let mj = mu.unary(j).to_vec();
        let table = mu.edge(e).to_vec();
        for (k, &p) in table.iter().enumerate() {
            let (a, b) = (k / lj, k % lj);
            let (pa, pb) = (mi[a].max(FLOOR), mj[b].max(FLOOR));
            grad.edge_mut(e)[k] = -r * (libm::log(p.max(FLOOR) / (pa * pb)) + 1.0);
            grad.unary_mut(i)[a] += r * p / pa;
            grad.unary_mut(j)[b] += r * p / pb;
        }
    }
    grad
}

/// Variational objective `θ·μ + H̃(μ)` evaluated at `mu`: the mean-field
/// entropy for [`Method::MeanField`] and the reweighted entropy for TRW.
pub fn approx_log_z(theta: &Params, mu: &Marginals, method: &Method) -> Result<f64> {
    let energy = theta.dot(mu)?;
    Ok(match method {
        Method::MeanField => energy + entropy_mf(mu),
        Method::Trw(rho) => energy + entropy_trw(mu, &rho.resolve(theta.graph())?),
    })
}
