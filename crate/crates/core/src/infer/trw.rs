use alloc::vec;
use alloc::vec::Vec;

use super::{InferenceOutput, InferenceTrace, Mode, TraceKind};
use crate::error::{Error, Result};
use crate::model::{Graph, Marginals, Params, Tables};
use crate::numeric::{floored, softmax_in_place};

/// Normalized edge-to-node messages. Slot `2e` holds the message from edge
/// `e` to its lower endpoint, slot `2e + 1` the message to its higher one.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    offsets: Vec<usize>,
    values: Vec<f64>,
    logs: Vec<f64>,
}

impl MessageSet {
    pub fn uniform(graph: &Graph) -> Self {
        let mut offsets = Vec::with_capacity(2 * graph.edge_count() + 1);
        let mut values = Vec::new();
        offsets.push(0);
        for &(i, j) in graph.edges() {
            for node in [i, j] {
                let l = graph.labels(node);
                values.extend(core::iter::repeat_n(1.0 / l as f64, l));
                offsets.push(values.len());
            }
        }
        let logs = values.iter().map(|&v| libm::log(v)).collect();
        MessageSet {
            offsets,
            values,
            logs,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn get(&self, slot: usize) -> &[f64] {
        &self.values[self.offsets[slot]..self.offsets[slot + 1]]
    }

    pub fn log(&self, slot: usize) -> &[f64] {
        &self.logs[self.offsets[slot]..self.offsets[slot + 1]]
    }

    pub(crate) fn set(&mut self, slot: usize, values: &[f64]) {
        let r = self.offsets[slot]..self.offsets[slot + 1];
        self.values[r.clone()].copy_from_slice(values);
        for (l, v) in self.logs[r].iter_mut().zip(values) {
            *l = libm::log(*v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Slot of the message from edge `e` to `node`.
#[inline]
pub(crate) fn slot_of(graph: &Graph, e: usize, node: usize) -> usize {
    if graph.edge(e).0 == node {
        2 * e
    } else {
        2 * e + 1
    }
}

/// `(edge, target, source)` for a slot.
#[inline]
pub(crate) fn slot_parts(graph: &Graph, slot: usize) -> (usize, usize, usize) {
    let e = slot / 2;
    let (i, j) = graph.edge(e);
    if slot.is_multiple_of(2) {
        (e, i, j)
    } else {
        (e, j, i)
    }
}

/// Messages plus the model they belong to.
pub(crate) struct TrwState<'a> {
    pub theta: &'a Params,
    pub rho: &'a [f64],
    pub messages: MessageSet,
    pub clamps: u64,
    scratch: Scratch,
}

/// Reused buffers for the per-update work.
#[derive(Default)]
struct Scratch {
    src: Vec<f64>,
    terms: Vec<f64>,
    msg: Vec<f64>,
}

impl<'a> TrwState<'a> {
    pub fn new(theta: &'a Params, rho: &'a [f64]) -> Self {
        TrwState {
            theta,
            rho,
            messages: MessageSet::uniform(theta.graph()),
            clamps: 0,
            scratch: Scratch::default(),
        }
    }

    fn graph(&self) -> &Graph {
        self.theta.graph()
    }

    /// `θ_i(x_i) + Σ_{d ∋ i} ρ_d log m_d(x_i)`.
    pub fn node_log_potential(&self, node: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.node_log_potential_into(node, &mut out);
        out
    }

    fn node_log_potential_into(&self, node: usize, out: &mut Vec<f64>) {
        let g = self.graph();
        out.clear();
        out.extend_from_slice(self.theta.unary(node));
        for &d in g.incident(node) {
            let logs = self.messages.log(slot_of(g, d, node));
            for (o, l) in out.iter_mut().zip(logs) {
                *o += self.rho[d] * l;
            }
        }
    }

    /// Terms `s(x_t, x_s)` of the update for `slot`, laid out `[x_t][x_s]`
    /// and normalized so that their row sums are the new message.
    pub fn update_terms(&self, slot: usize) -> Result<Vec<f64>> {
        let (mut src, mut terms) = (Vec::new(), Vec::new());
        self.update_terms_into(slot, &mut src, &mut terms)?;
        Ok(terms)
    }

    fn update_terms_into(
        &self,
        slot: usize,
        src: &mut Vec<f64>,
        terms: &mut Vec<f64>,
    ) -> Result<()> {
        let g = self.graph();
        let (e, t, s) = slot_parts(g, slot);
        let (lt, ls) = (g.labels(t), g.labels(s));
        let rho = self.rho[e];
        self.node_log_potential_into(s, src);
        let back = self.messages.log(slot_of(g, e, s));
        for (v, b) in src.iter_mut().zip(back) {
            *v -= b;
        }
        let table = self.theta.edge(e);
        let lower_is_target = slot.is_multiple_of(2);
        terms.clear();
        for a in 0..lt {
            for (b, sb) in src.iter().enumerate() {
                let th = if lower_is_target {
                    table[a * ls + b]
                } else {
                    table[b * lt + a]
                };
                terms.push(th / rho + sb);
            }
        }
        softmax_in_place(terms);
        if !terms.iter().all(|v| v.is_finite()) {
            return Err(Error::MessageUnderflow { edge: e, node: t });
        }
        Ok(())
    }

    pub fn update(&mut self, slot: usize) -> Result<()> {
        let mut sc = core::mem::take(&mut self.scratch);
        let res = self.update_terms_into(slot, &mut sc.src, &mut sc.terms);
        if res.is_ok() {
            let ls = self.graph().labels(slot_parts(self.graph(), slot).2);
            sc.msg.clear();
            for row in sc.terms.chunks(ls) {
                sc.msg.push(floored(row.iter().sum(), &mut self.clamps));
            }
            self.messages.set(slot, &sc.msg);
        }
        self.scratch = sc;
        res
    }

    pub fn node_belief(&self, node: usize) -> Vec<f64> {
        let mut b = self.node_log_potential(node);
        softmax_in_place(&mut b);
        b
    }

    /// Edge belief `μ_e ∝ exp(θ_e/ρ_e) Π_{i ∈ e} exp(θ_i) Π_d m_d^{ρ_d} / m_e`.
    pub fn edge_belief(&self, e: usize) -> Vec<f64> {
        let g = self.graph();
        let (i, j) = g.edge(e);
        let (li, lj) = (g.labels(i), g.labels(j));
        let mut pi = self.node_log_potential(i);
        for (v, l) in pi.iter_mut().zip(self.messages.log(2 * e)) {
            *v -= l;
        }
        let mut pj = self.node_log_potential(j);
        for (v, l) in pj.iter_mut().zip(self.messages.log(2 * e + 1)) {
            *v -= l;
        }
        let rho = self.rho[e];
        let table = self.theta.edge(e);
        let mut out = vec![0.0; li * lj];
        for a in 0..li {
            for b in 0..lj {
                out[a * lj + b] = table[a * lj + b] / rho + pi[a] + pj[b];
            }
        }
        softmax_in_place(&mut out);
        out
    }

    pub fn beliefs(&self) -> Marginals {
        let g = self.theta.graph().clone();
        let mut mu = Tables::zeros(&g);
        for i in 0..g.node_count() {
            let b = self.node_belief(i);
            mu.unary_mut(i).copy_from_slice(&b);
        }
        for e in 0..g.edge_count() {
            let b = self.edge_belief(e);
            mu.edge_mut(e).copy_from_slice(&b);
        }
        mu
    }

    fn node_beliefs_into(&self, out: &mut Vec<f64>, buf: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.graph().node_count() {
            self.node_log_potential_into(i, buf);
            softmax_in_place(buf);
            out.extend_from_slice(buf);
        }
    }
}

/// Sweep order: every edge towards its higher endpoint in increasing edge
/// order, then every edge towards its lower endpoint in decreasing order.
pub(crate) fn sweep_schedule(graph: &Graph) -> impl Iterator<Item = usize> + '_ {
    let m = graph.edge_count();
    (0..m).map(|e| 2 * e + 1).chain((0..m).rev().map(|e| 2 * e))
}

/// Tree-reweighted belief propagation from uniform messages. With `rho`
/// all ones this is loopy belief propagation.
pub fn trw(theta: &Params, rho: &[f64], mode: Mode, record_trace: bool) -> Result<InferenceOutput> {
    trw_from(theta, rho, mode, record_trace, None)
}

/// Like [`trw`] but starting from `init` messages when given, e.g. the
/// converged messages of a nearby model. Traces of warm-started runs cannot
/// be backpropagated, which expects uniform initial messages.
pub fn trw_from(
    theta: &Params,
    rho: &[f64],
    mode: Mode,
    record_trace: bool,
    init: Option<MessageSet>,
) -> Result<InferenceOutput> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    let g = theta.graph().clone();
    if rho.len() != g.edge_count() {
        return Err(Error::InvalidRho(alloc::format!(
            "{} values for {} edges",
            rho.len(),
            g.edge_count()
        )));
    }
    let mut state = TrwState::new(theta, rho);
    if let Some(m) = init {
        if m.offsets != state.messages.offsets {
            return Err(Error::ShapeMismatch(
                "initial messages do not match the graph".into(),
            ));
        }
        if record_trace {
            return Err(Error::InvalidConfig(
                "traces need uniform initial messages".into(),
            ));
        }
        state.messages = m;
    }
    let mut trace = record_trace.then(|| InferenceTrace::new(TraceKind::Trw, &g));
    let (max_sweeps, threshold) = match mode {
        Mode::Truncated(s) => (s, None),
        Mode::Converged {
            threshold,
            max_iters,
        } => (max_iters, Some(threshold)),
    };
    let mut buf = Vec::new();
    let mut prev = Vec::new();
    let mut cur = Vec::new();
    if threshold.is_some() {
        state.node_beliefs_into(&mut prev, &mut buf);
    }
    let mut sweeps = 0;
    let mut converged = threshold.is_none();
    while sweeps < max_sweeps {
        for slot in sweep_schedule(&g) {
            if let Some(t) = trace.as_mut() {
                t.updates.push(slot);
                t.saved.extend_from_slice(state.messages.get(slot));
            }
            state.update(slot)?;
        }
        sweeps += 1;
        if let Some(t) = threshold {
            state.node_beliefs_into(&mut cur, &mut buf);
            let change = prev
                .iter()
                .zip(&cur)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            core::mem::swap(&mut prev, &mut cur);
            if change < t {
                converged = true;
                break;
            }
        }
    }
    if let Some(t) = trace.as_mut() {
        t.sweeps = sweeps;
    }
    let marginals = state.beliefs();
    Ok(InferenceOutput {
        marginals,
        messages: Some(state.messages),
        trace,
        sweeps,
        converged,
        clamps: state.clamps,
    })
}
