use alloc::vec;
use alloc::vec::Vec;

use super::GradResult;
use crate::error::{Error, Result};
use crate::infer::{slot_of, slot_parts};
use crate::infer::{InferenceTrace, MessageSet, TraceKind, TrwState};
use crate::model::{Marginals, Params, Tables};
use crate::numeric::FLOOR;

/// `c ⊙ (g − g·c)`: pulls a gradient with respect to a normalized table
/// back to the log of its unnormalized version.
pub fn backnorm(g: &[f64], c: &[f64]) -> Vec<f64> {
    let dot: f64 = g.iter().zip(c).map(|(a, b)| a * b).sum();
    g.iter().zip(c).map(|(a, b)| b * (a - dot)).collect()
}

/// Reverse sweep through a truncated mean-field run. `mu` must be the
/// marginals the run returned; edge entries of `dq_dmu` are folded into the
/// node entries first since edge marginals are products.
pub fn back_mean_field(
    theta: &Params,
    trace: &InferenceTrace,
    mu: &Marginals,
    dq_dmu: &Tables,
) -> Result<GradResult> {
    let g = theta.graph().clone();
    if trace.kind != TraceKind::MeanField {
        return Err(Error::TraceMismatch("expected a mean-field trace"));
    }
    if *trace.graph != *g || !mu.same_layout(theta) || !dq_dmu.same_layout(theta) {
        return Err(Error::TraceMismatch(
            "trace, parameters and marginals disagree on the graph",
        ));
    }
    let mut mu = mu.clone();
    let mut mu_bar = dq_dmu.clone();
    mu_bar.fold_edges_into_nodes(&mu);
    let mut theta_bar = Tables::zeros(&g);
    let mut end = trace.saved.len();
    for &j in trace.updates.iter().rev() {
        let lj = g.labels(j);
        if end < lj {
            return Err(Error::TraceMismatch(
                "stack is shorter than the update list",
            ));
        }
        let nu = backnorm(mu_bar.unary(j), mu.unary(j));
        for (t, v) in theta_bar.unary_mut(j).iter_mut().zip(&nu) {
            *t += v;
        }
        for &e in g.incident(j) {
            let (a_node, b_node) = g.edge(e);
            let o = g.other(e, j);
            let lo = g.labels(o);
            let table = theta.edge(e).to_vec();
            let mo = mu.unary(o).to_vec();
            let mut obar = vec![0.0; lo];
            {
                let tb = theta_bar.edge_mut(e);
                for (xj, &nv) in nu.iter().enumerate() {
                    for xo in 0..lo {
                        let k = if j == a_node {
                            xj * lo + xo
                        } else {
                            xo * lj + xj
                        };
                        tb[k] += nv * mo[xo];
                        obar[xo] += nv * table[k];
                    }
                }
            }
            debug_assert!(j == a_node || j == b_node);
            for (m, v) in mu_bar.unary_mut(o).iter_mut().zip(&obar) {
                *m += v;
            }
        }
        mu.unary_mut(j).copy_from_slice(&trace.saved[end - lj..end]);
        mu_bar.unary_mut(j).fill(0.0);
        end -= lj;
    }
    if end != 0 || !unary_is_uniform(&mu) {
        return Err(Error::TraceMismatch(
            "unwinding did not return to the uniform start",
        ));
    }
    Ok(GradResult::new(theta_bar))
}

fn unary_is_uniform(mu: &Marginals) -> bool {
    let g = mu.graph();
    (0..g.node_count()).all(|i| {
        let u = 1.0 / g.labels(i) as f64;
        mu.unary(i).iter().all(|&p| p == u)
    })
}

/// Reverse sweep through a truncated TRW run: back through the belief
/// equations at the final messages, then back through every message update
/// in reverse order, restoring each overwritten message from the trace.
pub fn back_trw(
    theta: &Params,
    trace: &InferenceTrace,
    messages: &MessageSet,
    mu: &Marginals,
    dq_dmu: &Tables,
    rho: &[f64],
) -> Result<GradResult> {
    let g = theta.graph().clone();
    if trace.kind != TraceKind::Trw {
        return Err(Error::TraceMismatch("expected a TRW trace"));
    }
    if *trace.graph != *g || !mu.same_layout(theta) || !dq_dmu.same_layout(theta) {
        return Err(Error::TraceMismatch(
            "trace, parameters and marginals disagree on the graph",
        ));
    }
    if rho.len() != g.edge_count() || messages.slot_count() != 2 * g.edge_count() {
        return Err(Error::TraceMismatch("messages or rho do not fit the graph"));
    }
    let mut state = TrwState::new(theta, rho);
    state.messages = messages.clone();
    let mut theta_bar = Tables::zeros(&g);
    let mut m_bar = vec![0.0; messages.as_slice().len()];
    let offsets: Vec<usize> = (0..=messages.slot_count())
        .scan(0, |acc, s| {
            let start = *acc;
            if s < messages.slot_count() {
                *acc += messages.get(s).len();
            }
            Some(start)
        })
        .collect();
    let mut clamps = 0u64;

    // Edge beliefs.
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let lj = g.labels(j);
        let nu = backnorm(dq_dmu.edge(e), mu.edge(e));
        for (t, v) in theta_bar.edge_mut(e).iter_mut().zip(&nu) {
            *t += v / rho[e];
        }
        let row: Vec<f64> = nu.chunks(lj).map(|r| r.iter().sum()).collect();
        let mut col = vec![0.0; lj];
        for r in nu.chunks(lj) {
            for (c, v) in col.iter_mut().zip(r) {
                *c += v;
            }
        }
        for (node, sums) in [(i, &row), (j, &col)] {
            for (t, v) in theta_bar.unary_mut(node).iter_mut().zip(sums.iter()) {
                *t += v;
            }
            for &d in g.incident(node) {
                let slot = slot_of(&g, d, node);
                let coef = rho[d] - if d == e { 1.0 } else { 0.0 };
                let m = state.messages.get(slot);
                for (x, &v) in sums.iter().enumerate() {
                    m_bar[offsets[slot] + x] += coef / m[x].max(FLOOR) * v;
                }
            }
        }
    }
    // Node beliefs.
    for i in 0..g.node_count() {
        let nu = backnorm(dq_dmu.unary(i), mu.unary(i));
        for (t, v) in theta_bar.unary_mut(i).iter_mut().zip(&nu) {
            *t += v;
        }
        for &d in g.incident(i) {
            let slot = slot_of(&g, d, i);
            let m = state.messages.get(slot);
            for (x, &v) in nu.iter().enumerate() {
                m_bar[offsets[slot] + x] += rho[d] * v / m[x].max(FLOOR);
            }
        }
    }
    // Message updates, newest first.
    let mut end = trace.saved.len();
    for &slot in trace.updates.iter().rev() {
        let (e, t, s) = slot_parts(&g, slot);
        let (lt, ls) = (g.labels(t), g.labels(s));
        if end < lt {
            return Err(Error::TraceMismatch(
                "stack is shorter than the update list",
            ));
        }
        let r = offsets[slot]..offsets[slot + 1];
        let nu = backnorm(&m_bar[r.clone()], state.messages.get(slot));
        let terms = state.update_terms(slot)?;
        let mut src_bar = vec![0.0; ls];
        {
            let lower_is_target = slot % 2 == 0;
            let tb = theta_bar.edge_mut(e);
            for a in 0..lt {
                let row = &terms[a * ls..(a + 1) * ls];
                let sum: f64 = row.iter().sum();
                if sum < FLOOR {
                    clamps += 1;
                    continue;
                }
                let scale = nu[a] / sum;
                for (b, &sv) in row.iter().enumerate() {
                    let w = sv * scale;
                    let k = if lower_is_target {
                        a * ls + b
                    } else {
                        b * lt + a
                    };
                    tb[k] += w / rho[e];
                    src_bar[b] += w;
                }
            }
        }
        for (tv, v) in theta_bar.unary_mut(s).iter_mut().zip(&src_bar) {
            *tv += v;
        }
        for &d in g.incident(s) {
            let ds = slot_of(&g, d, s);
            let coef = rho[d] - if d == e { 1.0 } else { 0.0 };
            let m = state.messages.get(ds);
            for (x, &v) in src_bar.iter().enumerate() {
                m_bar[offsets[ds] + x] += coef / m[x].max(FLOOR) * v;
            }
        }
        state.messages.set(slot, &trace.saved[end - lt..end]);
        m_bar[r].fill(0.0);
        end -= lt;
    }
    if end != 0 || state.messages != MessageSet::uniform(&g) {
        return Err(Error::TraceMismatch(
            "unwinding did not return to uniform messages",
        ));
    }
    let mut out = GradResult::new(theta_bar);
    out.clamps = clamps;
    Ok(out)
}
