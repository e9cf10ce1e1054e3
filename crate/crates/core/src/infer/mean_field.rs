use alloc::vec;
use alloc::vec::Vec;

use super::{InferenceOutput, InferenceTrace, Mode, TraceKind};
use crate::error::{Error, Result};
use crate::model::{Marginals, Params, Tables};
use crate::numeric::softmax_in_place;

/// Coordinate-ascent mean field, visiting nodes in index order each sweep
/// and starting from uniform marginals. Edge tables of the result are
/// products of the node tables.
pub fn mean_field(theta: &Params, mode: Mode, record_trace: bool) -> Result<InferenceOutput> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    let g = theta.graph().clone();
    let n = g.node_count();
    let mut mu = Tables::uniform(&g);
    let mut trace = record_trace.then(|| InferenceTrace::new(TraceKind::MeanField, &g));
    let (max_sweeps, threshold) = match mode {
        Mode::Truncated(s) => (s, None),
        Mode::Converged {
            threshold,
            max_iters,
        } => (max_iters, Some(threshold)),
    };
    let mut sweeps = 0;
    let mut converged = threshold.is_none();
    while sweeps < max_sweeps {
        let mut change: f64 = 0.0;
        for node in 0..n {
            let old: Vec<f64> = mu.unary(node).to_vec();
            update_node(theta, &mut mu, node);
            for (a, b) in old.iter().zip(mu.unary(node)) {
                change = change.max((a - b).abs());
            }
            if let Some(t) = trace.as_mut() {
                t.updates.push(node);
                t.saved.extend_from_slice(&old);
            }
        }
        sweeps += 1;
        if let Some(t) = threshold {
            if change < t {
                converged = true;
                break;
            }
        }
    }
    if let Some(t) = trace.as_mut() {
        t.sweeps = sweeps;
    }
    fill_edge_products(&mut mu);
    Ok(InferenceOutput {
        marginals: mu,
        messages: None,
        trace,
        sweeps,
        converged,
        clamps: 0,
    })
}

/// Sets `μ_j ∝ exp(θ_j + Σ_e Σ_o θ_e(·, x_o) μ_o(x_o))` using the current
/// neighbour marginals.
pub(crate) fn update_node(theta: &Params, mu: &mut Marginals, node: usize) {
    let mut logits = mean_field_logits(theta, mu, node);
    softmax_in_place(&mut logits);
    mu.unary_mut(node).copy_from_slice(&logits);
}

fn mean_field_logits(theta: &Params, mu: &Marginals, node: usize) -> Vec<f64> {
    let g = theta.graph();
    let mut logits = theta.unary(node).to_vec();
    for &e in g.incident(node) {
        let (i, j) = g.edge(e);
        let table = theta.edge(e);
        let lj = g.labels(j);
        if node == i {
            let mo = mu.unary(j);
            for (a, l) in logits.iter_mut().enumerate() {
                *l += (0..lj).map(|b| table[a * lj + b] * mo[b]).sum::<f64>();
            }
        } else {
            let mo = mu.unary(i);
            for (b, l) in logits.iter_mut().enumerate() {
                *l += mo
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| table[a * lj + b] * p)
                    .sum::<f64>();
            }
        }
    }
    logits
}

/// Overwrites every edge table with the outer product of its node tables.
pub(crate) fn fill_edge_products(mu: &mut Marginals) {
    let g = mu.graph().clone();
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let mi = mu.unary(i).to_vec();
        let mj = mu.unary(j).to_vec();
        let mut table = vec![0.0; mi.len() * mj.len()];
        for (a, &p) in mi.iter().enumerate() {
            for (b, &q) in mj.iter().enumerate() {
                table[a * mj.len() + b] = p * q;
            }
        }
        mu.edge_mut(e).copy_from_slice(&table);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::random_params;
    use crate::infer::{approx_log_z, entropy_mf, Method};
    use crate::model::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sweeps_never_decrease_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::grid(3, 3, 3).unwrap();
        let theta = random_params(&g, 1.0, 2.0, &mut rng);
        let mut prev = f64::NEG_INFINITY;
        for s in 0..15 {
            let out = mean_field(&theta, Mode::Truncated(s), false).unwrap();
            let v = approx_log_z(&theta, &out.marginals, &Method::MeanField).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn zero_sweeps_is_uniform() {
        let g = Graph::chain(4, 3).unwrap();
        let theta = Tables::zeros(&g);
        let out = mean_field(&theta, Mode::Truncated(0), true).unwrap();
        assert_eq!(out.marginals, Tables::uniform(&g));
        assert!((entropy_mf(&out.marginals) - 4.0 * 3f64.ln()).abs() < 1e-12);
        assert!(out.trace.unwrap().updates.is_empty());
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let g = Graph::chain(2, 2).unwrap();
        let mut theta = Tables::zeros(&g);
        theta.as_mut_slice()[0] = f64::NAN;
        assert_eq!(
            mean_field(&theta, Mode::Truncated(1), false).unwrap_err(),
            Error::NonFinite("parameters")
        );
    }
}
