//! Exact inference for small models (enumeration) and trees (sum-product),
//! plus the MPM decision rule and Hamming error.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Graph, Labeling, Marginals, Params, Tables};
use crate::numeric::{logsumexp, softmax_in_place};

/// Largest joint state space [`brute_force`] will enumerate.
pub const MAX_STATES: u128 = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    /// Log-partition function A(θ).
    pub log_z: f64,
    pub marginals: Marginals,
    /// Entropy of the full joint distribution.
    pub entropy: f64,
}

fn score(g: &Graph, theta: &Params, x: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        s += theta.unary(i)[xi];
    }
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        s += theta.edge(e)[x[i] * g.labels(j) + x[j]];
    }
    s
}

/// Advances a mixed-radix counter; false once it wraps around.
fn next_state(x: &mut [usize], labels: &[usize]) -> bool {
    for (xi, &l) in x.iter_mut().zip(labels) {
        *xi += 1;
        if *xi < l {
            return true;
        }
        *xi = 0;
    }
    false
}

/// Enumerates every joint configuration.
pub fn brute_force(theta: &Params) -> Result<ExactResult> {
    let g = theta.graph().clone();
    let states = g.state_count();
    if states > MAX_STATES {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: MAX_STATES,
        });
    }
    let labels = g.label_counts();
    let mut x = vec![0usize; g.node_count()];

    let mut max = f64::NEG_INFINITY;
    loop {
        max = max.max(score(&g, theta, &x));
        if !next_state(&mut x, labels) {
            break;
        }
    }

    let mut acc = Tables::zeros(&g);
    let mut total = 0.0;
    let mut weighted_score = 0.0;
    x.fill(0);
    loop {
        let s = score(&g, theta, &x);
        let w = libm::exp(s - max);
        total += w;
        weighted_score += w * s;
        for (i, &xi) in x.iter().enumerate() {
            acc.unary_mut(i)[xi] += w;
        }
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            acc.edge_mut(e)[x[i] * g.labels(j) + x[j]] += w;
        }
        if !next_state(&mut x, labels) {
            break;
        }
    }
    acc.scale(1.0 / total);
    let log_z = max + libm::log(total);
    let entropy = log_z - weighted_score / total;
    Ok(ExactResult {
        log_z,
        marginals: acc,
        entropy,
    })
}

/// Sum-product on a connected acyclic graph, in the log domain.
pub fn tree_inference(theta: &Params) -> Result<ExactResult> {
    let g = theta.graph().clone();
    let n = g.node_count();
    if n == 0 {
        return Err(Error::NotATree("graph has no nodes"));
    }
    if g.edge_count() + 1 != n {
        return Err(Error::NotATree("edge count is not node count minus one"));
    }
    // BFS from node 0; parent_edge[v] is the edge towards the root.
    let mut order = Vec::with_capacity(n);
    let mut parent_edge = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    queue.push_back(0);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &e in g.incident(v) {
            let w = g.other(e, v);
            if !seen[w] {
                seen[w] = true;
                parent_edge[w] = e;
                queue.push_back(w);
            }
        }
    }
    if order.len() != n {
        return Err(Error::NotATree("graph contains a cycle or is disconnected"));
    }

    // log-table of θ_e(x_v, x_w) seen from v.
    let pair = |e: usize, v: usize, xv: usize, xw: usize| -> f64 {
        let (i, j) = g.edge(e);
        if v == i {
            theta.edge(e)[xv * g.labels(j) + xw]
        } else {
            theta.edge(e)[xw * g.labels(j) + xv]
        }
    };

    // up[v]: θ_v plus messages from children. to_parent[v]: message v -> parent.
    let mut up: Vec<Vec<f64>> = (0..n).map(|v| theta.unary(v).to_vec()).collect();
    let mut to_parent: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut buf = Vec::new();
    for &v in order.iter().rev() {
        let e = parent_edge[v];
        if e == usize::MAX {
            continue;
        }
        let p = g.other(e, v);
        let msg: Vec<f64> = (0..g.labels(p))
            .map(|xp| {
                buf.clear();
                buf.extend((0..g.labels(v)).map(|xv| pair(e, p, xp, xv) + up[v][xv]));
                logsumexp(&buf)
            })
            .collect();
        for (u, m) in up[p].iter_mut().zip(&msg) {
            *u += m;
        }
        to_parent[v] = msg;
    }
    let log_z = logsumexp(&up[order[0]]);

    // full[v]: log of the unnormalized node marginal.
    let mut full: Vec<Vec<f64>> = vec![Vec::new(); n];
    full[order[0]] = up[order[0]].clone();
    for &v in order.iter().skip(1) {
        let e = parent_edge[v];
        let p = g.other(e, v);
        let mut f = up[v].clone();
        for (xv, fv) in f.iter_mut().enumerate() {
            buf.clear();
            buf.extend(
                (0..g.labels(p)).map(|xp| pair(e, v, xv, xp) + full[p][xp] - to_parent[v][xp]),
            );
            *fv += logsumexp(&buf);
        }
        full[v] = f;
    }

    let mut mu = Tables::zeros(&g);
    for v in 0..n {
        let mut t = full[v].clone();
        softmax_in_place(&mut t);
        mu.unary_mut(v).copy_from_slice(&t);
    }
    for &v in order.iter().skip(1) {
        let e = parent_edge[v];
        let p = g.other(e, v);
        let (i, j) = g.edge(e);
        let lj = g.labels(j);
        let mut t = vec![0.0; g.labels(i) * lj];
        for xp in 0..g.labels(p) {
            let cavity = full[p][xp] - to_parent[v][xp];
            for xv in 0..g.labels(v) {
                let (a, b) = if p == i { (xp, xv) } else { (xv, xp) };
                t[a * lj + b] = libm::exp(pair(e, p, xp, xv) + cavity + up[v][xv] - log_z);
            }
        }
        let s: f64 = t.iter().sum();
        for x in &mut t {
            *x /= s;
        }
        mu.edge_mut(e).copy_from_slice(&t);
    }
    let entropy = log_z - theta.dot(&mu)?;
    Ok(ExactResult {
        log_z,
        marginals: mu,
        entropy,
    })
}

/// Maximum-posterior-marginal labeling: per-node argmax, ties to the lowest
/// label.
pub fn mpm_decide(mu: &Marginals) -> Labeling {
    let g = mu.graph();
    Labeling::new(
        (0..g.node_count())
            .map(|i| {
                let t = mu.unary(i);
                let mut best = 0;
                for (a, &v) in t.iter().enumerate().skip(1) {
                    if v > t[best] {
                        best = a;
                    }
                }
                Some(best)
            })
            .collect(),
    )
}

/// Fraction of nodes observed in `truth` whose prediction differs.
pub fn hamming_error(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "prediction has {} nodes, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut observed = 0usize;
    let mut wrong = 0usize;
    for (p, t) in pred.as_slice().iter().zip(truth.as_slice()) {
        if let Some(t) = t {
            observed += 1;
            if *p != Some(*t) {
                wrong += 1;
            }
        }
    }
    if observed == 0 {
        return Err(Error::NoObservedNodes);
    }
    Ok(wrong as f64 / observed as f64)
}

/// Gaussian random parameters for tests and examples: unary entries drawn
/// from N(0, unary_sd), edge entries from N(0, edge_sd).
pub fn random_params<R: rand::Rng + ?Sized>(
    graph: &Arc<Graph>,
    unary_sd: f64,
    edge_sd: f64,
    rng: &mut R,
) -> Params {
    use rand_distr::{Distribution, StandardNormal};
    let mut t = Tables::zeros(graph);
    let split = graph.unary_len();
    for (k, v) in t.as_mut_slice().iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *v = z * if k < split { unary_sd } else { edge_sd };
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_local_polytope;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_binary_node() {
        let g = Graph::new(vec![2], vec![]).unwrap();
        let r = brute_force(&Tables::zeros(&g)).unwrap();
        assert!((r.log_z - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.marginals.unary(0), &[0.5, 0.5]);
    }

    #[test]
    fn isolated_nodes_log_z() {
        let g = Graph::new(vec![2; 5], vec![]).unwrap();
        let r = brute_force(&Tables::zeros(&g)).unwrap();
        assert!((r.log_z - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert!((r.entropy - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn agreement_potential_on_two_nodes() {
        let g = Graph::chain(2, 2).unwrap();
        let mut theta = Tables::zeros(&g);
        theta.edge_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let r = brute_force(&theta).unwrap();
        let e = 1f64.exp();
        assert!((r.log_z - (2.0 * e + 2.0).ln()).abs() < 1e-14);
        let same = e / (2.0 * e + 2.0);
        assert!((r.marginals.edge(0)[0] - same).abs() < 1e-14);
        assert!((r.marginals.edge(0)[3] - same).abs() < 1e-14);
        assert!(check_local_polytope(&r.marginals, 1e-12));
    }

    #[test]
    fn guard_rejects_large_state_space() {
        let g = Graph::new(vec![2; 23], vec![]).unwrap();
        assert!(matches!(
            brute_force(&Tables::zeros(&g)),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn entropy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::grid(2, 3, 3).unwrap();
        for _ in 0..5 {
            let r = brute_force(&random_params(&g, 1.0, 1.0, &mut rng)).unwrap();
            assert!(r.entropy >= 0.0);
            assert!(r.entropy <= 6.0 * 3f64.ln() + 1e-12);
            assert!(check_local_polytope(&r.marginals, 1e-9));
        }
    }

    #[test]
    fn tree_inference_single_node_equals_brute_force() {
        let g = Graph::new(vec![3], vec![]).unwrap();
        let theta = Tables::from_parts(&g, &[vec![0.2, -1.0, 0.7]], &[]).unwrap();
        let a = brute_force(&theta).unwrap();
        let b = tree_inference(&theta).unwrap();
        assert!((a.log_z - b.log_z).abs() < 1e-15);
        for (x, y) in a.marginals.as_slice().iter().zip(b.marginals.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    fn assert_close(a: &ExactResult, b: &ExactResult, tol: f64) {
        assert!(
            (a.log_z - b.log_z).abs() < tol,
            "{} vs {}",
            a.log_z,
            b.log_z
        );
        assert!((a.entropy - b.entropy).abs() < tol);
        for (x, y) in a.marginals.as_slice().iter().zip(b.marginals.as_slice()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn tree_inference_matches_brute_force_on_chain_and_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chain =
            Graph::new(vec![2, 3, 2, 4, 2, 3], (1..6).map(|i| (i - 1, i)).collect()).unwrap();
        let star = Graph::new(vec![2; 10], (1..10).map(|i| (0, i)).collect()).unwrap();
        for g in [chain, star] {
            for _ in 0..5 {
                let theta = random_params(&g, 1.0, 1.5, &mut rng);
                assert_close(
                    &brute_force(&theta).unwrap(),
                    &tree_inference(&theta).unwrap(),
                    1e-9,
                );
            }
        }
    }

    #[test]
    fn tree_inference_rejects_cycles() {
        let g = Graph::new(vec![2; 3], vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(tree_inference(&Tables::zeros(&g)).is_err());
        let g = Graph::new(vec![2; 4], vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(tree_inference(&Tables::zeros(&g)).is_err());
    }

    #[test]
    fn mpm_argmax_and_ties() {
        let g = Graph::new(vec![2, 2, 3], vec![]).unwrap();
        let mu = Tables::from_parts(
            &g,
            &[vec![0.7, 0.3], vec![0.5, 0.5], vec![0.2, 0.4, 0.4]],
            &[],
        )
        .unwrap();
        assert_eq!(mpm_decide(&mu).as_slice(), &[Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn mpm_minimizes_expected_hamming_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::grid(2, 2, 3).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let r = brute_force(&theta).unwrap();
        let mpm = mpm_decide(&r.marginals).to_full().unwrap();
        // Expected number of correct components for a guess is the sum of
        // its node marginals; enumerate every guess.
        let expected_correct = |x: &[usize]| -> f64 {
            x.iter()
                .enumerate()
                .map(|(i, &a)| r.marginals.unary(i)[a])
                .sum()
        };
        let best = expected_correct(&mpm);
        let mut x = vec![0; 4];
        loop {
            assert!(expected_correct(&x) <= best + 1e-15);
            if !next_state(&mut x, g.label_counts()) {
                break;
            }
        }
    }

    #[test]
    fn hamming_cases() {
        let a = Labeling::full(&[0, 1, 1, 0]);
        assert_eq!(hamming_error(&a, &a).unwrap(), 0.0);
        let b = Labeling::full(&[1, 0, 0, 1]);
        assert_eq!(hamming_error(&a, &b).unwrap(), 1.0);
        let truth = Labeling::new(vec![Some(0), Some(1), Some(1), None]);
        let pred = Labeling::full(&[0, 1, 1, 1]);
        assert_eq!(hamming_error(&pred, &truth).unwrap(), 0.0);
        let none = Labeling::new(vec![None; 4]);
        assert_eq!(hamming_error(&pred, &none), Err(Error::NoObservedNodes));
    }

    #[test]
    fn log_partition_gradient_is_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Graph::grid(2, 3, 2).unwrap();
        for _ in 0..3 {
            let theta = random_params(&g, 1.0, 1.0, &mut rng);
            let mu = brute_force(&theta).unwrap().marginals;
            let h = 1e-5;
            for k in 0..g.table_len() {
                let mut p = theta.clone();
                p.as_mut_slice()[k] += h;
                let mut m = theta.clone();
                m.as_mut_slice()[k] -= h;
                let fd =
                    (brute_force(&p).unwrap().log_z - brute_force(&m).unwrap().log_z) / (2.0 * h);
                assert!((fd - mu.as_slice()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exact_variational_principle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Graph::grid(3, 3, 2).unwrap();
        for _ in 0..5 {
            let theta = random_params(&g, 1.0, 1.0, &mut rng);
            let exact = brute_force(&theta).unwrap();
            let at_optimum = theta.dot(&exact.marginals).unwrap() + exact.entropy;
            assert!((at_optimum - exact.log_z).abs() < 1e-8);
            for _ in 0..5 {
                let mut other = theta.clone();
                other
                    .axpy(0.7, &random_params(&g, 1.0, 1.0, &mut rng))
                    .unwrap();
                let r = brute_force(&other).unwrap();
                let value = theta.dot(&r.marginals).unwrap() + r.entropy;
                assert!(value <= exact.log_z + 1e-8);
            }
        }
    }
}
