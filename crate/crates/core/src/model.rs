//! Pairwise graphs and the table container shared by parameters, marginals
//! and gradients.
//!
//! A [`Tables`] value holds one table per node (`labels(i)` entries) followed
//! by one table per edge (`labels(i) * labels(j)` entries, row-major with the
//! lower-numbered endpoint as the row). Parameters θ, marginals μ, sufficient
//! statistics f(x) and every gradient live in this one layout, so a loss
//! gradient with respect to μ can be added straight onto a gradient with
//! respect to θ.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Undirected graph with pairwise cliques only. Edges are stored with the
/// smaller endpoint first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    labels: Vec<usize>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    unary_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    len: usize,
}

impl Graph {
    /// Builds a graph; every node needs at least two labels and every edge
    /// must be given as `(i, j)` with `i < j`.
    pub fn new(labels: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Arc<Self>> {
        Self::build(labels, edges, 2).map(Arc::new)
    }

    /// Same as [`Graph::new`] but allows single-label nodes. Used for models
    /// where observed variables are clamped.
    pub(crate) fn with_clamped_nodes(
        labels: Vec<usize>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Arc<Self>> {
        Self::build(labels, edges, 1).map(Arc::new)
    }

    fn build(labels: Vec<usize>, edges: Vec<(usize, usize)>, min_labels: usize) -> Result<Self> {
        let n = labels.len();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l < min_labels) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has {l} labels, need at least {min_labels}"
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = alloc::collections::BTreeSet::new();
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
            }
            if i > j {
                return Err(Error::InvalidGraph(format!(
                    "edge {e} = ({i}, {j}) is not in canonical order i < j"
                )));
            }
            if j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge {e} references node {j} but there are {n} nodes"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[i].push(e);
            adjacency[j].push(e);
        }
        let mut offset = 0;
        let mut unary_offsets = Vec::with_capacity(n);
        for &l in &labels {
            unary_offsets.push(offset);
            offset += l;
        }
        let mut edge_offsets = Vec::with_capacity(edges.len());
        for &(i, j) in &edges {
            edge_offsets.push(offset);
            offset += labels[i] * labels[j];
        }
        Ok(Graph {
            labels,
            edges,
            adjacency,
            unary_offsets,
            edge_offsets,
            len: offset,
        })
    }

    /// 4-connected `rows x cols` grid. Nodes are numbered row-major; edges are
    /// emitted in raster order, the right neighbour before the lower one.
    pub fn grid(rows: usize, cols: usize, labels: usize) -> Result<Arc<Self>> {
        let edges = grid_edges(rows, cols).into_iter().map(|(e, _)| e).collect();
        Self::new(vec![labels; rows * cols], edges)
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize, labels: usize) -> Result<Arc<Self>> {
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(vec![labels; n], edges)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn label_counts(&self) -> &[usize] {
        &self.labels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Ids of the edges incident to `node`, in increasing order.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// The endpoint of `e` that is not `node`.
    pub fn other(&self, e: usize, node: usize) -> usize {
        let (i, j) = self.edges[e];
        if i == node {
            j
        } else {
            i
        }
    }

    /// Total number of table entries (unary and edge).
    pub fn table_len(&self) -> usize {
        self.len
    }

    pub fn unary_range(&self, node: usize) -> core::ops::Range<usize> {
        let o = self.unary_offsets[node];
        o..o + self.labels[node]
    }

    pub fn edge_range(&self, e: usize) -> core::ops::Range<usize> {
        let (i, j) = self.edges[e];
        let o = self.edge_offsets[e];
        o..o + self.labels[i] * self.labels[j]
    }

    /// Offset of the first edge table; everything before it is unary.
    pub fn unary_len(&self) -> usize {
        self.edge_offsets.first().copied().unwrap_or(self.len)
    }

    /// Number of joint configurations, saturating.
    pub fn state_count(&self) -> u128 {
        self.labels
            .iter()
            .try_fold(1u128, |acc, &l| acc.checked_mul(l as u128))
            .unwrap_or(u128::MAX)
    }

    /// True when the graph is connected and has exactly `n - 1` edges.
    pub fn is_tree(&self) -> bool {
        let n = self.node_count();
        if n == 0 || self.edges.len() + 1 != n {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &e in self.incident(v) {
                let w = self.other(e, v);
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Horizontal,
    Vertical,
}

/// Edges of a `rows x cols` grid in the order used by [`Graph::grid`].
pub fn grid_edges(rows: usize, cols: usize) -> Vec<((usize, usize), EdgeKind)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push(((v, v + 1), EdgeKind::Horizontal));
            }
            if r + 1 < rows {
                edges.push(((v, v + cols), EdgeKind::Vertical));
            }
        }
    }
    edges
}

/// Per-node and per-edge real tables laid out according to a [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    graph: Arc<Graph>,
    data: Vec<f64>,
}

/// Natural (log-potential) parameters θ.
pub type Params = Tables;
/// Mean parameters μ: node and edge marginals.
pub type Marginals = Tables;

impl Tables {
    pub fn zeros(graph: &Arc<Graph>) -> Self {
        Tables {
            graph: graph.clone(),
            data: vec![0.0; graph.table_len()],
        }
    }

    /// Uniform marginals: `1/L` in node tables, `1/(L_i L_j)` in edge tables.
    pub fn uniform(graph: &Arc<Graph>) -> Self {
        let mut t = Self::zeros(graph);
        for i in 0..graph.node_count() {
            let l = graph.labels(i) as f64;
            t.unary_mut(i).fill(1.0 / l);
        }
        for e in 0..graph.edge_count() {
            let n = t.edge(e).len() as f64;
            t.edge_mut(e).fill(1.0 / n);
        }
        t
    }

    pub fn from_flat(graph: &Arc<Graph>, data: Vec<f64>) -> Result<Self> {
        if data.len() != graph.table_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries, got {}",
                graph.table_len(),
                data.len()
            )));
        }
        Ok(Tables {
            graph: graph.clone(),
            data,
        })
    }

    /// Assembles tables from per-node and per-edge (row-major) vectors.
    pub fn from_parts(graph: &Arc<Graph>, unary: &[Vec<f64>], edge: &[Vec<f64>]) -> Result<Self> {
        if unary.len() != graph.node_count() || edge.len() != graph.edge_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} node and {} edge tables, got {} and {}",
                graph.node_count(),
                graph.edge_count(),
                unary.len(),
                edge.len()
            )));
        }
        let mut t = Self::zeros(graph);
        for (i, u) in unary.iter().enumerate() {
            if u.len() != graph.labels(i) {
                return Err(Error::ShapeMismatch(format!(
                    "node {i} table has {} entries, expected {}",
                    u.len(),
                    graph.labels(i)
                )));
            }
            t.unary_mut(i).copy_from_slice(u);
        }
        for (e, v) in edge.iter().enumerate() {
            let want = t.edge(e).len();
            if v.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "edge {e} table has {} entries, expected {want}",
                    v.len()
                )));
            }
            t.edge_mut(e).copy_from_slice(v);
        }
        Ok(t)
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn unary(&self, node: usize) -> &[f64] {
        &self.data[self.graph.unary_range(node)]
    }

    pub fn unary_mut(&mut self, node: usize) -> &mut [f64] {
        let r = self.graph.unary_range(node);
        &mut self.data[r]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.data[self.graph.edge_range(e)]
    }

    pub fn edge_mut(&mut self, e: usize) -> &mut [f64] {
        let r = self.graph.edge_range(e);
        &mut self.data[r]
    }

    /// Entry `(a, b)` of edge `e`, `a` indexing the lower endpoint.
    pub fn edge_at(&self, e: usize, a: usize, b: usize) -> f64 {
        let (_, j) = self.graph.edge(e);
        self.edge(e)[a * self.graph.labels(j) + b]
    }

    pub fn same_layout(&self, other: &Tables) -> bool {
        Arc::ptr_eq(&self.graph, &other.graph) || *self.graph == *other.graph
    }

    fn check_layout(&self, other: &Tables) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "tables belong to different graphs".into(),
            ))
        }
    }

    pub fn dot(&self, other: &Tables) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tables) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.data)
    }

    /// Zeroes edge tables after adding each one's product-rule contribution
    /// onto the node tables, treating edge entries as `μ_i(a) μ_j(b)` with
    /// the node marginals taken from `marginals`.
    pub(crate) fn fold_edges_into_nodes(&mut self, marginals: &Tables) {
        let g = self.graph.clone();
        for e in 0..g.edge_count() {
            let (i, j) = g.edge(e);
            let (li, lj) = (g.labels(i), g.labels(j));
            let range = g.edge_range(e);
            let mut di = vec![0.0; li];
            let mut dj = vec![0.0; lj];
            {
                let mi = marginals.unary(i);
                let mj = marginals.unary(j);
                let ge = &self.data[range.clone()];
                for a in 0..li {
                    for b in 0..lj {
                        let v = ge[a * lj + b];
                        di[a] += v * mj[b];
                        dj[b] += v * mi[a];
                    }
                }
            }
            self.data[range].fill(0.0);
            for (x, d) in self.unary_mut(i).iter_mut().zip(&di) {
                *x += d;
            }
            for (x, d) in self.unary_mut(j).iter_mut().zip(&dj) {
                *x += d;
            }
        }
    }
}

/// `θ · μ`, summed over every node and edge table.
pub fn dot(theta: &Params, mu: &Marginals) -> Result<f64> {
    theta.dot(mu)
}

/// Per-node label assignment; `None` marks a hidden node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Labeling(Vec<Option<usize>>);

impl Labeling {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        Labeling(labels)
    }

    pub fn full(labels: &[usize]) -> Self {
        Labeling(labels.iter().map(|&l| Some(l)).collect())
    }

    /// Decodes the file convention where `-1` marks a hidden node.
    pub fn from_signed(values: &[i64]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(node, &v)| match v {
                -1 => Ok(None),
                v if v >= 0 => Ok(Some(v as usize)),
                _ => Err(Error::InvalidConfig(format!(
                    "label {v} at node {node} is negative"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Labeling)
    }

    pub fn to_signed(&self) -> Vec<i64> {
        self.0.iter().map(|l| l.map_or(-1, |v| v as i64)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.0[node]
    }

    pub fn set(&mut self, node: usize, label: Option<usize>) {
        self.0[node] = label;
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }

    pub fn observed_count(&self) -> usize {
        self.0.iter().filter(|l| l.is_some()).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    /// Labels of a fully observed labeling.
    pub fn to_full(&self) -> Result<Vec<usize>> {
        self.0
            .iter()
            .enumerate()
            .map(|(node, l)| l.ok_or(Error::HiddenLabel { node }))
            .collect()
    }

    /// Checks length and label ranges against `graph`.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.0.len() != graph.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "labeling has {} nodes, graph has {}",
                self.0.len(),
                graph.node_count()
            )));
        }
        for (node, l) in self.0.iter().enumerate() {
            if let Some(label) = *l {
                if label >= graph.labels(node) {
                    return Err(Error::LabelOutOfRange {
                        node,
                        label,
                        labels: graph.labels(node),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Indicator tables f(x) of a full labeling.
pub fn sufficient_stats(graph: &Arc<Graph>, x: &Labeling) -> Result<Tables> {
    x.validate(graph)?;
    let labels = x.to_full()?;
    let mut f = Tables::zeros(graph);
    for (i, &l) in labels.iter().enumerate() {
        f.unary_mut(i)[l] = 1.0;
    }
    for e in 0..graph.edge_count() {
        let (i, j) = graph.edge(e);
        f.edge_mut(e)[labels[i] * graph.labels(j) + labels[j]] = 1.0;
    }
    Ok(f)
}

/// Local-polytope membership: nonnegative entries, normalized node tables,
/// and edge tables whose row and column sums reproduce both node tables, all
/// within `tol`.
pub fn check_local_polytope(mu: &Marginals, tol: f64) -> bool {
    let g = mu.graph();
    if mu.as_slice().iter().any(|&v| !(v >= -tol)) {
        return false;
    }
    for i in 0..g.node_count() {
        let s: f64 = mu.unary(i).iter().sum();
        if (s - 1.0).abs() > tol {
            return false;
        }
    }
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let (li, lj) = (g.labels(i), g.labels(j));
        let t = mu.edge(e);
        let s: f64 = t.iter().sum();
        if (s - 1.0).abs() > tol {
            return false;
        }
        for a in 0..li {
            let row: f64 = t[a * lj..(a + 1) * lj].iter().sum();
            if (row - mu.unary(i)[a]).abs() > tol {
                return false;
            }
        }
        for b in 0..lj {
            let col: f64 = (0..li).map(|a| t[a * lj + b]).sum();
            if (col - mu.unary(j)[b]).abs() > tol {
                return false;
            }
        }
    }
    true
}
