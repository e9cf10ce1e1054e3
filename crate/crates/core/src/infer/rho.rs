use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::Rho;
use crate::error::{Error, Result};
use crate::model::{grid_edges, EdgeKind, Graph};

/// Edge appearance probabilities derived from a uniform distribution over
/// an explicit list of spanning trees. Keeping the trees around certifies
/// that ρ lies in the spanning-tree polytope, which is what makes the TRW
/// objective an upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoAssignment {
    rho: Vec<f64>,
    trees: Vec<Vec<usize>>,
}

impl RhoAssignment {
    /// Each tree is a list of edge ids. Every tree must span the graph and
    /// every edge must appear in at least one tree.
    pub fn from_spanning_trees(graph: &Graph, trees: Vec<Vec<usize>>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidRho("no spanning trees given".into()));
        }
        let n = graph.node_count();
        let mut counts = vec![0usize; graph.edge_count()];
        for (t, tree) in trees.iter().enumerate() {
            if tree.len() + 1 != n {
                return Err(Error::InvalidRho(format!(
                    "tree {t} has {} edges, a spanning tree needs {}",
                    tree.len(),
                    n.saturating_sub(1)
                )));
            }
            let mut parent: Vec<usize> = (0..n).collect();
            for &e in tree {
                if e >= graph.edge_count() {
                    return Err(Error::InvalidRho(format!(
                        "tree {t} names unknown edge {e}"
                    )));
                }
                let (i, j) = graph.edge(e);
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri == rj {
                    return Err(Error::InvalidRho(format!("tree {t} contains a cycle")));
                }
                parent[ri] = rj;
                counts[e] += 1;
            }
        }
        if let Some(e) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidRho(format!("edge {e} is in no tree")));
        }
        let len = trees.len() as f64;
        Ok(RhoAssignment {
            rho: counts.iter().map(|&c| c as f64 / len).collect(),
            trees,
        })
    }

    /// Two combs on a `rows × cols` grid: every horizontal edge plus the
    /// first column, and every vertical edge plus the first row.
    pub fn grid_combs(rows: usize, cols: usize) -> Result<Self> {
        let graph = Graph::grid(rows, cols, 2)?;
        let edges = grid_edges(rows, cols);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (e, &((i, _), kind)) in edges.iter().enumerate() {
            let (r, c) = (i / cols, i % cols);
            match kind {
                EdgeKind::Horizontal => {
                    a.push(e);
                    if r == 0 {
                        b.push(e);
                    }
                }
                EdgeKind::Vertical => {
                    b.push(e);
                    if c == 0 {
                        a.push(e);
                    }
                }
            }
        }
        Self::from_spanning_trees(&graph, vec![a, b])
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn trees(&self) -> &[Vec<usize>] {
        &self.trees
    }

    pub fn spec(&self) -> Rho {
        Rho::PerEdge(Arc::new(self.rho.clone()))
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_combs_weights() {
        let rho = RhoAssignment::grid_combs(3, 4).unwrap();
        let edges = grid_edges(3, 4);
        for (e, &((i, _), kind)) in edges.iter().enumerate() {
            let shared = match kind {
                EdgeKind::Horizontal => i / 4 == 0,
                EdgeKind::Vertical => i % 4 == 0,
            };
            assert_eq!(rho.values()[e], if shared { 1.0 } else { 0.5 });
        }
        assert_eq!(rho.trees().len(), 2);
    }

    #[test]
    fn rejects_non_trees() {
        let g = Graph::grid(2, 2, 2).unwrap();
        assert!(RhoAssignment::from_spanning_trees(&g, vec![vec![0, 1]]).is_err());
        assert!(RhoAssignment::from_spanning_trees(&g, vec![vec![0, 1, 2, 3]]).is_err());
        assert!(RhoAssignment::from_spanning_trees(&g, vec![vec![0, 1, 2]]).is_err());
        let ok = RhoAssignment::from_spanning_trees(
            &g,
            vec![vec![0, 1, 2], vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3]],
        );
        assert_eq!(ok.unwrap().values(), &[0.75; 4]);
    }

    #[test]
    fn chain_combs_are_the_chain() {
        let rho = RhoAssignment::grid_combs(1, 5).unwrap();
        assert_eq!(rho.values(), &[1.0; 4]);
    }
}
