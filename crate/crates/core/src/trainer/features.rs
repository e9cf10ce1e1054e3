use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Graph, Labeling, Params, Tables};

/// One training example: a graph, per-node and per-edge feature vectors and
/// the (possibly partial) target labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: Arc<Graph>,
    /// `node_count × unary_dim`, row-major.
    pub unary_features: Vec<f64>,
    /// `edge_count × edge_dim`, row-major.
    pub edge_features: Vec<f64>,
    pub target: Labeling,
}

impl Instance {
    pub fn new(
        graph: Arc<Graph>,
        unary_features: Vec<f64>,
        edge_features: Vec<f64>,
        target: Labeling,
    ) -> Result<Self> {
        let inst = Instance {
            graph,
            unary_features,
            edge_features,
            target,
        };
        inst.target.validate(&inst.graph)?;
        if inst.graph.node_count() == 0 {
            return Err(Error::InvalidGraph("instance has no nodes".into()));
        }
        if !inst
            .unary_features
            .len()
            .is_multiple_of(inst.graph.node_count())
        {
            return Err(Error::ShapeMismatch(format!(
                "{} unary feature values for {} nodes",
                inst.unary_features.len(),
                inst.graph.node_count()
            )));
        }
        let m = inst.graph.edge_count();
        if (m == 0 && !inst.edge_features.is_empty())
            || (m > 0 && !inst.edge_features.len().is_multiple_of(m))
        {
            return Err(Error::ShapeMismatch(format!(
                "{} edge feature values for {m} edges",
                inst.edge_features.len()
            )));
        }
        if inst
            .unary_features
            .iter()
            .chain(&inst.edge_features)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("features"));
        }
        Ok(inst)
    }

    pub fn unary_dim(&self) -> usize {
        self.unary_features.len() / self.graph.node_count()
    }

    /// Edge feature dimension, or `None` for a graph without edges.
    pub fn edge_dim(&self) -> Option<usize> {
        let m = self.graph.edge_count();
        (m > 0).then(|| self.edge_features.len() / m)
    }

    pub fn unary(&self, node: usize) -> &[f64] {
        let d = self.unary_dim();
        &self.unary_features[node * d..(node + 1) * d]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        let d = self.edge_features.len() / self.graph.edge_count();
        &self.edge_features[e * d..(e + 1) * d]
    }
}

/// Linear conditional parametrization `θ_i = F u_i`, `θ_ij = G v_ij`.
///
/// `F` is `labels × unary_dim` and `G` is `labels² × edge_dim`, both
/// row-major. Row `a·labels + b` of `G` produces the edge entry for the
/// lower endpoint in state `a` and the higher one in state `b`. The flat
/// weight vector is `F` followed by `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub labels: usize,
    pub unary_dim: usize,
    pub edge_dim: usize,
    pub weights: Vec<f64>,
}

impl FeatureModel {
    pub fn zeros(labels: usize, unary_dim: usize, edge_dim: usize) -> Self {
        FeatureModel {
            labels,
            unary_dim,
            edge_dim,
            weights: vec![0.0; labels * unary_dim + labels * labels * edge_dim],
        }
    }

    pub fn from_parts(
        labels: usize,
        unary_dim: usize,
        edge_dim: usize,
        f: &[f64],
        g: &[f64],
    ) -> Result<Self> {
        let mut m = Self::zeros(labels, unary_dim, edge_dim);
        if f.len() != m.f_len() || g.len() != m.weights.len() - m.f_len() {
            return Err(Error::ShapeMismatch(format!(
                "F has {} entries (want {}), G has {} (want {})",
                f.len(),
                m.f_len(),
                g.len(),
                m.weights.len() - m.f_len()
            )));
        }
        m.weights[..f.len()].copy_from_slice(f);
        m.weights[f.len()..].copy_from_slice(g);
        Ok(m)
    }

    pub fn f_len(&self) -> usize {
        self.labels * self.unary_dim
    }

    pub fn f(&self) -> &[f64] {
        &self.weights[..self.f_len()]
    }

    pub fn g(&self) -> &[f64] {
        &self.weights[self.f_len()..]
    }

    /// Checks that `inst` has the label count and feature sizes this model
    /// expects.
    pub fn check(&self, inst: &Instance) -> Result<()> {
        if inst.graph.label_counts().iter().any(|&l| l != self.labels) {
            return Err(Error::ShapeMismatch(format!(
                "model has {} labels per node, instance differs",
                self.labels
            )));
        }
        if inst.unary_dim() != self.unary_dim {
            return Err(Error::ShapeMismatch(format!(
                "unary feature dimension {} differs from model's {}",
                inst.unary_dim(),
                self.unary_dim
            )));
        }
        if let Some(d) = inst.edge_dim() {
            if d != self.edge_dim {
                return Err(Error::ShapeMismatch(format!(
                    "edge feature dimension {d} differs from model's {}",
                    self.edge_dim
                )));
            }
        }
        Ok(())
    }

    pub fn build_theta(&self, inst: &Instance) -> Result<Params> {
        self.check(inst)?;
        let g = &inst.graph;
        let l = self.labels;
        let mut theta = Tables::zeros(g);
        let (fw, gw) = (self.f(), self.g());
        for i in 0..g.node_count() {
            let u = inst.unary(i);
            for (a, t) in theta.unary_mut(i).iter_mut().enumerate() {
                *t = dot(&fw[a * self.unary_dim..(a + 1) * self.unary_dim], u);
            }
        }
        for e in 0..g.edge_count() {
            let v = inst.edge(e);
            for (ab, t) in theta.edge_mut(e).iter_mut().enumerate().take(l * l) {
                *t = dot(&gw[ab * self.edge_dim..(ab + 1) * self.edge_dim], v);
            }
        }
        Ok(theta)
    }

    /// `dL/dF = Σ_i dθ_i u_iᵀ` and `dL/dG = Σ_e dθ_e v_eᵀ`, flattened like
    /// the weights.
    pub fn backprop_features(&self, dtheta: &Tables, inst: &Instance) -> Result<Vec<f64>> {
        self.check(inst)?;
        if dtheta.graph().as_ref() != inst.graph.as_ref() {
            return Err(Error::ShapeMismatch(
                "gradient tables do not match the instance".into(),
            ));
        }
        let g = &inst.graph;
        let mut out = vec![0.0; self.weights.len()];
        let (df, dg) = out.split_at_mut(self.f_len());
        for i in 0..g.node_count() {
            let u = inst.unary(i);
            for (a, &d) in dtheta.unary(i).iter().enumerate() {
                if d != 0.0 {
                    for (w, x) in df[a * self.unary_dim..(a + 1) * self.unary_dim]
                        .iter_mut()
                        .zip(u)
                    {
                        *w += d * x;
                    }
                }
            }
        }
        for e in 0..g.edge_count() {
            let v = inst.edge(e);
            for (ab, &d) in dtheta.edge(e).iter().enumerate() {
                if d != 0.0 {
                    for (w, x) in dg[ab * self.edge_dim..(ab + 1) * self.edge_dim]
                        .iter_mut()
                        .zip(v)
                    {
                        *w += d * x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Indices of the `G` block in the flat weight vector.
    pub fn edge_weight_range(&self) -> core::ops::Range<usize> {
        self.f_len()..self.weights.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
