use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::GradResult;
use crate::error::{Error, Result};
use crate::model::{Marginals, Params, Tables};
use crate::numeric::FLOOR;

/// Hessian of the reweighted entropy with node and edge tables treated as
/// independent variables. Dense, indexed by the table layout.
pub fn entropy_trw_hessian(mu: &Marginals, rho: &[f64]) -> DMatrix<f64> {
    let g = mu.graph();
    let n = g.table_len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..g.node_count() {
        for (a, k) in g.unary_range(i).enumerate() {
            d[(k, k)] = -1.0 / mu.unary(i)[a].max(FLOOR);
        }
    }
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let lj = g.labels(j);
        let r = rho[e];
        let (ui, uj) = (g.unary_range(i).start, g.unary_range(j).start);
        let (mi, mj) = (mu.unary(i), mu.unary(j));
        for (k, idx) in g.edge_range(e).enumerate() {
            let (a, b) = (k / lj, k % lj);
            let p = mu.as_slice()[idx].max(FLOOR);
            let (pa, pb) = (mi[a].max(FLOOR), mj[b].max(FLOOR));
            d[(idx, idx)] = -r / p;
            d[(idx, ui + a)] = r / pa;
            d[(ui + a, idx)] = r / pa;
            d[(idx, uj + b)] = r / pb;
            d[(uj + b, idx)] = r / pb;
            d[(ui + a, ui + a)] -= r * p / (pa * pa);
            d[(uj + b, uj + b)] -= r * p / (pb * pb);
        }
    }
    d
}

/// Local-polytope equality constraints `B μ = d`: one normalization row per
/// node and the marginalization rows of every edge in both directions, with
/// the last column-sum row of each edge dropped as it is implied by the rest.
pub fn local_polytope_constraints(mu: &Marginals) -> DMatrix<f64> {
    let g = mu.graph();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..g.node_count() {
        rows.push(g.unary_range(i).map(|k| (k, 1.0)).collect());
    }
    for e in 0..g.edge_count() {
        let (i, j) = g.edge(e);
        let (li, lj) = (g.labels(i), g.labels(j));
        let base = g.edge_range(e).start;
        for a in 0..li {
            let mut row: Vec<(usize, f64)> = (0..lj).map(|b| (base + a * lj + b, 1.0)).collect();
            row.push((g.unary_range(i).start + a, -1.0));
            rows.push(row);
        }
        for b in 0..lj - 1 {
            let mut row: Vec<(usize, f64)> = (0..li).map(|a| (base + a * lj + b, 1.0)).collect();
            row.push((g.unary_range(j).start + b, -1.0));
            rows.push(row);
        }
    }
    let mut out = DMatrix::zeros(rows.len(), g.table_len());
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            out[(r, c)] = v;
        }
    }
    out
}

/// Gradient of the loss through the optimality conditions of the TRW
/// variational problem: `(D⁻¹Bᵀ(BD⁻¹Bᵀ)⁻¹BD⁻¹ − D⁻¹) dQ/dμ`. Only valid at
/// converged TRW marginals with every entry away from zero.
pub fn implicit_diff_grad(
    theta: &Params,
    mu: &Marginals,
    dq_dmu: &Tables,
    rho: &[f64],
) -> Result<GradResult> {
    if !mu.same_layout(theta) || !dq_dmu.same_layout(theta) {
        return Err(Error::ShapeMismatch(
            "marginals, loss gradient and parameters differ".into(),
        ));
    }
    if rho.len() != theta.graph().edge_count() {
        return Err(Error::InvalidRho(
            "rho length does not match the edge count".into(),
        ));
    }
    let d = entropy_trw_hessian(mu, rho);
    let b = local_polytope_constraints(mu);
    let q = DVector::from_column_slice(dq_dmu.as_slice());
    let d_lu = d.lu();
    let y = d_lu.solve(&q).ok_or(Error::SingularSystem)?;
    let d_inv_bt = d_lu.solve(&b.transpose()).ok_or(Error::SingularSystem)?;
    let schur = &b * &d_inv_bt;
    let z = schur.lu().solve(&(&b * &y)).ok_or(Error::SingularSystem)?;
    let grad = d_inv_bt * z - y;
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let tables = Tables::from_flat(theta.graph(), grad.iter().copied().collect())?;
    Ok(GradResult::new(tables))
}
