//! Limited-memory BFGS with a strong-Wolfe line search.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop when the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by less than
    /// `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    pub memory: usize,
    /// Drop the curvature memory and retry along −g when the direction is
    /// not a descent direction or the line search fails.
    pub restart_on_bad_direction: bool,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 100,
            grad_tol: 1e-6,
            f_tol: 1e-12,
            memory: 10,
            restart_on_bad_direction: true,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No acceptable step along −g; the last good iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<'a> {
    pub iteration: usize,
    /// The accepted iterate.
    pub x: &'a [f64],
    pub value: f64,
    pub grad_norm: f64,
    /// Objective evaluations so far, including the initial one.
    pub evaluations: usize,
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizes `f`, which returns the value and gradient. `on_step` is
/// called after the initial evaluation (iteration 0) and after every
/// accepted step. Errors from `f` at the starting point are returned;
/// errors or non-finite values during a line search are treated as a step
/// that went too far.
pub fn minimize<F, C>(
    x0: Vec<f64>,
    mut f: F,
    config: &LbfgsConfig,
    mut on_step: C,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(&Step<'_>),
{
    let (f0, g0) = f(&x0)?;
    let mut evals = 1;
    let mut cur = Point {
        x: x0,
        f: f0,
        g: g0,
    };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    on_step(&Step {
        iteration: 0,
        x: &cur.x,
        value: cur.f,
        grad_norm: norm(&cur.g),
        evaluations: evals,
        restarted: false,
    });
    let mut iteration = 0;
    let status = loop {
        if norm(&cur.g) <= config.grad_tol {
            break Status::GradientTolerance;
        }
        if iteration >= config.max_iters {
            break Status::MaxIterations;
        }
        let mut restarted = false;
        let mut d = direction(&cur.g, &memory);
        if dot(&d, &cur.g) >= 0.0 {
            memory.clear();
            d = cur.g.iter().map(|v| -v).collect();
            restarted = true;
        }
        let init = if memory.is_empty() {
            (1.0 / norm(&cur.g)).min(1.0)
        } else {
            1.0
        };
        let mut found = line_search(&mut f, &cur, &d, init, config, &mut evals);
        if found.is_none() && !memory.is_empty() && config.restart_on_bad_direction {
            memory.clear();
            d = cur.g.iter().map(|v| -v).collect();
            restarted = true;
            found = line_search(
                &mut f,
                &cur,
                &d,
                (1.0 / norm(&cur.g)).min(1.0),
                config,
                &mut evals,
            );
        }
        let Some(next) = found else {
            break Status::LineSearchFailed;
        };
        iteration += 1;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if memory.len() == config.memory.max(1) {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let decrease = cur.f - next.f;
        cur = next;
        on_step(&Step {
            iteration,
            x: &cur.x,
            value: cur.f,
            grad_norm: norm(&cur.g),
            evaluations: evals,
            restarted,
        });
        if decrease <= config.f_tol * cur.f.abs().max(1.0) {
            break Status::FunctionTolerance;
        }
    };
    Ok(Minimum {
        x: cur.x,
        value: cur.f,
        grad: cur.g,
        iterations: iteration,
        evaluations: evals,
        status,
    })
}

fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn line_search<F>(
    f: &mut F,
    start: &Point,
    d: &[f64],
    init: f64,
    config: &LbfgsConfig,
    evals: &mut usize,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let phi0 = start.f;
    let dphi0 = dot(&start.g, d);
    if !(dphi0 < 0.0) {
        return None;
    }
    let mut eval = |alpha: f64, evals: &mut usize| -> Option<(Point, f64)> {
        let x: Vec<f64> = start.x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        *evals += 1;
        match f(&x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                let dphi = dot(&g, d);
                Some((Point { x, f: v, g }, dphi))
            }
            _ => None,
        }
    };
    let armijo = |alpha: f64, v: f64| v <= phi0 + config.c1 * alpha * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -config.c2 * dphi0;

    let (mut lo, mut lo_f, mut lo_d) = (0.0, phi0, dphi0);
    let mut lo_pt: Option<Point> = None;
    // `hi_f` is `None` when the evaluation at `hi` failed.
    let (mut hi, mut hi_f): (f64, Option<f64>);
    let mut alpha = init;
    let mut used = 0;
    // Bracketing phase.
    loop {
        if used >= config.max_line_search {
            return lo_pt;
        }
        used += 1;
        match eval(alpha, evals) {
            None => {
                (hi, hi_f) = (alpha, None);
                break;
            }
            Some((p, dphi)) => {
                if !armijo(alpha, p.f) || (lo > 0.0 && p.f >= lo_f) {
                    (hi, hi_f) = (alpha, Some(p.f));
                    break;
                }
                if curvature(dphi) {
                    return Some(p);
                }
                if dphi >= 0.0 {
                    (hi, hi_f) = (lo, Some(lo_f));
                    (lo, lo_f, lo_d) = (alpha, p.f, dphi);
                    lo_pt = Some(p);
                    break;
                }
                (lo, lo_f, lo_d) = (alpha, p.f, dphi);
                lo_pt = Some(p);
                alpha *= 2.0;
            }
        }
    }
    // Zoom phase.
    loop {
        if used >= config.max_line_search {
            return lo_pt;
        }
        used += 1;
        let delta = hi - lo;
        let mut a = lo + 0.5 * delta;
        if let Some(fh) = hi_f {
            // Minimizer of the quadratic matching value and slope at `lo`
            // and the value at `hi`.
            let curv = fh - lo_f - lo_d * delta;
            if curv > 0.0 {
                a = lo - lo_d * delta * delta / (2.0 * curv);
            }
        }
        let (left, right) = (lo.min(hi), lo.max(hi));
        a = a.clamp(left + 0.1 * (right - left), right - 0.1 * (right - left));
        match eval(a, evals) {
            None => (hi, hi_f) = (a, None),
            Some((p, dphi)) => {
                if !armijo(a, p.f) || p.f >= lo_f {
                    (hi, hi_f) = (a, Some(p.f));
                } else {
                    if curvature(dphi) {
                        return Some(p);
                    }
                    if dphi * (hi - lo) >= 0.0 {
                        (hi, hi_f) = (lo, Some(lo_f));
                    }
                    (lo, lo_f, lo_d) = (a, p.f, dphi);
                    lo_pt = Some(p);
                }
            }
        }
        if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
            return lo_pt;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((v, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = LbfgsConfig {
            max_iters: 500,
            grad_tol: 1e-8,
            f_tol: 0.0,
            ..Default::default()
        };
        let mut values = Vec::new();
        let m = minimize(vec![-1.2, 1.0], rosenbrock, &cfg, |s| values.push(s.value)).unwrap();
        assert_eq!(m.status, Status::GradientTolerance);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn solves_a_quadratic_exactly() {
        let diag = [1.0, 10.0, 100.0, 0.5];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = x
                .iter()
                .zip(&diag)
                .map(|(a, d)| 0.5 * d * (a - 1.0).powi(2))
                .sum();
            Ok((v, x.iter().zip(&diag).map(|(a, d)| d * (a - 1.0)).collect()))
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            f_tol: 0.0,
            ..Default::default()
        };
        let m = minimize(vec![0.0; 4], f, &cfg, |_| {}).unwrap();
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn backs_off_from_non_finite_regions() {
        // Finite only for x < 2; minimum at 1.9 is approached from x = 0.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] >= 2.0 {
                return Ok((f64::NAN, vec![f64::NAN]));
            }
            Ok(((x[0] - 1.9).powi(2), vec![2.0 * (x[0] - 1.9)]))
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-9,
            f_tol: 0.0,
            ..Default::default()
        };
        let m = minimize(vec![-50.0], f, &cfg, |_| {}).unwrap();
        assert!((m.x[0] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn reports_the_start_when_no_step_is_possible() {
        // Gradient points the wrong way, so no step decreases the value.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0], vec![-1.0])) };
        let m = minimize(vec![0.0], f, &LbfgsConfig::default(), |_| {}).unwrap();
        assert_eq!(m.status, Status::LineSearchFailed);
        assert_eq!(m.x, vec![0.0]);
    }
}
