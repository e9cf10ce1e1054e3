use super::GradResult;
use crate::error::{Error, Result};
use crate::infer::{infer, InferenceConfig};
use crate::model::{Params, Tables};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    One,
    Two,
    Four,
}

impl Sides {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Sides::One),
            2 => Ok(Sides::Two),
            4 => Ok(Sides::Four),
            _ => Err(Error::InvalidConfig(alloc::format!(
                "sides must be 1, 2 or 4, got {n}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    pub sides: Sides,
    pub multiplier: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            sides: Sides::Two,
            multiplier: 1.0,
        }
    }
}

/// `m ε^{1/3} (1 + ‖θ‖∞) / ‖dQ/dμ‖∞`, or `None` when the loss gradient is
/// identically zero.
pub fn perturb_step_size(theta: &Params, dq_dmu: &Tables, multiplier: f64) -> Option<f64> {
    let norm = dq_dmu.max_abs();
    if norm == 0.0 {
        return None;
    }
    Some(multiplier * libm::cbrt(f64::EPSILON) * (1.0 + theta.max_abs()) / norm)
}

/// Finite differences of the marginals along `dQ/dμ`. Trace recording in
/// `config` is ignored.
pub fn perturbation_grad(
    theta: &Params,
    config: &InferenceConfig,
    dq_dmu: &Tables,
    pconfig: &PerturbationConfig,
) -> Result<GradResult> {
    if !dq_dmu.same_layout(theta) {
        return Err(Error::ShapeMismatch(
            "loss gradient does not match the parameters".into(),
        ));
    }
    if !(pconfig.multiplier > 0.0) {
        return Err(Error::InvalidConfig(
            "perturbation multiplier must be positive".into(),
        ));
    }
    let Some(r) = perturb_step_size(theta, dq_dmu, pconfig.multiplier) else {
        return Ok(GradResult::new(Tables::zeros(theta.graph())));
    };
    let config = config.clone().with_trace(false);
    let mut calls = 0;
    let mut clamps = 0;
    let mut at = |step: f64| -> Result<Tables> {
        let mut shifted = theta.clone();
        shifted.axpy(step, dq_dmu)?;
        let out = infer(&shifted, &config)?;
        calls += 1;
        clamps += out.clamps;
        Ok(out.marginals)
    };
    let grad = match pconfig.sides {
        Sides::One => {
            let mut g = at(r)?;
            g.axpy(-1.0, &at(0.0)?)?;
            g.scale(1.0 / r);
            g
        }
        Sides::Two => {
            let mut g = at(r)?;
            g.axpy(-1.0, &at(-r)?)?;
            g.scale(1.0 / (2.0 * r));
            g
        }
        Sides::Four => {
            let mut g = at(r)?;
            g.scale(8.0);
            g.axpy(-8.0, &at(-r)?)?;
            g.axpy(-1.0, &at(2.0 * r)?)?;
            g.axpy(1.0, &at(-2.0 * r)?)?;
            g.scale(1.0 / (12.0 * r));
            g
        }
    };
    if !grad.is_finite() {
        return Err(Error::NonFinite("perturbation gradient"));
    }
    let mut out = GradResult::new(grad);
    out.inference_calls = calls;
    out.step = Some(r);
    out.clamps = clamps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::random_params;
    use crate::infer::Mode;
    use crate::model::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_size_cases() {
        let g = Graph::chain(2, 2).unwrap();
        let theta = Tables::zeros(&g);
        let mut dq = Tables::zeros(&g);
        assert_eq!(perturb_step_size(&theta, &dq, 1.0), None);
        dq.as_mut_slice()[0] = 1.0;
        let r = perturb_step_size(&theta, &dq, 1.0).unwrap();
        assert!((r - 6.055454452393343e-6).abs() < 1e-18);
        let mut dq10 = dq.clone();
        dq10.scale(10.0);
        assert!((perturb_step_size(&theta, &dq10, 1.0).unwrap() - r / 10.0).abs() < 1e-20);
        let mut theta9 = theta.clone();
        theta9.as_mut_slice()[3] = -9.0;
        assert!((perturb_step_size(&theta9, &dq, 1.0).unwrap() - 10.0 * r).abs() < 1e-18);
    }

    #[test]
    fn zero_loss_gradient_needs_no_inference() {
        let g = Graph::chain(3, 2).unwrap();
        let theta = Tables::zeros(&g);
        let cfg = InferenceConfig::mean_field(Mode::Truncated(3));
        let r = perturbation_grad(
            &theta,
            &cfg,
            &Tables::zeros(&g),
            &PerturbationConfig::default(),
        )
        .unwrap();
        assert_eq!(r.inference_calls, 0);
        assert!(r.grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn call_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::chain(3, 2).unwrap();
        let theta = random_params(&g, 1.0, 1.0, &mut rng);
        let dq = random_params(&g, 1.0, 1.0, &mut rng);
        let cfg = InferenceConfig::mean_field(Mode::Truncated(3));
        for (n, sides) in [(2, Sides::One), (2, Sides::Two), (4, Sides::Four)] {
            let p = PerturbationConfig {
                sides,
                multiplier: 1.0,
            };
            assert_eq!(
                perturbation_grad(&theta, &cfg, &dq, &p)
                    .unwrap()
                    .inference_calls,
                n
            );
        }
        assert!(Sides::from_count(3).is_err());
    }
}
