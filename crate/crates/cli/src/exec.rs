//! Thread-pool executor and wall clock for the trainer.

use std::time::Instant;

use margfit_core::trainer::{Clock, Executor, InstanceEval};
use margfit_core::Result;
use rayon::prelude::*;

use crate::CliError;

/// Runs per-instance jobs on a dedicated rayon pool.
///
/// Sums are reduced in whatever order the pool finishes unless
/// `deterministic` is set, in which case they are added in instance order.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
    deterministic: bool,
}

impl RayonExecutor {
    pub fn new(workers: usize, deterministic: bool) -> Result<Self, CliError> {
        if workers == 0 {
            return Err(CliError::input("--workers must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::input(format!("cannot start {workers} workers: {e}")))?;
        Ok(RayonExecutor {
            pool,
            deterministic,
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs `f` inside the pool, so rayon iterators in it use these workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Executor for RayonExecutor {
    fn map(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<InstanceEval> + Sync),
    ) -> Vec<Result<InstanceEval>> {
        self.pool
            .install(|| (0..count).into_par_iter().map(job).collect())
    }

    fn sum(
        &self,
        count: usize,
        width: usize,
        job: &(dyn Fn(usize) -> Result<InstanceEval> + Sync),
    ) -> Result<InstanceEval> {
        if self.deterministic || self.workers() == 1 {
            let mut total = InstanceEval::zero(width);
            for r in self.map(count, job) {
                total.accumulate(&r?);
            }
            return Ok(total);
        }
        self.pool.install(|| {
            (0..count)
                .into_par_iter()
                .map(job)
                .try_fold(
                    || InstanceEval::zero(width),
                    |mut acc, r| {
                        acc.accumulate(&r?);
                        Ok(acc)
                    },
                )
                .try_reduce(
                    || InstanceEval::zero(width),
                    |mut a, b| {
                        a.accumulate(&b);
                        Ok(a)
                    },
                )
        })
    }
}

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use margfit_core::Error;

    fn job(k: usize) -> Result<InstanceEval> {
        let x = 1.0 / (k as f64 + 1.0);
        Ok(InstanceEval {
            value: x,
            grad: vec![x, -x],
            inference_calls: 1,
            clamps: 0,
        })
    }

    #[test]
    fn map_keeps_instance_order() {
        let ex = RayonExecutor::new(3, false).unwrap();
        let out = ex.map(50, &job);
        for (k, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap(), job(k).unwrap());
        }
    }

    #[test]
    fn deterministic_sum_matches_sequential_bit_for_bit() {
        let seq = margfit_core::trainer::Sequential.sum(200, 2, &job).unwrap();
        let par = RayonExecutor::new(4, true)
            .unwrap()
            .sum(200, 2, &job)
            .unwrap();
        assert_eq!(par, seq);
        let loose = RayonExecutor::new(4, false)
            .unwrap()
            .sum(200, 2, &job)
            .unwrap();
        assert!((loose.value - seq.value).abs() < 1e-12);
        assert_eq!(loose.inference_calls, 200);
    }

    #[test]
    fn errors_propagate() {
        let failing = |k: usize| {
            if k == 7 {
                Err(Error::NoObservedNodes)
            } else {
                job(k)
            }
        };
        for det in [false, true] {
            let ex = RayonExecutor::new(2, det).unwrap();
            assert_eq!(ex.sum(20, 2, &failing), Err(Error::NoObservedNodes));
        }
    }

    #[test]
    fn zero_workers_is_a_usage_error() {
        assert!(RayonExecutor::new(0, false).is_err());
    }
}
