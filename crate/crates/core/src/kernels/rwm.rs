use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::maximal::{maximal_coupling_sample, IsoNormal};
use crate::coupling::{CoupledKernel, InitialDistribution};
use crate::error::{Error, Result};

/// Unnormalized log target density on `R^d`.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Standard Gaussian `N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdGaussian {
    pub dim: usize,
}

impl LogDensity for StdGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Wraps a closure as a [`LogDensity`].
pub struct FnDensity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Random-walk Metropolis with maximally coupled Gaussian proposals and one
/// shared acceptance uniform.
#[derive(Debug, Clone)]
pub struct CoupledRwm<T> {
    target: T,
    scale: f64,
}

impl<T: LogDensity> CoupledRwm<T> {
    pub fn new(target: T, proposal_scale: f64) -> Result<Self> {
        if !(proposal_scale.is_finite() && proposal_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "proposal scale must be positive, got {proposal_scale}"
            )));
        }
        Ok(CoupledRwm {
            target,
            scale: proposal_scale,
        })
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.target.log_density(x);
        if v.is_nan() {
            Err(Error::Evaluation(format!("log density is NaN at {x:?}")))
        } else {
            Ok(v)
        }
    }

    fn accept(&self, current: &[f64], proposal: &[f64], log_u: f64) -> Result<bool> {
        Ok(log_u < self.eval(proposal)? - self.eval(current)?)
    }
}

impl<T: LogDensity> CoupledKernel for CoupledRwm<T> {
    type State = Vec<f64>;

    fn marginal_step<R: Rng + ?Sized>(&self, x: &Vec<f64>, rng: &mut R) -> Result<Vec<f64>> {
        let proposal: Vec<f64> = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + self.scale * z
            })
            .collect();
        let log_u = rng.random::<f64>().ln();
        Ok(if self.accept(x, &proposal, log_u)? {
            proposal
        } else {
            x.clone()
        })
    }

    fn joint_step<R: Rng + ?Sized>(&self, x: &Vec<f64>, y: &Vec<f64>, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let px = IsoNormal {
            mean: x,
            sd: self.scale,
        };
        let py = IsoNormal {
            mean: y,
            sd: self.scale,
        };
        let draw = maximal_coupling_sample(&px, &py, rng)?;
        let log_u = rng.random::<f64>().ln();
        let nx = if self.accept(x, &draw.p_sample, log_u)? {
            draw.p_sample
        } else {
            x.clone()
        };
        let ny = if self.accept(y, &draw.q_sample, log_u)? {
            draw.q_sample
        } else {
            y.clone()
        };
        Ok((nx, ny))
    }
}

/// Independent `N(mean, sd^2)` coordinates, used to start continuous chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStart {
    pub dim: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GaussianStart {
    fn coordinate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd * z
    }
}

impl InitialDistribution<Vec<f64>> for GaussianStart {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| self.coordinate(rng)).collect()
    }
}

impl InitialDistribution<[f64; 2]> for GaussianStart {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [self.coordinate(rng), self.coordinate(rng)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{run_lagged_coupling, LagConfig};
    use crate::rng::stream;

    #[test]
    fn diagonal_is_absorbing() {
        let k = CoupledRwm::new(StdGaussian { dim: 2 }, 1.5).unwrap();
        let mut rng = stream(3, &[]);
        let mut x = vec![0.4, -1.0];
        let mut y = x.clone();
        for _ in 0..10_000 {
            (x, y) = k.joint_step(&x, &y, &mut rng).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn acceptance_rate_matches_uncoupled_chain() {
        let k = CoupledRwm::new(StdGaussian { dim: 1 }, 2.0).unwrap();
        let n = 100_000;
        // X-chain of the coupled pair, partner restarted far away so it never
        // meets; each joint step is a fresh frozen-partner draw.
        let mut rng = stream(4, &[]);
        let mut x = vec![0.0];
        let mut coupled_moves = 0usize;
        for i in 0..n {
            let y = vec![if i % 2 == 0 { 25.0 } else { -25.0 }];
            let (nx, _) = k.joint_step(&x, &y, &mut rng).unwrap();
            coupled_moves += usize::from(nx != x);
            x = nx;
        }
        let mut rng = stream(5, &[]);
        let mut x = vec![0.0];
        let mut plain_moves = 0usize;
        for _ in 0..n {
            let nx = k.marginal_step(&x, &mut rng).unwrap();
            plain_moves += usize::from(nx != x);
            x = nx;
        }
        let a = coupled_moves as f64 / n as f64;
        let b = plain_moves as f64 / n as f64;
        // Autocorrelated chains: use a generous effective sample size of n/10.
        let se = ((a * (1.0 - a) + b * (1.0 - b)) / (n as f64 / 10.0)).sqrt();
        assert!((a - b).abs() < 3.0 * se, "coupled {a}, plain {b}");
    }

    #[test]
    fn lag_one_coupling_always_meets() {
        let k = CoupledRwm::new(StdGaussian { dim: 1 }, 2.0).unwrap();
        let start = GaussianStart {
            dim: 1,
            mean: 0.0,
            sd: 3.0,
        };
        let config = LagConfig::new(1, 1_000_000, start).unwrap();
        for run in 0..1000u64 {
            let trace = run_lagged_coupling(&k, &config, &mut stream(6, &[run])).unwrap();
            assert!(trace.is_faithful());
        }
    }

    #[test]
    fn nan_target_propagates() {
        let k = CoupledRwm::new(
            FnDensity {
                dim: 1,
                f: |_: &[f64]| f64::NAN,
            },
            1.0,
        )
        .unwrap();
        let err = k.marginal_step(&vec![0.0], &mut stream(0, &[])).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
        assert!(CoupledRwm::new(StdGaussian { dim: 1 }, 0.0).is_err());
    }
}
