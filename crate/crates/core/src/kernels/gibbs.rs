use rand::Rng;

use super::maximal::{maximal_coupling_sample, CouplingMarginal, Normal1};
use crate::coupling::CoupledKernel;
use crate::error::{Error, Result};

/// Systematic-scan Gibbs sampler for a bivariate standard Gaussian with
/// correlation `rho`; each conditional update is maximally coupled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledGibbsGaussian {
    rho: f64,
    cond_sd: f64,
}

impl CoupledGibbsGaussian {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "correlation must lie in (-1, 1), got {rho}"
            )));
        }
        Ok(CoupledGibbsGaussian {
            rho,
            cond_sd: (1.0 - rho * rho).sqrt(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn conditional(&self, other: f64) -> Normal1 {
        Normal1 {
            mean: self.rho * other,
            sd: self.cond_sd,
        }
    }
}

impl CoupledKernel for CoupledGibbsGaussian {
    type State = [f64; 2];

    fn marginal_step<R: Rng + ?Sized>(&self, x: &[f64; 2], rng: &mut R) -> Result<[f64; 2]> {
        let a = self.conditional(x[1]).sample(rng);
        let b = self.conditional(a).sample(rng);
        Ok([a, b])
    }

    fn joint_step<R: Rng + ?Sized>(&self, x: &[f64; 2], y: &[f64; 2], rng: &mut R) -> Result<([f64; 2], [f64; 2])> {
        if x == y {
            let z = self.marginal_step(x, rng)?;
            return Ok((z, z));
        }
        let first = maximal_coupling_sample(&self.conditional(x[1]), &self.conditional(y[1]), rng)?;
        let second = maximal_coupling_sample(
            &self.conditional(first.p_sample),
            &self.conditional(first.q_sample),
            rng,
        )?;
        Ok(([first.p_sample, second.p_sample], [first.q_sample, second.q_sample]))
    }
}
