//! Concrete coupled kernels and the maximal coupling they are built from.
//!
//! Each kernel implements [`CoupledKernel`](crate::coupling::CoupledKernel)
//! with faithful marginals and an absorbing diagonal. Meeting is always an
//! exact event: maximal couplings return the *same* value for both chains
//! when they couple.

mod discrete;
mod gibbs;
mod ising;
mod maximal;
mod rwm;

pub use discrete::{DiscreteMatrixKernel, TransitionMatrix};
pub use gibbs::CoupledGibbsGaussian;
pub use ising::{CoupledIsingSsg, UniformSpins};
pub use maximal::{maximal_coupling_sample, Bernoulli, Categorical, CoupledDraw, CouplingMarginal, IsoNormal, Normal1};
pub use rwm::{CoupledRwm, FnDensity, GaussianStart, LogDensity, StdGaussian};

/// Real-valued view of a state, used to evaluate test functions by name.
pub trait Observable {
    fn coordinates(&self) -> Vec<f64>;

    /// Index of a discrete state, when the state space is finite and indexed.
    fn category(&self) -> Option<usize> {
        None
    }
}

impl Observable for usize {
    fn coordinates(&self) -> Vec<f64> {
        vec![*self as f64]
    }

    fn category(&self) -> Option<usize> {
        Some(*self)
    }
}

impl Observable for Vec<f64> {
    fn coordinates(&self) -> Vec<f64> {
        self.clone()
    }
}

impl Observable for [f64; 2] {
    fn coordinates(&self) -> Vec<f64> {
        self.to_vec()
    }
}

impl Observable for Vec<i8> {
    fn coordinates(&self) -> Vec<f64> {
        self.iter().map(|&s| f64::from(s)).collect()
    }
}
