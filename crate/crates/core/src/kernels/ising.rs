use rand::Rng;

use crate::coupling::{CoupledKernel, InitialDistribution};
use crate::error::{Error, Result};

/// Single-site heat-bath Gibbs sweeps for the Ising model on a periodic
/// `side x side` lattice, `pi(x) ∝ exp(beta * sum_{i~j} x_i x_j)`.
///
/// The coupled sweep visits sites in the same fixed order for both chains and
/// feeds both heat-bath updates one shared uniform per site.
#[derive(Debug, Clone)]
pub struct CoupledIsingSsg {
    side: usize,
    beta: f64,
    neighbors: Vec<[usize; 4]>,
    // P(spin = +1) indexed by (neighbor sum + 4) / 2
    up_prob: [f64; 5],
}

impl CoupledIsingSsg {
    pub fn new(side: usize, beta: f64) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidConfig(format!(
                "lattice side must be at least 2, got {side}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        let n = side;
        let neighbors = (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                [
                    ((r + n - 1) % n) * n + c,
                    ((r + 1) % n) * n + c,
                    r * n + (c + n - 1) % n,
                    r * n + (c + 1) % n,
                ]
            })
            .collect();
        let mut up_prob = [0.0; 5];
        for (idx, p) in up_prob.iter_mut().enumerate() {
            let field = 2.0 * idx as f64 - 4.0;
            *p = 1.0 / (1.0 + (-2.0 * beta * field).exp());
        }
        Ok(CoupledIsingSsg {
            side,
            beta,
            neighbors,
            up_prob,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    fn prob_up(&self, spins: &[i8], site: usize) -> f64 {
        let field: i32 = self.neighbors[site].iter().map(|&j| i32::from(spins[j])).sum();
        self.up_prob[((field + 4) / 2) as usize]
    }

    /// Mean spin.
    pub fn magnetization(spins: &[i8]) -> f64 {
        spins.iter().map(|&s| f64::from(s)).sum::<f64>() / spins.len() as f64
    }
}

fn spin(u: f64, p_up: f64) -> i8 {
    if u < p_up {
        1
    } else {
        -1
    }
}

impl CoupledKernel for CoupledIsingSsg {
    type State = Vec<i8>;

    fn marginal_step<R: Rng + ?Sized>(&self, x: &Vec<i8>, rng: &mut R) -> Result<Vec<i8>> {
        let mut s = x.clone();
        for site in 0..s.len() {
            let p = self.prob_up(&s, site);
            s[site] = spin(rng.random(), p);
        }
        Ok(s)
    }

    fn joint_step<R: Rng + ?Sized>(&self, x: &Vec<i8>, y: &Vec<i8>, rng: &mut R) -> Result<(Vec<i8>, Vec<i8>)> {
        let mut a = x.clone();
        let mut b = y.clone();
        for site in 0..a.len() {
            let u: f64 = rng.random();
            let pa = self.prob_up(&a, site);
            let pb = self.prob_up(&b, site);
            a[site] = spin(u, pa);
            b[site] = spin(u, pb);
        }
        Ok((a, b))
    }
}

/// Independent fair spins on every site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformSpins {
    pub sites: usize,
}

impl InitialDistribution<Vec<i8>> for UniformSpins {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i8> {
        (0..self.sites)
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn periodic_neighbors() {
        let k = CoupledIsingSsg::new(3, 0.3).unwrap();
        assert_eq!(k.neighbors[0], [6, 3, 2, 1]);
        assert_eq!(k.neighbors[4], [1, 7, 3, 5]);
        assert!(CoupledIsingSsg::new(1, 0.3).is_err());
        assert!(CoupledIsingSsg::new(4, 0.0).is_err());
    }

    #[test]
    fn heat_bath_probabilities() {
        let k = CoupledIsingSsg::new(4, 0.2).unwrap();
        assert!((k.up_prob[2] - 0.5).abs() < 1e-15);
        assert!((k.up_prob[4] - 1.0 / (1.0 + (-1.6f64).exp())).abs() < 1e-15);
        assert!((k.up_prob[0] + k.up_prob[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_configurations_stay_identical() {
        let k = CoupledIsingSsg::new(4, 0.4).unwrap();
        let mut rng = stream(1, &[]);
        let mut x = UniformSpins { sites: 16 }.sample(&mut rng);
        let mut y = x.clone();
        for _ in 0..10_000 {
            (x, y) = k.joint_step(&x, &y, &mut rng).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn infinite_temperature_meets_in_one_sweep() {
        let k = CoupledIsingSsg::new(6, 1e-9).unwrap();
        let mut rng = stream(2, &[]);
        let start = UniformSpins { sites: 36 };
        for _ in 0..200 {
            let x = start.sample(&mut rng);
            let y = start.sample(&mut rng);
            let (a, b) = k.joint_step(&x, &y, &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }
}
