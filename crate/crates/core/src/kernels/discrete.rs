use rand::Rng;
use serde::{Deserialize, Serialize};

use super::maximal::{maximal_coupling_sample, Categorical};
use crate::coupling::CoupledKernel;
use crate::error::{Error, Result};

/// Row-stochastic matrix with rows summing to one within `1e-12`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMatrix("matrix has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Total-variation distance between rows `a` and `b`.
    pub fn row_tv(&self, a: usize, b: usize) -> f64 {
        0.5 * self.rows[a]
            .iter()
            .zip(&self.rows[b])
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionMatrix::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.rows
    }
}

/// Maximal coupling of the two categorical rows at `x` and `y`.
#[derive(Debug, Clone)]
pub struct DiscreteMatrixKernel {
    matrix: TransitionMatrix,
    rows: Vec<Categorical>,
}

impl DiscreteMatrixKernel {
    pub fn new(matrix: TransitionMatrix) -> Result<Self> {
        let rows = matrix
            .rows()
            .iter()
            .map(|r| Categorical::new(r.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteMatrixKernel { matrix, rows })
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }
}

impl CoupledKernel for DiscreteMatrixKernel {
    type State = usize;

    fn marginal_step<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> Result<usize> {
        Ok(self.rows[*x].draw(rng))
    }

    fn joint_step<R: Rng + ?Sized>(&self, x: &usize, y: &usize, rng: &mut R) -> Result<(usize, usize)> {
        if x == y {
            let z = self.rows[*x].draw(rng);
            return Ok((z, z));
        }
        let d = maximal_coupling_sample(&self.rows[*x], &self.rows[*y], rng)?;
        Ok((d.p_sample, d.q_sample))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn two_state() -> DiscreteMatrixKernel {
        DiscreteMatrixKernel::new(TransitionMatrix::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()).unwrap()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(TransitionMatrix::new(vec![vec![0.7, 0.2], vec![0.4, 0.6]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0]; 2]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![]).is_err());
    }

    #[test]
    fn diagonal_is_absorbing() {
        let k = two_state();
        let mut rng = stream(1, &[]);
        let (mut x, mut y) = (1usize, 1usize);
        for _ in 0..10_000 {
            (x, y) = k.joint_step(&x, &y, &mut rng).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn one_step_meeting_probability() {
        let k = two_state();
        let mut rng = stream(2, &[]);
        let n = 100_000;
        let met = (0..n)
            .filter(|_| {
                let (a, b) = k.joint_step(&0, &1, &mut rng).unwrap();
                a == b
            })
            .count() as f64;
        let target = 1.0 - k.matrix().row_tv(0, 1);
        assert!((target - 0.7).abs() < 1e-15);
        let sigma = (target * (1.0 - target) * n as f64).sqrt();
        assert!((met - target * n as f64).abs() < 3.0 * sigma);
    }
}
