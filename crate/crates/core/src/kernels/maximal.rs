use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A distribution that can be both sampled and evaluated pointwise.
pub trait CouplingMarginal {
    type Value: Clone + PartialEq;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Value;

    /// Log density (or log mass); `-inf` off the support. `NaN` signals that
    /// the density cannot be evaluated.
    fn log_density(&self, x: &Self::Value) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDraw<T> {
    pub p_sample: T,
    pub q_sample: T,
    pub met: bool,
}

/// Draws `(X, Y)` with `X ~ p`, `Y ~ q` and `P(X == Y) = 1 - d_TV(p, q)`.
///
/// Sample `X ~ p` and keep it for `q` as well when `u p(X) <= q(X)`.
/// Otherwise draw `Y ~ q` until `u' q(Y) > p(Y)`; such a `Y` never equals `X`.
pub fn maximal_coupling_sample<P, Q, R>(p: &P, q: &Q, rng: &mut R) -> Result<CoupledDraw<P::Value>>
where
    P: CouplingMarginal,
    Q: CouplingMarginal<Value = P::Value>,
    R: Rng + ?Sized,
{
    let x = p.sample(rng);
    let lp = checked(p.log_density(&x))?;
    let lq = checked(q.log_density(&x))?;
    if log_uniform(rng) + lp <= lq {
        return Ok(CoupledDraw {
            p_sample: x.clone(),
            q_sample: x,
            met: true,
        });
    }
    loop {
        let y = q.sample(rng);
        let lq = checked(q.log_density(&y))?;
        let lp = checked(p.log_density(&y))?;
        if log_uniform(rng) + lq > lp {
            return Ok(CoupledDraw {
                p_sample: x,
                q_sample: y,
                met: false,
            });
        }
    }
}

fn checked(v: f64) -> Result<f64> {
    if v.is_nan() {
        Err(Error::NonEvaluableDensity)
    } else {
        Ok(v)
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bernoulli {
    pub p: f64,
}

impl CouplingMarginal for Bernoulli {
    type Value = bool;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.p
    }

    fn log_density(&self, x: &bool) -> f64 {
        if *x {
            self.p.ln()
        } else {
            (1.0 - self.p).ln()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub sd: f64,
}

impl CouplingMarginal for Normal1 {
    type Value = f64;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd * z
    }

    fn log_density(&self, x: &f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln()
    }
}

/// Isotropic Gaussian `N(mean, sd^2 I)` on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoNormal<'a> {
    pub mean: &'a [f64],
    pub sd: f64,
}

impl CouplingMarginal for IsoNormal<'_> {
    type Value = Vec<f64>;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.sd * z
            })
            .collect()
    }

    fn log_density(&self, x: &Vec<f64>) -> f64 {
        let ss: f64 = x.iter().zip(self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        -0.5 * ss / (self.sd * self.sd)
    }
}

/// Finite distribution over `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidMatrix("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidMatrix(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMatrix(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Categorical { probs, cumulative })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        // Guard against landing on a trailing zero-probability entry.
        let mut i = i.min(self.probs.len() - 1);
        while self.probs[i] == 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

impl CouplingMarginal for Categorical {
    type Value = usize;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.draw(rng)
    }

    fn log_density(&self, x: &usize) -> f64 {
        self.probs.get(*x).map_or(f64::NEG_INFINITY, |p| p.ln())
    }
}

impl crate::coupling::InitialDistribution<usize> for Categorical {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.draw(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn meet_rate<P, Q>(p: &P, q: &Q, n: usize, seed: u64) -> f64
    where
        P: CouplingMarginal,
        Q: CouplingMarginal<Value = P::Value>,
    {
        let mut rng = stream(seed, &[]);
        let mut met = 0usize;
        for _ in 0..n {
            let d = maximal_coupling_sample(p, q, &mut rng).unwrap();
            assert_eq!(d.met, d.p_sample == d.q_sample);
            met += usize::from(d.met);
        }
        met as f64 / n as f64
    }

    fn within_3_sigma(rate: f64, target: f64, n: usize) {
        let sigma = (target * (1.0 - target) / n as f64).sqrt();
        assert!((rate - target).abs() < 3.0 * sigma, "rate {rate}, target {target}");
    }

    #[test]
    fn identical_marginals_always_meet() {
        let p = Normal1 { mean: 0.3, sd: 2.0 };
        assert_eq!(meet_rate(&p, &p, 10_000, 1), 1.0);
        let c = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(meet_rate(&c, &c, 10_000, 2), 1.0);
    }

    #[test]
    fn bernoulli_pair_meets_at_one_minus_tv() {
        let n = 100_000;
        let rate = meet_rate(&Bernoulli { p: 0.7 }, &Bernoulli { p: 0.4 }, n, 3);
        within_3_sigma(rate, 0.7, n);
    }

    #[test]
    fn gaussian_pair_meets_at_one_minus_tv() {
        // 1 - d_TV(N(0,1), N(1,1)) = 2 Phi(-1/2)
        let target = 0.617_075_077_367_718_7;
        let n = 100_000;
        let rate = meet_rate(&Normal1 { mean: 0.0, sd: 1.0 }, &Normal1 { mean: 1.0, sd: 1.0 }, n, 4);
        within_3_sigma(rate, target, n);
    }

    #[test]
    fn nan_density_is_an_error() {
        struct Broken;
        impl CouplingMarginal for Broken {
            type Value = f64;
            fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
                0.0
            }
            fn log_density(&self, _x: &f64) -> f64 {
                f64::NAN
            }
        }
        let err = maximal_coupling_sample(&Broken, &Normal1 { mean: 0.0, sd: 1.0 }, &mut stream(0, &[]));
        assert_eq!(err.unwrap_err(), Error::NonEvaluableDensity);
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let c = Categorical::new(vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = stream(5, &[]);
        assert!((0..1000).all(|_| c.draw(&mut rng) == 1));
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![1.5, -0.5]).is_err());
    }
}
