//! Exact ground truth for small discrete chains.
//!
//! Marginals come from iterated vector-matrix products, the stationary vector
//! from a linear solve, and the meeting-time law from propagating the
//! maximally coupled pair chain over its `n^2` states.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bounds::{JDistribution, TauSurvival, TAIL_TOLERANCE};
use crate::coupling::j_count;
use crate::error::{Error, Result};
use crate::kernels::TransitionMatrix;

/// Largest state space the oracle accepts.
pub const MAX_STATES: usize = 64;

/// Cap on the number of joint steps the meeting-time oracle propagates.
pub const MAX_JOINT_STEPS: usize = 100_000;

/// Unmet mass at which propagation stops. Well below the `1e-12` validity
/// threshold, because mass cut at step `t` shifts `E[J]` by about `t` times
/// the residual.
pub const STOP_RESIDUAL: f64 = 1e-15;

/// A finite chain with its initial and stationary laws.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChain {
    matrix: TransitionMatrix,
    initial: Vec<f64>,
    stationary: Vec<f64>,
}

impl DiscreteChain {
    pub fn new(matrix: TransitionMatrix, initial: Vec<f64>) -> Result<Self> {
        let n = matrix.n();
        if n > MAX_STATES {
            return Err(Error::StateSpaceTooLarge(n));
        }
        if initial.len() != n {
            return Err(Error::InvalidDistribution(format!(
                "initial vector has {} entries for {n} states",
                initial.len()
            )));
        }
        if initial.iter().any(|p| p.is_nan() || *p < 0.0) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(
                "initial vector is not a probability vector".into(),
            ));
        }
        let stationary = stationary_vector(&matrix)?;
        Ok(DiscreteChain {
            matrix,
            initial,
            stationary,
        })
    }

    /// Chain started from the point mass at `state`.
    pub fn from_state(matrix: TransitionMatrix, state: usize) -> Result<Self> {
        let mut initial = vec![0.0; matrix.n()];
        *initial
            .get_mut(state)
            .ok_or_else(|| Error::InvalidDistribution(format!("start state {state} out of range")))? = 1.0;
        Self::new(matrix, initial)
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// `E_pi[h]` for a function of the state.
    pub fn expectation<F: Fn(usize) -> f64>(&self, h: F) -> f64 {
        self.stationary.iter().enumerate().map(|(i, p)| p * h(i)).sum()
    }

    /// `pi_0 P^k`.
    pub fn marginal_at(&self, k: usize) -> Vec<f64> {
        let mut v = self.initial.clone();
        for _ in 0..k {
            v = step(&self.matrix, &v);
        }
        v
    }

    /// `d_TV(pi_k, pi)`.
    pub fn tv_exact(&self, k: usize) -> f64 {
        tv(&self.marginal_at(k), &self.stationary)
    }

    /// `d_TV(pi_k, pi)` for `k = 0..=k_max`.
    pub fn tv_curve(&self, k_max: usize) -> Vec<f64> {
        let mut v = self.initial.clone();
        let mut out = Vec::with_capacity(k_max + 1);
        for _ in 0..=k_max {
            out.push(tv(&v, &self.stationary));
            v = step(&self.matrix, &v);
        }
        out
    }
}

fn step(matrix: &TransitionMatrix, v: &[f64]) -> Vec<f64> {
    let n = matrix.n();
    let mut out = vec![0.0; n];
    for (i, &w) in v.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(matrix.row(i)) {
            *o += w * p;
        }
    }
    out
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Solves `pi P = pi`, `Σ pi = 1`.
pub fn stationary_vector(matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = matrix.n();
    // Rows of (P^T - I), with the last equation replaced by the normalization.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = matrix.row(i)[j];
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidMatrix("stationary distribution is not unique".into()))?;
    let pi: Vec<f64> = pi.iter().copied().collect();
    let residual = tv(&step(matrix, &pi), &pi);
    if residual > 1e-10 || pi.iter().any(|p| *p < -1e-12) {
        return Err(Error::InvalidMatrix("stationary distribution is not unique".into()));
    }
    Ok(pi.into_iter().map(|p| p.max(0.0)).collect())
}

/// Law of the meeting time `tau` of the lag-`L` maximal coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct TauPmf {
    lag: usize,
    /// `probs[t]` is `P(tau = t)`; entries below `lag` are zero.
    probs: Vec<f64>,
    residual: f64,
}

impl TauPmf {
    pub fn new(lag: usize, probs: Vec<f64>, residual: f64) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidDistribution("lag must be at least 1".into()));
        }
        if probs.iter().take(lag).any(|p| *p != 0.0) {
            return Err(Error::InvalidDistribution("tau cannot fall below the lag".into()));
        }
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) || residual.is_nan() || residual < 0.0 {
            return Err(Error::InvalidDistribution("negative probability".into()));
        }
        let total = probs.iter().sum::<f64>() + residual;
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution(format!("tau law has mass {total}")));
        }
        Ok(TauPmf { lag, probs, residual })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `P(tau = t)`.
    pub fn prob(&self, t: usize) -> f64 {
        self.probs.get(t).copied().unwrap_or(0.0)
    }

    /// Mass not resolved within the propagated horizon.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `P(tau > t)`.
    pub fn survival(&self, t: usize) -> f64 {
        let upper: f64 = self.probs.iter().skip(t + 1).sum();
        upper + self.residual
    }

    /// `P(tau > k + jL)` for `j = 1, 2, ...`, ending at zero.
    pub fn tau_survival(&self, k: usize) -> Result<TauSurvival> {
        self.check_tail()?;
        let mut values = Vec::new();
        let mut j = 1;
        loop {
            let s = self.survival(k + j * self.lag);
            values.push(s);
            if s <= TAIL_TOLERANCE {
                break;
            }
            j += 1;
        }
        TauSurvival::new(values, None)
    }

    fn check_tail(&self) -> Result<()> {
        if self.residual >= TAIL_TOLERANCE {
            Err(Error::TailTooHeavy(self.residual))
        } else {
            Ok(())
        }
    }
}

/// Propagates the coupled pair chain and records absorption at each step.
///
/// `X_0` and `Y_0` are drawn independently from the initial law; `X` runs `L`
/// steps alone, then `(X_{t+L}, Y_t)` moves under the maximal coupling of the
/// two rows. Propagation stops at `max_t` or once the unmet mass drops below
/// [`STOP_RESIDUAL`], whichever comes first.
pub fn meeting_time_pmf(chain: &DiscreteChain, lag: usize, max_t: Option<usize>) -> Result<TauPmf> {
    let n = chain.n();
    if n > MAX_STATES {
        return Err(Error::StateSpaceTooLarge(n));
    }
    if lag == 0 {
        return Err(Error::InvalidConfig("lag must be at least 1".into()));
    }
    let max_t = max_t.unwrap_or(lag + MAX_JOINT_STEPS);
    let m = chain.matrix();
    let x_lag = chain.marginal_at(lag);
    let y0 = chain.initial();

    let mut probs = vec![0.0; lag + 1];
    let mut mass = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let w = x_lag[a] * y0[b];
            if a == b {
                probs[lag] += w;
            } else {
                mass[a * n + b] = w;
            }
        }
    }

    let transitions = pair_transitions(m);
    let mut residual: f64 = mass.iter().sum();
    let mut t = lag;
    while residual >= STOP_RESIDUAL && t < max_t {
        t += 1;
        let mut next = vec![0.0; n * n];
        let mut met = 0.0;
        for (state, &w) in mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let tr = &transitions[state];
            met += w * tr.meet;
            for &(target, p) in &tr.apart {
                next[target] += w * p;
            }
        }
        probs.push(met);
        mass = next;
        residual = mass.iter().sum();
    }
    TauPmf::new(lag, probs, residual.max(0.0))
}

struct PairTransition {
    meet: f64,
    apart: Vec<(usize, f64)>,
}

fn pair_transitions(m: &TransitionMatrix) -> Vec<PairTransition> {
    let n = m.n();
    let mut out = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            if x == y {
                out.push(PairTransition {
                    meet: 1.0,
                    apart: Vec::new(),
                });
                continue;
            }
            let (p, q) = (m.row(x), m.row(y));
            let meet: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).sum();
            let gap = 1.0 - meet;
            let mut apart = Vec::new();
            if gap > 0.0 {
                for a in 0..n {
                    let ra = (p[a] - q[a]).max(0.0);
                    if ra == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        let rb = (q[b] - p[b]).max(0.0);
                        if rb > 0.0 {
                            apart.push((a * n + b, ra * rb / gap));
                        }
                    }
                }
            }
            out.push(PairTransition { meet, apart });
        }
    }
    out
}

/// Law of `J_{k,L}` induced by the law of `tau`.
pub fn j_distribution_from_tau(tau: &TauPmf, k: usize) -> Result<JDistribution> {
    tau.check_tail()?;
    let mut pmf = vec![0.0];
    for (t, &p) in tau.probs.iter().enumerate().skip(tau.lag) {
        let j = j_count(t, k, tau.lag) as usize;
        if pmf.len() <= j {
            pmf.resize(j + 1, 0.0);
        }
        pmf[j] += p;
    }
    JDistribution::new(pmf)
}

/// Random chain on `n` states with every entry positive, hence ergodic.
pub fn random_chain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<TransitionMatrix> {
    let rows = (0..n)
        .map(|_| {
            // Squaring spreads the entries so some rows are far apart.
            let raw: Vec<f64> = (0..n).map(|_| 0.01 + rng.random::<f64>().powi(2)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect();
    TransitionMatrix::new(rows)
}

/// Random law of `J` for property batteries: up to 12 explicit atoms with
/// frequent zeros, a heavy atom at 0 about a third of the time, and a
/// geometric tail about a quarter of the time.
pub fn random_j_distribution<R: Rng + ?Sized>(rng: &mut R) -> JDistribution {
    let n = rng.random_range(1..=12);
    let mut raw: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random::<f64>().powi(3)
            }
        })
        .collect();
    if rng.random_bool(0.35) {
        raw[0] += n as f64 * rng.random::<f64>();
    }
    if raw.iter().all(|v| *v == 0.0) {
        raw[0] = 1.0;
    }
    let total: f64 = raw.iter().sum();
    if rng.random_bool(0.25) {
        let ratio = rng.random_range(0.05..0.95);
        let tail_mass = rng.random_range(0.0..0.6);
        let head: Vec<f64> = raw.iter().map(|v| v / total * (1.0 - tail_mass)).collect();
        JDistribution::with_geometric_tail(head, tail_mass * (1.0 - ratio), ratio).expect("normalized pmf with tail")
    } else {
        JDistribution::new(raw.iter().map(|v| v / total).collect()).expect("normalized pmf")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn two_state(a: f64, b: f64) -> TransitionMatrix {
        TransitionMatrix::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap()
    }

    #[test]
    fn marginal_hand_value() {
        let chain = DiscreteChain::from_state(two_state(0.3, 0.4), 0).unwrap();
        assert_eq!(chain.marginal_at(0), vec![1.0, 0.0]);
        let m1 = chain.marginal_at(1);
        assert!((m1[0] - 0.7).abs() < 1e-15 && (m1[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn stationary_and_long_run() {
        let chain = DiscreteChain::from_state(two_state(0.3, 0.4), 0).unwrap();
        let pi = chain.stationary();
        assert!((pi[0] - 4.0 / 7.0).abs() < 1e-14);
        let far = chain.marginal_at(1_000_000);
        assert!(tv(&far, pi) < 1e-9);
    }

    #[test]
    fn two_state_tv_closed_form() {
        let (a, b) = (0.3, 0.4);
        let chain = DiscreteChain::from_state(two_state(a, b), 0).unwrap();
        for (k, tv) in chain.tv_curve(20).into_iter().enumerate() {
            let expected = (1.0 - a - b).abs().powi(k as i32) * a / (a + b);
            assert!((tv - expected).abs() < 1e-14, "k = {k}");
            assert!((chain.tv_exact(k) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_start_has_zero_tv() {
        let m = two_state(0.2, 0.5);
        let pi = stationary_vector(&m).unwrap();
        let chain = DiscreteChain::new(m, pi).unwrap();
        assert!(chain.tv_curve(30).iter().all(|d| *d < 1e-14));
    }

    #[test]
    fn reducible_chain_rejected() {
        let m = TransitionMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(DiscreteChain::from_state(m, 0).is_err());
    }

    #[test]
    fn identical_rows_meet_at_first_joint_step() {
        let m = TransitionMatrix::new(vec![vec![0.2, 0.8]; 2]).unwrap();
        let chain = DiscreteChain::new(m, vec![0.5, 0.5]).unwrap();
        let pmf = meeting_time_pmf(&chain, 2, None).unwrap();
        // X_2 ~ (0.2, 0.8) independent of Y_0 ~ (0.5, 0.5)
        assert!((pmf.prob(2) - 0.5).abs() < 1e-15);
        assert!((pmf.prob(3) - 0.5).abs() < 1e-15);
        assert_eq!(pmf.residual(), 0.0);
    }

    #[test]
    fn two_state_first_joint_step() {
        let m = two_state(0.3, 0.4);
        // Start apart: X_1 from row 0 vs Y_0 = 1 is random, so condition on the
        // pair after one step through the joint chain.
        let chain = DiscreteChain::new(m, vec![0.0, 1.0]).unwrap();
        let pmf = meeting_time_pmf(&chain, 1, None).unwrap();
        // X_1 ~ (0.4, 0.6), Y_0 = 1: meet at 1 w.p. 0.6; otherwise pair (0, 1)
        // meets next step w.p. 1 - d_TV(rows) = 0.7.
        assert!((pmf.prob(1) - 0.6).abs() < 1e-15);
        assert!((pmf.prob(2) - 0.4 * 0.7).abs() < 1e-15);
        assert!((pmf.prob(3) - 0.4 * 0.3 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn size_limits() {
        let big = TransitionMatrix::new(vec![vec![1.0 / 65.0; 65]; 65]).unwrap();
        assert_eq!(
            DiscreteChain::from_state(big, 0).unwrap_err(),
            Error::StateSpaceTooLarge(65)
        );
    }

    #[test]
    fn pushforward_hand_cases() {
        let point = TauPmf::new(2, vec![0.0, 0.0, 1.0], 0.0).unwrap();
        for k in 0..5 {
            assert_eq!(j_distribution_from_tau(&point, k).unwrap().pmf(), &[1.0]);
        }
        let uniform = TauPmf::new(1, vec![0.0, 0.0, 0.5, 0.5], 0.0).unwrap();
        assert_eq!(j_distribution_from_tau(&uniform, 0).unwrap().pmf(), &[0.0, 0.5, 0.5]);
        let heavy = TauPmf::new(1, vec![0.0, 0.5], 0.5).unwrap();
        assert!(matches!(
            j_distribution_from_tau(&heavy, 0),
            Err(Error::TailTooHeavy(_))
        ));
        assert!(TauPmf::new(2, vec![0.5, 0.0, 0.5], 0.0).is_err());
    }

    #[test]
    fn tau_survival_matches_pmf() {
        let chain = DiscreteChain::from_state(random_chain(4, &mut stream(5, &[])).unwrap(), 0).unwrap();
        let pmf = meeting_time_pmf(&chain, 2, None).unwrap();
        let s = pmf.tau_survival(3).unwrap();
        let jd = j_distribution_from_tau(&pmf, 3).unwrap();
        for j in 1..6 {
            assert!((s.get(j) - jd.prob_ge(j)).abs() < 1e-12);
        }
    }
}
