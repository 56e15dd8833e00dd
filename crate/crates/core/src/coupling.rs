//! L-lag coupled chain pairs and their meeting statistics.
//!
//! Two chains `X` and `Y` share one transition kernel and one initial
//! distribution. `X` is advanced `L` steps on its own, after which the pair
//! `(X_{t+L}, Y_t)` moves jointly under a coupled kernel. The meeting time
//! `tau` is indexed on the `X` clock:
//!
//! ```text
//! tau = min { s >= L : X_s == Y_{s-L} }
//! ```
//!
//! so `tau >= L` always, and `X_{s} == Y_{s-L}` for every `s >= tau`. Once the
//! chains meet they are collapsed into a single chain, so faithfulness after
//! the meeting is exact rather than checked.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A joint one-step transition whose two marginals are the same kernel.
///
/// Implementations must satisfy two contracts:
///
/// * **faithfulness**: the law of `joint_step(x, y).0` equals the law of
///   `marginal_step(x)`, and symmetrically for the second output;
/// * **absorbing diagonal**: `x == y` implies the two outputs are equal.
pub trait CoupledKernel: Send + Sync {
    type State: Clone + PartialEq + Debug + Send + Sync;

    fn marginal_step<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> Result<Self::State>;

    fn joint_step<R: Rng + ?Sized>(
        &self,
        x: &Self::State,
        y: &Self::State,
        rng: &mut R,
    ) -> Result<(Self::State, Self::State)>;
}

/// Sampler for `X_0` and `Y_0`.
pub trait InitialDistribution<S> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S;
}

impl<S, D: InitialDistribution<S> + ?Sized> InitialDistribution<S> for &D {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        (**self).sample(rng)
    }
}

/// Both chains start from the same fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass<S>(pub S);

impl<S: Clone> InitialDistribution<S> for PointMass<S> {
    fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> S {
        self.0.clone()
    }
}

#[derive(Debug, Clone)]
pub struct LagConfig<D> {
    lag: usize,
    max_sweeps: usize,
    horizon: usize,
    initial: D,
}

impl<D> LagConfig<D> {
    /// `max_sweeps` caps the number of joint steps and must exceed `lag`.
    pub fn new(lag: usize, max_sweeps: usize, initial: D) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidConfig("lag must be at least 1".into()));
        }
        if max_sweeps <= lag {
            return Err(Error::InvalidConfig(format!(
                "max_sweeps ({max_sweeps}) must exceed the lag ({lag})"
            )));
        }
        Ok(LagConfig {
            lag,
            max_sweeps,
            horizon: 0,
            initial,
        })
    }

    /// Keep advancing the collapsed chain after the meeting until the `X`
    /// path reaches index `horizon`.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn max_sweeps(&self) -> usize {
        self.max_sweeps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &D {
        &self.initial
    }
}

/// Realized paths of an L-lag coupled pair.
///
/// `x_path[s]` holds `X_s` and `y_path[t]` holds `Y_t`; over the jointly
/// evolved region the `X` path is exactly `lag` entries longer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrace<S> {
    x_path: Vec<S>,
    y_path: Vec<S>,
    tau: Option<usize>,
    lag: usize,
    seed: u64,
}

impl<S: Clone + PartialEq> CoupledTrace<S> {
    /// Assembles a trace from stored paths, checking every structural
    /// invariant (lengths, `tau >= lag`, first meeting, faithfulness).
    pub fn from_parts(x_path: Vec<S>, y_path: Vec<S>, tau: Option<usize>, lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::TraceFormat("lag must be at least 1".into()));
        }
        if x_path.len() != y_path.len() + lag {
            return Err(Error::TraceFormat(format!(
                "x path length {} must equal y path length {} plus lag {lag}",
                x_path.len(),
                y_path.len()
            )));
        }
        let trace = CoupledTrace {
            x_path,
            y_path,
            tau,
            lag,
            seed: 0,
        };
        if let Some(tau) = tau {
            if tau < lag {
                return Err(Error::TraceFormat(format!("tau {tau} is below the lag {lag}")));
            }
            if tau >= trace.x_path.len() {
                return Err(Error::TraceFormat(format!("tau {tau} lies past the stored path")));
            }
            if (lag..tau).any(|s| trace.x_path[s] == trace.y_path[s - lag]) {
                return Err(Error::TraceFormat("tau is not the first meeting".into()));
            }
            if !trace.is_faithful() {
                return Err(Error::TraceFormat("paths separate after tau".into()));
            }
        } else if (lag..trace.x_path.len()).any(|s| trace.x_path[s] == trace.y_path[s - lag]) {
            return Err(Error::TraceFormat("paths meet but no tau is recorded".into()));
        }
        Ok(trace)
    }

    /// Scan check that `X_{s} == Y_{s-L}` for every stored `s >= tau`.
    pub fn is_faithful(&self) -> bool {
        match self.tau {
            None => true,
            Some(tau) => (tau..self.x_path.len()).all(|s| self.x_path[s] == self.y_path[s - self.lag]),
        }
    }
}

impl<S> CoupledTrace<S> {
    pub fn x_path(&self) -> &[S] {
        &self.x_path
    }

    pub fn y_path(&self) -> &[S] {
        &self.y_path
    }

    /// Meeting time on the `X` clock.
    pub fn tau(&self) -> Option<usize> {
        self.tau
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Seed of the stream that generated this trace (0 when unknown).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of joint steps performed before the meeting.
    pub fn joint_steps(&self) -> Option<usize> {
        self.tau.map(|tau| tau - self.lag)
    }

    /// Extends a met trace by marginal steps of the collapsed chain until the
    /// `X` path contains index `x_index`.
    pub fn extend_to<K, R>(&mut self, kernel: &K, rng: &mut R, x_index: usize) -> Result<()>
    where
        K: CoupledKernel<State = S>,
        R: Rng + ?Sized,
        S: Clone,
    {
        if self.tau.is_none() {
            return Err(Error::MissingTau);
        }
        while self.x_path.len() <= x_index {
            let next = kernel.marginal_step(self.x_path.last().expect("non-empty path"), rng)?;
            self.x_path.push(next);
            let shadow = self.x_path[self.y_path.len() + self.lag].clone();
            self.y_path.push(shadow);
        }
        Ok(())
    }
}

/// Runs an L-lag coupled pair until it meets, then continues the collapsed
/// chain up to the configured horizon.
pub fn run_lagged_coupling<K, D, R>(kernel: &K, config: &LagConfig<D>, rng: &mut R) -> Result<CoupledTrace<K::State>>
where
    K: CoupledKernel,
    D: InitialDistribution<K::State>,
    R: Rng + ?Sized,
{
    let lag = config.lag;
    let x0 = config.initial.sample(rng);
    let y0 = config.initial.sample(rng);

    let mut x_path = Vec::with_capacity(lag + 16);
    x_path.push(x0);
    for _ in 0..lag {
        let next = kernel.marginal_step(x_path.last().expect("non-empty path"), rng)?;
        x_path.push(next);
    }
    let mut y_path = vec![y0];

    let mut tau = None;
    if x_path[lag] == y_path[0] {
        tau = Some(lag);
    } else {
        for _ in 0..config.max_sweeps {
            let (x, y) = kernel.joint_step(
                x_path.last().expect("non-empty path"),
                y_path.last().expect("non-empty path"),
                rng,
            )?;
            let met = x == y;
            x_path.push(x);
            y_path.push(y);
            if met {
                tau = Some(x_path.len() - 1);
                break;
            }
        }
    }
    if tau.is_none() {
        return Err(Error::CapExceeded {
            max_sweeps: config.max_sweeps,
        });
    }

    let mut trace = CoupledTrace {
        x_path,
        y_path,
        tau,
        lag,
        seed: 0,
    };
    trace.extend_to(kernel, rng, config.horizon)?;
    Ok(trace)
}

/// `J_{k,L} = max(0, ceil((tau - L - k) / L))`, in exact integer arithmetic.
pub fn j_count(tau: usize, k: usize, lag: usize) -> u64 {
    debug_assert!(lag > 0);
    let threshold = lag + k;
    if tau <= threshold {
        0
    } else {
        (tau - threshold).div_ceil(lag) as u64
    }
}

/// `J_{k,L}` together with its randomized companion `J̃ = J - ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingStats {
    pub j: u64,
    pub j_tilde: i64,
    pub k: usize,
    pub lag: usize,
}

impl MeetingStats {
    /// Builds the statistics from `tau` and an already drawn coin `xi`.
    pub fn from_tau(tau: usize, k: usize, lag: usize, xi: bool) -> Self {
        let j = j_count(tau, k, lag);
        MeetingStats {
            j,
            j_tilde: j as i64 - i64::from(xi),
            k,
            lag,
        }
    }

    pub fn xi(&self) -> bool {
        self.j_tilde != self.j as i64
    }
}

/// Computes `J_{k,L}` from the trace and draws a fresh fair coin for `J̃`.
pub fn meeting_stats<S, R: Rng + ?Sized>(trace: &CoupledTrace<S>, k: usize, rng: &mut R) -> Result<MeetingStats> {
    let tau = trace.tau().ok_or(Error::MissingTau)?;
    let xi = rng.random_bool(0.5);
    Ok(MeetingStats::from_tau(tau, k, trace.lag(), xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Stays put marginally; the joint step forces both outputs to `x`.
    struct Frozen;

    impl CoupledKernel for Frozen {
        type State = u8;

        fn marginal_step<R: Rng + ?Sized>(&self, x: &u8, _rng: &mut R) -> Result<u8> {
            Ok(*x)
        }

        fn joint_step<R: Rng + ?Sized>(&self, x: &u8, _y: &u8, _rng: &mut R) -> Result<(u8, u8)> {
            Ok((*x, *x))
        }
    }

    /// Two states; each chain flips marginally, the joint step sends both to 0.
    struct Collapse;

    impl CoupledKernel for Collapse {
        type State = u8;

        fn marginal_step<R: Rng + ?Sized>(&self, x: &u8, _rng: &mut R) -> Result<u8> {
            Ok(1 - *x)
        }

        fn joint_step<R: Rng + ?Sized>(&self, x: &u8, y: &u8, _rng: &mut R) -> Result<(u8, u8)> {
            if x == y {
                Ok((1 - *x, 1 - *x))
            } else {
                Ok((0, 0))
            }
        }
    }

    /// Never couples: the joint step applies independent flips.
    struct Repel;

    impl CoupledKernel for Repel {
        type State = u8;

        fn marginal_step<R: Rng + ?Sized>(&self, x: &u8, _rng: &mut R) -> Result<u8> {
            Ok(1 - *x)
        }

        fn joint_step<R: Rng + ?Sized>(&self, x: &u8, y: &u8, _rng: &mut R) -> Result<(u8, u8)> {
            Ok((1 - *x, 1 - *y))
        }
    }

    #[test]
    fn frozen_kernel_meets_at_the_lag() {
        let config = LagConfig::new(1, 10, PointMass(3u8)).unwrap().with_horizon(6);
        let trace = run_lagged_coupling(&Frozen, &config, &mut stream(0, &[])).unwrap();
        assert_eq!(trace.tau(), Some(1));
        assert_eq!(trace.x_path().len(), 7);
        for t in 0..trace.y_path().len() {
            assert_eq!(trace.x_path()[t + 1], trace.y_path()[t]);
        }
    }

    #[test]
    fn deterministic_coupling_meets_on_first_joint_step() {
        // X_0 = Y_0 = 0, X_1 = 1 != Y_0, the first joint step maps both to 0.
        let config = LagConfig::new(1, 10, PointMass(0u8)).unwrap();
        let trace = run_lagged_coupling(&Collapse, &config, &mut stream(0, &[])).unwrap();
        assert_eq!(trace.tau(), Some(2));
        assert_eq!(trace.joint_steps(), Some(1));
        assert!(trace.is_faithful());
    }

    #[test]
    fn cap_is_an_error() {
        let config = LagConfig::new(1, 50, PointMass(0u8)).unwrap();
        let err = run_lagged_coupling(&Repel, &config, &mut stream(0, &[])).unwrap_err();
        assert_eq!(err, Error::CapExceeded { max_sweeps: 50 });
    }

    #[test]
    fn config_validation() {
        assert!(LagConfig::new(0, 10, PointMass(0u8)).is_err());
        assert!(LagConfig::new(3, 3, PointMass(0u8)).is_err());
        assert!(LagConfig::new(3, 4, PointMass(0u8)).is_ok());
    }

    #[test]
    fn extension_keeps_lagged_equality() {
        let config = LagConfig::new(3, 10, PointMass(0u8)).unwrap();
        let mut trace = run_lagged_coupling(&Collapse, &config, &mut stream(1, &[])).unwrap();
        trace.extend_to(&Collapse, &mut stream(2, &[]), 40).unwrap();
        assert_eq!(trace.x_path().len(), 41);
        assert_eq!(trace.y_path().len(), 38);
        assert!(trace.is_faithful());
    }

    #[test]
    fn from_parts_rejects_broken_traces() {
        assert!(CoupledTrace::from_parts(vec![0u8, 0, 0], vec![1u8, 0], Some(2), 1).is_ok());
        // tau below the lag
        assert!(CoupledTrace::from_parts(vec![0u8, 1, 0, 0], vec![1u8], Some(2), 3).is_err());
        // not the first meeting
        assert!(CoupledTrace::from_parts(vec![0u8, 1, 1], vec![1u8, 1], Some(2), 1).is_err());
        // separation after tau
        assert!(CoupledTrace::from_parts(vec![0u8, 0, 0, 1], vec![1u8, 0, 0], Some(2), 1).is_err());
        // length mismatch
        assert!(CoupledTrace::from_parts(vec![0u8, 1], vec![1u8, 0], None, 1).is_err());
    }

    #[test]
    fn j_hand_values() {
        assert_eq!(j_count(10, 2, 3), 2);
        assert_eq!(j_count(4, 1, 3), 0);
        assert_eq!(j_count(5, 0, 1), 4);
        assert_eq!(j_count(6, 1, 3), 1);
    }

    #[test]
    fn j_tilde_takes_both_values_evenly() {
        let trace = CoupledTrace::from_parts(vec![0u8; 6], vec![1u8, 1, 1, 1, 0], Some(5), 1).unwrap();
        let mut rng = stream(9, &[]);
        let n = 100_000;
        let mut low = 0usize;
        for _ in 0..n {
            let s = meeting_stats(&trace, 0, &mut rng).unwrap();
            assert_eq!(s.j, 4);
            assert!(s.j_tilde == 3 || s.j_tilde == 4);
            low += usize::from(s.j_tilde == 3);
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((low as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn missing_tau_is_reported() {
        let trace = CoupledTrace::from_parts(vec![0u8, 1, 0], vec![0u8, 1], None, 1).unwrap();
        assert_eq!(
            meeting_stats(&trace, 0, &mut stream(0, &[])).unwrap_err(),
            Error::MissingTau
        );
    }

    #[test]
    fn j_monotone_and_level_set_identity() {
        for lag in 1..=20usize {
            for tau in lag..=lag + 200 {
                for k in 0..=50usize {
                    let j = j_count(tau, k, lag);
                    assert!(j_count(tau, k + 1, lag) <= j);
                    for level in 0..12u64 {
                        let above = j > level;
                        let late = tau > k + (level as usize + 1) * lag;
                        assert_eq!(above, late, "tau={tau} k={k} L={lag} j={level}");
                    }
                }
            }
        }
    }

    #[test]
    fn j_nonincreasing_in_lag_for_fixed_tau() {
        for tau in 20..=220usize {
            for k in 0..=50usize {
                for lag in 1..20usize {
                    if tau > lag {
                        assert!(j_count(tau, k, lag + 1) <= j_count(tau, k, lag));
                    }
                }
            }
        }
    }
}
