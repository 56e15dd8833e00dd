//! Unbiased estimators of `E_pi[h]` built from one L-lag coupled trace.
//!
//! All estimators read a trace through an [`EvaluatedTrace`], which evaluates
//! the (possibly vector-valued) test function once per stored state. With
//! `Δ_{t,j} = h(X_{t+jL}) - h(Y_{t+jL})` and `J = J_{t,L}`:
//!
//! | estimator | value |
//! |---|---|
//! | [`h_forward`] | `h(X_k) + Σ_{j=1..J} [h(X_{k+jL}) - h(Y_{k+(j-1)L})]` |
//! | [`h_backward`] | `h(X_{k+JL}) + Σ_{j=0..J-1} Δ_{k,j}` |
//! | [`h_cv_single`] | backward value `- Σ_{j=0..m} Δ_{k,j}` |
//! | [`h_timeavg`] | mean of the backward value over `t = k..=r` |
//! | [`h_timeavg_cv`] | time average `-` mean over `t` of `Σ_{j=0..m_t} Δ_{t,j}` |
//!
//! The control-variate truncation `m` must not depend on the trace it is
//! applied to; [`loo_median`] computes it from the other processes. A value of
//! `m = -1` means "no control variate".

use crate::coupling::{j_count, CoupledTrace};
use crate::error::{Error, Result};

/// A real-vector valued function of the chain state.
pub trait TestFunction<S>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, state: &S, out: &mut [f64]);
}

/// Adapts a closure `Fn(&S) -> [f64; D]`-like function of fixed output size.
pub struct FnTest<F> {
    dim: usize,
    f: F,
}

impl<F> FnTest<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnTest { dim, f }
    }
}

impl<S, F> TestFunction<S> for FnTest<F>
where
    F: Fn(&S, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, state: &S, out: &mut [f64]) {
        (self.f)(state, out)
    }
}

/// Scalar test function from a closure.
pub fn scalar<S, F: Fn(&S) -> f64 + Sync>(f: F) -> FnTest<impl Fn(&S, &mut [f64]) + Sync> {
    FnTest::new(1, move |s: &S, out: &mut [f64]| out[0] = f(s))
}

/// A trace with `h` cached at every stored state.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedTrace {
    dim: usize,
    hx: Vec<f64>,
    hy: Vec<f64>,
    tau: usize,
    lag: usize,
}

impl EvaluatedTrace {
    pub fn new<S, H: TestFunction<S> + ?Sized>(trace: &CoupledTrace<S>, h: &H) -> Result<Self> {
        let tau = trace.tau().ok_or(Error::MissingTau)?;
        let dim = h.dim();
        let eval_path = |path: &[S]| {
            let mut out = vec![0.0; path.len() * dim];
            for (state, chunk) in path.iter().zip(out.chunks_exact_mut(dim.max(1))) {
                h.eval(state, chunk);
            }
            out
        };
        Ok(EvaluatedTrace {
            dim,
            hx: eval_path(trace.x_path()),
            hy: eval_path(trace.y_path()),
            tau,
            lag: trace.lag(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn x_len(&self) -> usize {
        self.hx.len() / self.dim.max(1)
    }

    pub fn y_len(&self) -> usize {
        self.hy.len() / self.dim.max(1)
    }

    /// `J_{k,L}` of this trace.
    pub fn j(&self, k: usize) -> u64 {
        j_count(self.tau, k, self.lag)
    }

    pub fn hx(&self, index: usize) -> Result<&[f64]> {
        let len = self.x_len();
        if index >= len {
            return Err(Error::IndexOutOfTrace { chain: "x", index, len });
        }
        Ok(&self.hx[index * self.dim..(index + 1) * self.dim])
    }

    pub fn hy(&self, index: usize) -> Result<&[f64]> {
        let len = self.y_len();
        if index >= len {
            return Err(Error::IndexOutOfTrace { chain: "y", index, len });
        }
        Ok(&self.hy[index * self.dim..(index + 1) * self.dim])
    }

    fn add_delta(&self, out: &mut [f64], index: usize, sign: f64) -> Result<()> {
        let x = self.hx(index)?;
        let y = self.hy(index)?;
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += sign * (a - b);
        }
        Ok(())
    }
}

fn add_into(out: &mut [f64], v: &[f64]) {
    for (o, a) in out.iter_mut().zip(v) {
        *o += a;
    }
}

/// Forward-correction estimator at burn-in `k`.
pub fn h_forward(ev: &EvaluatedTrace, k: usize) -> Result<Vec<f64>> {
    let lag = ev.lag;
    let j = ev.j(k) as usize;
    let mut out = ev.hx(k)?.to_vec();
    for i in 1..=j {
        add_into(&mut out, ev.hx(k + i * lag)?);
        for (o, b) in out.iter_mut().zip(ev.hy(k + (i - 1) * lag)?) {
            *o -= b;
        }
    }
    Ok(out)
}

/// Backward-correction estimator at burn-in `k`, anchored at `X_{k+JL}`.
pub fn h_backward(ev: &EvaluatedTrace, k: usize) -> Result<Vec<f64>> {
    let lag = ev.lag;
    let j = ev.j(k) as usize;
    let mut out = ev.hx(k + j * lag)?.to_vec();
    for i in 0..j {
        ev.add_delta(&mut out, k + i * lag, 1.0)?;
    }
    Ok(out)
}

/// Subtracts `Σ_{j=0..=m} Δ_{k,j}` from `out`; `m < 0` subtracts nothing.
fn subtract_cv(ev: &EvaluatedTrace, out: &mut [f64], k: usize, m_hat: i64, weight: f64) -> Result<()> {
    if m_hat < 0 {
        return Ok(());
    }
    for i in 0..=m_hat as usize {
        ev.add_delta(out, k + i * ev.lag, -weight)?;
    }
    Ok(())
}

/// Backward estimator with the control variate `Σ_{j=0..=m_hat} Δ_{k,j}`
/// removed. `m_hat` must be computed without this trace.
pub fn h_cv_single(ev: &EvaluatedTrace, k: usize, m_hat: i64) -> Result<Vec<f64>> {
    let mut out = h_backward(ev, k)?;
    subtract_cv(ev, &mut out, k, m_hat, 1.0)?;
    Ok(out)
}

/// Time-averaged backward estimator over burn-ins `t = k..=r`.
pub fn h_timeavg(ev: &EvaluatedTrace, k: usize, r: usize) -> Result<Vec<f64>> {
    if r < k {
        return Err(Error::PlanInvalid(format!(
            "averaging endpoint r = {r} is below k = {k}"
        )));
    }
    let lag = ev.lag;
    let weight = 1.0 / (r - k + 1) as f64;
    let mut anchors = vec![0.0; ev.dim];
    for t in k..=r {
        add_into(&mut anchors, ev.hx(t + ev.j(t) as usize * lag)?);
    }
    let mut corrections = vec![0.0; ev.dim];
    // Corrections vanish once t passes tau - L.
    let last = r.min(ev.tau - lag);
    for t in k..=last {
        for i in 0..ev.j(t) as usize {
            ev.add_delta(&mut corrections, t + i * lag, 1.0)?;
        }
    }
    Ok(anchors
        .iter()
        .zip(&corrections)
        .map(|(a, c)| weight * (a + c))
        .collect())
}

/// Time-averaged estimator with one control variate per burn-in `t`.
/// `m_hats[t - k]` is the truncation used at `t`.
pub fn h_timeavg_cv(ev: &EvaluatedTrace, k: usize, r: usize, m_hats: &[i64]) -> Result<Vec<f64>> {
    let mut out = h_timeavg(ev, k, r)?;
    if m_hats.len() != r - k + 1 {
        return Err(Error::PlanInvalid(format!(
            "expected {} control-variate truncations, got {}",
            r - k + 1,
            m_hats.len()
        )));
    }
    let weight = 1.0 / (r - k + 1) as f64;
    for (t, &m) in (k..=r).zip(m_hats) {
        subtract_cv(ev, &mut out, t, m, weight)?;
    }
    Ok(out)
}

/// `X` index a trace must be extended to so that every estimator at burn-ins
/// `k..=r` with truncations up to `m_max` can read both paths.
pub fn required_x_index(tau: usize, lag: usize, k: usize, r: usize, m_max: i64) -> usize {
    let anchor = (k..=r)
        .map(|t| t + j_count(tau, t, lag) as usize * lag)
        .max()
        .unwrap_or(k);
    // Delta terms read Y_{r+mL}, which is stored alongside X_{r+mL+L}.
    let cv = if m_max >= 0 { r + m_max as usize * lag + lag } else { 0 };
    // Correction terms read Y_{t+jL} with j < J_t, i.e. X up to t + J_t L.
    anchor.max(cv).max(r)
}

/// Floor of the sample median of `values` with entry `q` left out. For an
/// even number of remaining values the lower middle order statistic is used.
pub fn loo_median(values: &[i64], q: usize) -> Result<i64> {
    if values.len() < 2 {
        return Err(Error::TooFewProcesses(values.len()));
    }
    if q >= values.len() {
        return Err(Error::PlanInvalid(format!("process index {q} out of range")));
    }
    let mut rest: Vec<i64> = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q)
        .map(|(_, &v)| v)
        .collect();
    let mid = (rest.len() - 1) / 2;
    let (_, m, _) = rest.select_nth_unstable(mid);
    Ok(*m)
}

/// [`loo_median`] for every process at once.
pub fn loo_medians(values: &[i64]) -> Result<Vec<i64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewProcesses(n));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mid = (n - 2) / 2;
    // Removing a value at or below the lower middle shifts the answer up by one slot.
    Ok(values
        .iter()
        .map(|&v| if v <= sorted[mid] { sorted[mid + 1] } else { sorted[mid] })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> impl TestFunction<f64> {
        scalar(|x: &f64| *x)
    }

    /// L = 1, tau = 3: X = x0..x5, Y = y0..y4 with X_{s} = Y_{s-1} for s >= 3.
    fn hand_trace() -> CoupledTrace<f64> {
        let x = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let y = vec![3.0, 5.0, 8.0, 16.0, 32.0];
        CoupledTrace::from_parts(x, y, Some(3), 1).unwrap()
    }

    #[test]
    fn forward_and_backward_hand_values() {
        let ev = EvaluatedTrace::new(&hand_trace(), &identity()).unwrap();
        assert_eq!(ev.j(0), 2);
        // h(x0) + (h(x1) - h(y0)) + (h(x2) - h(y1))
        let expected = 1.0 + (2.0 - 3.0) + (4.0 - 5.0);
        assert_eq!(h_forward(&ev, 0).unwrap(), vec![expected]);
        // h(x2) + (h(x0) - h(y0)) + (h(x1) - h(y1))
        let backward = 4.0 + (1.0 - 3.0) + (2.0 - 5.0);
        assert_eq!(h_backward(&ev, 0).unwrap(), vec![backward]);
        assert_eq!(expected, backward);
    }

    #[test]
    fn no_correction_once_met() {
        let ev = EvaluatedTrace::new(&hand_trace(), &identity()).unwrap();
        // tau <= k + L for k = 2
        assert_eq!(h_forward(&ev, 2).unwrap(), vec![4.0]);
        assert_eq!(h_backward(&ev, 2).unwrap(), vec![4.0]);
    }

    #[test]
    fn backward_anchor_is_not_tau_minus_lag() {
        // L = 3, k = 1, tau = 6: J = 1, anchor k + JL = 4 while (tau - L) v k = 3.
        let x: Vec<f64> = (0..10).map(|i| 10.0 * i as f64).collect();
        let mut y: Vec<f64> = (0..7).map(|i| -1.0 - i as f64).collect();
        y[3..7].copy_from_slice(&x[6..10]);
        let trace = CoupledTrace::from_parts(x, y, Some(6), 3).unwrap();
        let ev = EvaluatedTrace::new(&trace, &identity()).unwrap();
        assert_eq!(ev.j(1), 1);
        let expected = 40.0 + (10.0 - (-2.0));
        assert_eq!(h_backward(&ev, 1).unwrap(), vec![expected]);
        assert_eq!(h_forward(&ev, 1).unwrap(), vec![expected]);
    }

    #[test]
    fn cv_with_m_zero_subtracts_first_delta() {
        let ev = EvaluatedTrace::new(&hand_trace(), &identity()).unwrap();
        let b = h_backward(&ev, 0).unwrap()[0];
        assert_eq!(h_cv_single(&ev, 0, 0).unwrap(), vec![b - (1.0 - 3.0)]);
        assert_eq!(h_cv_single(&ev, 0, -1).unwrap(), vec![b]);
    }

    #[test]
    fn timeavg_degenerate_cases() {
        let ev = EvaluatedTrace::new(&hand_trace(), &identity()).unwrap();
        assert_eq!(h_timeavg(&ev, 0, 0).unwrap(), h_backward(&ev, 0).unwrap());
        // tau <= k + L: plain ergodic average of X_2..X_4
        assert!((h_timeavg(&ev, 2, 4).unwrap()[0] - 28.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            h_timeavg_cv(&ev, 0, 3, &[-1; 4]).unwrap(),
            h_timeavg(&ev, 0, 3).unwrap()
        );
        assert_eq!(h_timeavg_cv(&ev, 1, 1, &[0]).unwrap(), h_cv_single(&ev, 1, 0).unwrap());
        assert!(h_timeavg(&ev, 3, 2).is_err());
        assert!(h_timeavg_cv(&ev, 0, 3, &[0; 2]).is_err());
    }

    #[test]
    fn short_trace_reports_index() {
        let ev = EvaluatedTrace::new(&hand_trace(), &identity()).unwrap();
        let err = h_cv_single(&ev, 0, 7).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfTrace { .. }));
    }

    #[test]
    fn vector_valued_h() {
        let h = FnTest::new(2, |x: &f64, out: &mut [f64]| {
            out[0] = *x;
            out[1] = x * x;
        });
        let ev = EvaluatedTrace::new(&hand_trace(), &h).unwrap();
        let v = h_backward(&ev, 0).unwrap();
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 16.0 + (1.0 - 9.0) + (4.0 - 25.0));
    }

    #[test]
    fn loo_median_hand_values() {
        assert_eq!(loo_median(&[3, 3, 3, 3], 0).unwrap(), 3);
        assert_eq!(loo_median(&[0, 1, 2, 5], 3).unwrap(), 1);
        assert_eq!(loo_median(&[0, 1, 2, 5], 0).unwrap(), 2);
        // even remainder: lower middle
        assert_eq!(loo_median(&[4, 0, 1, 2, 5], 0).unwrap(), 1);
        assert_eq!(loo_median(&[-1, -1, 0], 2).unwrap(), -1);
        assert_eq!(loo_median(&[1], 0).unwrap_err(), Error::TooFewProcesses(1));
    }

    #[test]
    fn loo_medians_agree_with_direct() {
        let cases: [&[i64]; 5] = [
            &[0, 1, 2, 5],
            &[3, 3, 3, 3],
            &[2, -1],
            &[7, 0, 7, 1, 1, 3, 9],
            &[5, 4, 3, 2, 1, 0],
        ];
        for values in cases {
            let all = loo_medians(values).unwrap();
            for (q, m) in all.iter().enumerate() {
                assert_eq!(*m, loo_median(values, q).unwrap(), "{values:?} q={q}");
            }
        }
    }

    #[test]
    fn required_index_covers_reads() {
        let trace = hand_trace();
        let ev = EvaluatedTrace::new(&trace, &identity()).unwrap();
        let need = required_x_index(3, 1, 0, 2, 1);
        assert!(need < ev.x_len());
        assert!(h_timeavg_cv(&ev, 0, 2, &[1, 1, 1]).is_ok());
    }
}
