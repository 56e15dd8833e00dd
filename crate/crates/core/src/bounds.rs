//! Total-variation bounds from the distribution of `J_{k,L}`.
//!
//! The old bound is `E[J]`. The new bound is
//! `B = Σ_{j≥1} min{P(J≥j), P(J≤j)}`, which can also be written through the
//! smallest median `m_J` ([`new_bound_median_form`]) or through the survival
//! function of the meeting time ([`new_bound_tau_form`]). All three forms are
//! computed exactly here, including geometric tails in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`JDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Largest survival value an explicit [`TauSurvival`] may end on.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Geometric continuation of a pmf: `P(J = n + i) = first * ratio^i` where
/// `n` is the length of the explicit part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTail {
    pub first: f64,
    pub ratio: f64,
}

impl GeometricTail {
    fn mass(&self) -> f64 {
        self.first / (1.0 - self.ratio)
    }
}

/// Distribution of `J` on `{0, 1, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JDistribution {
    pmf: Vec<f64>,
    tail: Option<GeometricTail>,
    /// `ge[j] = P(J >= j)` for `j < pmf.len()`, tail included.
    ge: Vec<f64>,
    /// `le[j] = P(J <= j)` for `j < pmf.len()`.
    le: Vec<f64>,
}

impl JDistribution {
    /// Finitely supported distribution with `P(J = j) = pmf[j]`.
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        Self::build(pmf, None)
    }

    /// Explicit head followed by a geometric tail starting at `pmf.len()`.
    pub fn with_geometric_tail(pmf: Vec<f64>, first: f64, ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) || first.is_nan() || first < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "geometric tail needs first >= 0 and ratio in [0, 1), got {first}, {ratio}"
            )));
        }
        let mut pmf = pmf;
        let mut tail = GeometricTail { first, ratio };
        // Unroll until the tail cannot contain the median.
        while tail.mass() > 0.25 {
            pmf.push(tail.first);
            tail.first *= ratio;
        }
        Self::build(pmf, Some(tail))
    }

    fn build(pmf: Vec<f64>, tail: Option<GeometricTail>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidDistribution("empty pmf".into()));
        }
        if let Some(bad) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("invalid probability {bad}")));
        }
        let tail_mass = tail.map_or(0.0, |t| t.mass());
        let total: f64 = pmf.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let n = pmf.len();
        let mut ge = vec![0.0; n];
        let mut acc = tail_mass;
        for j in (0..n).rev() {
            acc += pmf[j];
            ge[j] = acc;
        }
        let mut le = vec![0.0; n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += pmf[j];
            le[j] = acc;
        }
        Ok(JDistribution { pmf, tail, ge, le })
    }

    /// Explicit part of the pmf.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn tail(&self) -> Option<GeometricTail> {
        self.tail
    }

    pub fn prob(&self, j: usize) -> f64 {
        let n = self.pmf.len();
        match (j < n, self.tail) {
            (true, _) => self.pmf[j],
            (false, Some(t)) => t.first * t.ratio.powi((j - n) as i32),
            (false, None) => 0.0,
        }
    }

    /// `P(J >= j)`.
    pub fn prob_ge(&self, j: usize) -> f64 {
        let n = self.pmf.len();
        match (j < n, self.tail) {
            (true, _) => self.ge[j],
            (false, Some(t)) => t.first * t.ratio.powi((j - n) as i32) / (1.0 - t.ratio),
            (false, None) => 0.0,
        }
    }

    /// `P(J <= j)`.
    pub fn prob_le(&self, j: usize) -> f64 {
        if j < self.pmf.len() {
            self.le[j]
        } else {
            1.0 - self.prob_ge(j + 1)
        }
    }

    pub fn mean(&self) -> f64 {
        let head: f64 = self.pmf.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
        let n = self.pmf.len() as f64;
        let tail = self.tail.map_or(0.0, |t| {
            let r = t.ratio;
            t.first * (n / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
        });
        head + tail
    }

    /// `min{m : P(J <= m) >= 1/2}`.
    pub fn smallest_median(&self) -> usize {
        // The tail carries at most a quarter of the mass, so the median is explicit.
        self.le.partition_point(|&c| c < 0.5).min(self.pmf.len() - 1)
    }

    /// `E|J - m|` for `m` inside the explicit part.
    fn abs_dev(&self, m: usize) -> f64 {
        let head: f64 = self
            .pmf
            .iter()
            .enumerate()
            .map(|(j, p)| (j as f64 - m as f64).abs() * p)
            .sum();
        let n = self.pmf.len();
        let tail = self.tail.map_or(0.0, |t| {
            let r = t.ratio;
            t.first * ((n - m) as f64 / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
        });
        head + tail
    }

    /// Survival function of `J` expressed on the meeting-time scale:
    /// entry `j - 1` is `P(J >= j) = P(tau > k + jL)`.
    pub fn tau_survival(&self) -> TauSurvival {
        let n = self.pmf.len();
        let values: Vec<f64> = (1..=n).map(|j| self.prob_ge(j)).collect();
        match self.tail {
            Some(t) => TauSurvival {
                values,
                tail_ratio: Some(t.ratio),
            },
            None => TauSurvival {
                values,
                tail_ratio: None,
            },
        }
    }
}

/// `P(tau > k + jL)` for `j = 1, 2, ...` at fixed `(k, L)`.
///
/// `values[j - 1]` holds the `j`-th survival. With `tail_ratio = Some(r)` the
/// sequence continues geometrically after the last stored value; otherwise
/// it is zero from there on.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSurvival {
    values: Vec<f64>,
    tail_ratio: Option<f64>,
}

impl TauSurvival {
    pub fn new(values: Vec<f64>, tail_ratio: Option<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSurvival("survival values must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSurvival("survival values must be nonincreasing".into()));
        }
        match tail_ratio {
            Some(r) if !(0.0..1.0).contains(&r) => {
                return Err(Error::InvalidSurvival(format!("tail ratio {r} outside [0, 1)")));
            }
            None if values.last().is_some_and(|&v| v > TAIL_TOLERANCE) => {
                return Err(Error::InvalidSurvival(
                    "explicit survival must end below the tail tolerance".into(),
                ));
            }
            _ => {}
        }
        Ok(TauSurvival { values, tail_ratio })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_ratio(&self) -> Option<f64> {
        self.tail_ratio
    }

    /// `P(tau > k + jL)` for `j >= 1`.
    pub fn get(&self, j: usize) -> f64 {
        assert!(j >= 1, "survival is indexed from j = 1");
        let n = self.values.len();
        if j <= n {
            return self.values[j - 1];
        }
        match (self.tail_ratio, self.values.last()) {
            (Some(r), Some(&last)) => last * r.powi((j - n) as i32),
            _ => 0.0,
        }
    }
}

/// Old bound `E[J]`.
pub fn old_bound_exact(jd: &JDistribution) -> f64 {
    jd.mean()
}

/// New bound `Σ_{j≥1} min{P(J≥j), P(J≤j)}`.
pub fn new_bound_exact(jd: &JDistribution) -> f64 {
    let n = jd.pmf.len();
    let head: f64 = (1..n).map(|j| jd.prob_ge(j).min(jd.prob_le(j))).sum();
    // Past the median the minimum is always the upper tail.
    let tail = jd.tail.map_or(0.0, |t| t.first / ((1.0 - t.ratio) * (1.0 - t.ratio)));
    head + tail
}

/// New bound as `E|J - m_J| + P(J > 0) - max{P(J > m_J), P(J < m_J)}`.
pub fn new_bound_median_form(jd: &JDistribution) -> f64 {
    let m = jd.smallest_median();
    let above = jd.prob_ge(m + 1);
    let below = if m == 0 { 0.0 } else { jd.prob_le(m - 1) };
    jd.abs_dev(m) + jd.prob_ge(1) - above.max(below)
}

/// New bound from meeting-time survivals `S_j = P(tau > k + jL)`:
/// `0.5 Σ_{j≥1} [1 - |S_{j+1} + S_j - 1|] + 0.5 S_1`.
pub fn new_bound_tau_form(survival: &TauSurvival) -> f64 {
    let n = survival.values.len();
    let mut total = 0.5 * survival.get(1);
    let mut j = 1;
    loop {
        let (s, s_next) = (survival.get(j), survival.get(j + 1));
        if j >= n && s + s_next <= 1.0 {
            // Inside the tail every term is s_j + s_{j+1}.
            if let Some(r) = survival.tail_ratio {
                total += 0.5 * s * (1.0 + r) / (1.0 - r);
            }
            return total;
        }
        total += 0.5 * (1.0 - (s_next + s - 1.0).abs());
        j += 1;
    }
}

/// Whether the two bounds coincide: `2 p0 >= 1 - p1`.
pub fn bounds_equal_predicate(jd: &JDistribution) -> bool {
    2.0 * jd.prob(0) >= 1.0 - jd.prob(1)
}

/// Equality criterion on the meeting-time scale, `P(zeta <= L) >= P(zeta > 2L)`
/// with `zeta = tau - k`.
pub fn zeta_criterion(survival: &TauSurvival) -> bool {
    1.0 - survival.get(1) >= survival.get(2)
}

/// Bound estimates from one replicate of `Q` processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBounds {
    pub old: f64,
    pub new: f64,
}

/// Estimates both bounds from per-process `J` values and leave-one-out
/// medians of `J̃`.
///
/// The new bound is `e + p - max(g, s)` with `e` the mean of `|J - m|`, `p`
/// the frequency of `J > 0`, and `g`, `s` the frequencies of `J > m` and
/// `J < m`. Medians are clamped at zero, since the population median of `J̃`
/// is nonnegative and the clamp keeps the estimator consistent with the
/// exact median form.
pub fn empirical_bounds(j: &[u64], medians: &[i64]) -> Result<EmpiricalBounds> {
    let q = j.len();
    if q < 2 {
        return Err(Error::TooFewProcesses(q));
    }
    if medians.len() != q {
        return Err(Error::PlanInvalid(format!(
            "{} medians for {q} processes",
            medians.len()
        )));
    }
    let n = q as f64;
    let (mut sum, mut e, mut p, mut g, mut s) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for (&jq, &mq) in j.iter().zip(medians) {
        let jq = jq as i64;
        let mq = mq.max(0);
        sum += jq as f64;
        e += (jq - mq).abs() as f64;
        p += usize::from(jq > 0);
        g += usize::from(jq > mq);
        s += usize::from(jq < mq);
    }
    Ok(EmpiricalBounds {
        old: sum / n,
        new: e / n + p as f64 / n - g.max(s) as f64 / n,
    })
}

/// Meeting time with `tau - (L - 1) ~ Geo(p)` on `{1, 2, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricSpec {
    p: f64,
    k: usize,
    lag: usize,
}

impl GeometricSpec {
    pub fn new(p: f64, k: usize, lag: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidSpec(format!("success probability {p} outside (0, 1]")));
        }
        if lag == 0 {
            return Err(Error::InvalidSpec("lag must be at least 1".into()));
        }
        Ok(GeometricSpec { p, k, lag })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    fn q(&self) -> f64 {
        1.0 - self.p
    }

    fn q_pow(&self, e: usize) -> f64 {
        self.q().powi(e as i32)
    }
}

/// Law of `J` under geometric meeting times: an atom at zero of weight
/// `1 - q^{k+1}` plus a geometric part with `P(J > j) = q^{k+1+Lj}`.
pub fn geometric_j_distribution(spec: &GeometricSpec) -> JDistribution {
    if spec.p == 1.0 {
        return JDistribution::new(vec![1.0]).expect("point mass is valid");
    }
    let head = spec.q_pow(spec.k + 1);
    let ratio = spec.q_pow(spec.lag);
    JDistribution::with_geometric_tail(vec![1.0 - head], head * (1.0 - ratio), ratio)
        .expect("geometric law is a valid distribution")
}

/// `P(tau > k + jL) = q^{k+1+L(j-1)}`.
pub fn geometric_tau_survival(spec: &GeometricSpec) -> TauSurvival {
    if spec.p == 1.0 {
        return TauSurvival::new(vec![0.0], None).expect("zero survival is valid");
    }
    TauSurvival::new(vec![spec.q_pow(spec.k + 1)], Some(spec.q_pow(spec.lag))).expect("geometric survival is valid")
}

/// Old bound in closed form, `q^{k+1} / (1 - q^L)`.
pub fn geometric_old_bound(spec: &GeometricSpec) -> f64 {
    if spec.p == 1.0 {
        return 0.0;
    }
    spec.q_pow(spec.k + 1) / (1.0 - spec.q_pow(spec.lag))
}

/// `m = floor((L - k - 1)/L - ln(1 + q^L) / (L ln q))`.
pub fn geometric_median_index(spec: &GeometricSpec) -> i64 {
    let l = spec.lag as f64;
    let q = spec.q();
    let x = (l - spec.k as f64 - 1.0) / l - (1.0 + spec.q_pow(spec.lag)).ln() / (l * q.ln());
    x.floor() as i64
}

/// New bound in closed form. Falls back to the old bound when `m <= 0`.
pub fn geometric_new_bound(spec: &GeometricSpec) -> f64 {
    if spec.p == 1.0 {
        return 0.0;
    }
    let m = geometric_median_index(spec);
    if m <= 0 {
        return geometric_old_bound(spec);
    }
    let m_usize = m as usize;
    let ql = spec.q_pow(spec.lag);
    let bracket = 1.0 - spec.q_pow(m_usize * spec.lag) - spec.q_pow((m_usize - 1) * spec.lag);
    m as f64 - spec.q_pow(spec.k + 1 + spec.lag) * bracket / (1.0 - ql)
}

/// New bound as the series
/// `0.5 Σ_{j≥1} [1 - |q^{k+1+L(j-1)} + q^{k+1+Lj} - 1|] + 0.5 q^{k+1}`,
/// stopped once the terms fall below `1e-14`.
pub fn geometric_new_bound_series(spec: &GeometricSpec) -> f64 {
    if spec.p == 1.0 {
        return 0.0;
    }
    let mut total = 0.5 * spec.q_pow(spec.k + 1);
    let mut j = 1usize;
    loop {
        let a = spec.q_pow(spec.k + 1 + spec.lag * (j - 1));
        let b = spec.q_pow(spec.k + 1 + spec.lag * j);
        let term = 0.5 * (1.0 - (a + b - 1.0).abs());
        total += term;
        if a + b <= 1.0 && term < 1e-14 {
            return total;
        }
        j += 1;
    }
}

/// One row of a bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub k: usize,
    pub lag: usize,
    pub old_bound: f64,
    pub new_bound: f64,
    pub replicate_sd_old: f64,
    pub replicate_sd_new: f64,
    pub processes: usize,
    pub replicates: usize,
    pub tv_exact: Option<f64>,
}

impl BoundRow {
    /// `none`, `old`, `new` or `both`, naming the bounds that exceed one.
    pub fn vacuous_flag(&self) -> &'static str {
        match (self.old_bound > 1.0, self.new_bound > 1.0) {
            (false, false) => "none",
            (true, false) => "old",
            (false, true) => "new",
            (true, true) => "both",
        }
    }
}

/// Bound sweep over a `(k, L)` grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn has_tv_exact(&self) -> bool {
        self.rows.iter().any(|r| r.tv_exact.is_some())
    }

    pub fn row(&self, k: usize, lag: usize) -> Option<&BoundRow> {
        self.rows.iter().find(|r| r.k == k && r.lag == lag)
    }
}
