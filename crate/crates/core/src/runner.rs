//! Replicated experiments over many coupled processes.
//!
//! A plan fixes a kernel, a list of lags, `Q` processes per replicate and a
//! number of replicates. For every `(replicate, lag)` the runner draws `Q`
//! meeting times, forms leave-one-out medians of `J̃` across processes, and
//! then evaluates bound estimates and the requested estimators on each trace.
//!
//! Every random draw comes from a stream keyed on its position
//! (`replicate`, `process`, `lag`, ...), and results are gathered in index
//! order before any aggregation, so output does not depend on the number of
//! worker threads.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    empirical_bounds, geometric_new_bound, geometric_old_bound, new_bound_exact, old_bound_exact, BoundReport,
    BoundRow, EmpiricalBounds, GeometricSpec,
};
use crate::coupling::{j_count, run_lagged_coupling, CoupledKernel, CoupledTrace, InitialDistribution, LagConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    h_backward, h_cv_single, h_forward, h_timeavg, h_timeavg_cv, loo_medians, required_x_index, EvaluatedTrace,
    TestFunction,
};
use crate::kernels::{
    Categorical, CoupledGibbsGaussian, CoupledIsingSsg, CoupledRwm, DiscreteMatrixKernel, GaussianStart, Observable,
    StdGaussian, TransitionMatrix, UniformSpins,
};
use crate::oracle::{j_distribution_from_tau, meeting_time_pmf, DiscreteChain};
use crate::rng::{coin, stream, Stream, DOMAIN_TRACE, DOMAIN_XI};
use crate::stats;

fn one() -> f64 {
    1.0
}

fn default_step() -> usize {
    1
}

/// Which coupled kernel to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Finite chain with an inline transition matrix and initial law.
    Discrete {
        matrix: TransitionMatrix,
        initial: Vec<f64>,
    },
    /// Random-walk Metropolis on a standard Gaussian target.
    RandomWalk {
        dimension: usize,
        proposal_scale: f64,
        #[serde(default)]
        init_mean: f64,
        #[serde(default = "one")]
        init_sd: f64,
    },
    /// Systematic-scan Gibbs on a bivariate Gaussian with correlation `rho`.
    GibbsGaussian {
        rho: f64,
        #[serde(default)]
        init_mean: f64,
        #[serde(default = "one")]
        init_sd: f64,
    },
    /// Single-site Gibbs on a periodic `side x side` Ising lattice.
    Ising { side: usize, beta: f64 },
    /// No chain: `tau - (L - 1)` is drawn directly from `Geo(p)`.
    Geometric { p: f64 },
}

impl KernelSpec {
    /// Number of real coordinates of one state.
    pub fn state_dim(&self) -> usize {
        match self {
            KernelSpec::Discrete { .. } => 1,
            KernelSpec::RandomWalk { dimension, .. } => *dimension,
            KernelSpec::GibbsGaussian { .. } => 2,
            KernelSpec::Ising { side, .. } => side * side,
            KernelSpec::Geometric { .. } => 0,
        }
    }
}

/// A named test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HSpec {
    /// Every coordinate of the state.
    Identity {},
    /// `1{X = state}` for discrete chains.
    Indicator {
        state: usize,
    },
    /// A single coordinate.
    Coordinate {
        index: usize,
    },
    /// Mean of the coordinates.
    Magnetization {},
    Constant {
        value: f64,
    },
}

impl HSpec {
    fn dim(&self, state_dim: usize) -> usize {
        match self {
            HSpec::Identity {} => state_dim,
            _ => 1,
        }
    }

    fn labels(&self, state_dim: usize) -> Vec<String> {
        match self {
            HSpec::Identity {} => (0..state_dim).map(|i| format!("x[{i}]")).collect(),
            HSpec::Indicator { state } => vec![format!("indicator({state})")],
            HSpec::Coordinate { index } => vec![format!("coordinate({index})")],
            HSpec::Magnetization {} => vec!["magnetization".into()],
            HSpec::Constant { value } => vec![format!("constant({value})")],
        }
    }
}

/// Concatenation of several [`HSpec`]s as one vector-valued test function.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTest {
    specs: Vec<HSpec>,
    state_dim: usize,
}

impl PlanTest {
    pub fn new(specs: Vec<HSpec>, state_dim: usize) -> Self {
        PlanTest { specs, state_dim }
    }

    pub fn labels(&self) -> Vec<String> {
        self.specs.iter().flat_map(|s| s.labels(self.state_dim)).collect()
    }
}

impl<S: Observable> TestFunction<S> for PlanTest {
    fn dim(&self) -> usize {
        self.specs.iter().map(|s| s.dim(self.state_dim)).sum()
    }

    fn eval(&self, state: &S, out: &mut [f64]) {
        let coords = state.coordinates();
        let mut at = 0;
        for spec in &self.specs {
            match spec {
                HSpec::Identity {} => {
                    out[at..at + coords.len()].copy_from_slice(&coords);
                    at += coords.len();
                    continue;
                }
                HSpec::Indicator { state: s } => out[at] = f64::from(u8::from(state.category() == Some(*s))),
                HSpec::Coordinate { index } => out[at] = coords[*index],
                HSpec::Magnetization {} => out[at] = stats::mean(&coords),
                HSpec::Constant { value } => out[at] = *value,
            }
            at += 1;
        }
    }
}

/// Estimator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Forward,
    Backward,
    CvSingle,
    TimeAvg,
    TimeAvgCv,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Forward => "forward",
            EstimatorKind::Backward => "backward",
            EstimatorKind::CvSingle => "cv_single",
            EstimatorKind::TimeAvg => "time_avg",
            EstimatorKind::TimeAvgCv => "time_avg_cv",
        }
    }

    fn averaged(self) -> bool {
        matches!(self, EstimatorKind::TimeAvg | EstimatorKind::TimeAvgCv)
    }

    fn uses_cv(self) -> bool {
        matches!(self, EstimatorKind::CvSingle | EstimatorKind::TimeAvgCv)
    }

    /// The plain estimator a control-variate estimator is compared against.
    pub fn baseline(self) -> Option<EstimatorKind> {
        match self {
            EstimatorKind::CvSingle => Some(EstimatorKind::Backward),
            EstimatorKind::TimeAvgCv => Some(EstimatorKind::TimeAvg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorRequest {
    pub kind: EstimatorKind,
    pub k: usize,
    /// Averaging endpoint for the time-averaged kinds.
    #[serde(default)]
    pub r: Option<usize>,
}

impl EstimatorRequest {
    pub fn new(kind: EstimatorKind, k: usize, r: Option<usize>) -> Self {
        EstimatorRequest { kind, k, r }
    }

    /// Last burn-in index the estimator touches.
    pub fn endpoint(&self) -> usize {
        self.r.unwrap_or(self.k)
    }
}

/// Inclusive arithmetic grid `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KGrid {
    pub start: usize,
    pub stop: usize,
    #[serde(default = "default_step")]
    pub step: usize,
}

impl KGrid {
    pub fn values(&self) -> Vec<usize> {
        if self.step == 0 || self.start > self.stop {
            return Vec::new();
        }
        (self.start..=self.stop).step_by(self.step).collect()
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kernel: KernelSpec,
    pub lags: Vec<usize>,
    /// Burn-ins at which bounds are estimated; `None` skips bounds.
    pub k_grid: Option<KGrid>,
    pub processes: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorRequest>,
    pub h: Vec<HSpec>,
    pub max_sweeps: usize,
}

impl ExperimentPlan {
    /// Plan with defaults: no bounds, no estimators, `max_sweeps = 10^6`.
    pub fn new(kernel: KernelSpec, lags: Vec<usize>, processes: usize, replicates: usize, master_seed: u64) -> Self {
        ExperimentPlan {
            kernel,
            lags,
            k_grid: None,
            processes,
            replicates,
            master_seed,
            estimators: Vec::new(),
            h: Vec::new(),
            max_sweeps: 1_000_000,
        }
    }

    pub fn with_k_grid(mut self, start: usize, stop: usize, step: usize) -> Self {
        self.k_grid = Some(KGrid { start, stop, step });
        self
    }

    pub fn with_estimator(mut self, kind: EstimatorKind, k: usize, r: Option<usize>) -> Self {
        self.estimators.push(EstimatorRequest::new(kind, k, r));
        self
    }

    pub fn with_h(mut self, h: HSpec) -> Self {
        self.h.push(h);
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn ks(&self) -> Vec<usize> {
        self.k_grid.map(|g| g.values()).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::PlanInvalid(msg));
        if self.lags.is_empty() || self.lags.contains(&0) {
            return bad("lags must be a nonempty list of positive integers".into());
        }
        if self.replicates == 0 || self.processes == 0 {
            return bad("processes and replicates must be positive".into());
        }
        if let Some(grid) = self.k_grid {
            if grid.values().is_empty() {
                return bad(format!(
                    "k grid {}..={} step {} is empty",
                    grid.start, grid.stop, grid.step
                ));
            }
        }
        if self.k_grid.is_none() && self.estimators.is_empty() {
            return bad("plan requests neither bounds nor estimators".into());
        }
        let needs_many = self.k_grid.is_some() || self.estimators.iter().any(|e| e.kind.uses_cv());
        if needs_many && self.processes < 2 {
            return bad(format!(
                "bounds and control variates need at least two processes, got {}",
                self.processes
            ));
        }
        if !self.estimators.is_empty() {
            if matches!(self.kernel, KernelSpec::Geometric { .. }) {
                return bad("estimators need a kernel; geometric injection only draws meeting times".into());
            }
            if self.h.is_empty() {
                return bad("estimators requested without any test function".into());
            }
        }
        for req in &self.estimators {
            match (req.kind.averaged(), req.r) {
                (true, None) => return bad(format!("{} needs an endpoint r", req.kind.name())),
                (true, Some(r)) if r < req.k => return bad(format!("endpoint r = {r} is below k = {}", req.k)),
                (false, Some(r)) if r != req.k => {
                    return bad(format!("{} takes no endpoint r", req.kind.name()));
                }
                _ => {}
            }
        }
        let dim = self.kernel.state_dim();
        for h in &self.h {
            match h {
                HSpec::Indicator { .. } if !matches!(self.kernel, KernelSpec::Discrete { .. }) => {
                    return bad("indicator test functions need a discrete kernel".into());
                }
                HSpec::Indicator { state } => {
                    if let KernelSpec::Discrete { matrix, .. } = &self.kernel {
                        if *state >= matrix.n() {
                            return bad(format!("indicator state {state} out of range"));
                        }
                    }
                }
                HSpec::Coordinate { index } if *index >= dim => {
                    return bad(format!("coordinate {index} out of range for dimension {dim}"));
                }
                _ => {}
            }
        }
        if self.max_sweeps <= self.lags.iter().copied().max().unwrap_or(0) {
            return bad("max_sweeps must exceed every lag".into());
        }
        if let KernelSpec::Discrete { matrix, initial } = &self.kernel {
            if initial.len() != matrix.n() {
                return bad("initial vector length differs from the matrix size".into());
            }
        }
        Ok(())
    }

    pub fn test_function(&self) -> PlanTest {
        PlanTest::new(self.h.clone(), self.kernel.state_dim())
    }
}

/// Mean, standard error and variance of one estimator across all traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    pub k: usize,
    pub r: usize,
    pub lag: usize,
    pub coordinates: Vec<String>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub variance: Vec<f64>,
    pub traces: usize,
    /// Variance ratio against the matching plain estimator, per coordinate;
    /// `None` where the plain estimator has zero variance.
    pub rrv: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingSummary {
    pub lag: usize,
    pub mean_joint_steps: f64,
    pub max_tau: usize,
    pub traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub master_seed: u64,
    pub processes: usize,
    pub replicates: usize,
    pub bounds: BoundReport,
    pub estimators: Vec<EstimatorSummary>,
    pub meeting: Vec<MeetingSummary>,
    pub wall_clock_seconds: f64,
}

/// Per-trace estimator values for one `(request, lag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSamples {
    pub request: EstimatorRequest,
    pub lag: usize,
    /// One vector per trace, replicate-major.
    pub values: Vec<Vec<f64>>,
}

impl EstimatorSamples {
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }
}

/// Per-replicate bound estimates for one `(k, lag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSamples {
    pub k: usize,
    pub lag: usize,
    pub replicates: Vec<EmpiricalBounds>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub estimator_samples: Vec<EstimatorSamples>,
    pub bound_samples: Vec<BoundSamples>,
    /// Meeting times per lag, replicate-major.
    pub taus: Vec<(usize, Vec<usize>)>,
}

impl RunOutput {
    pub fn samples(&self, kind: EstimatorKind, k: usize, lag: usize) -> Option<&EstimatorSamples> {
        self.estimator_samples
            .iter()
            .find(|s| s.request.kind == kind && s.request.k == k && s.lag == lag)
    }
}

/// Ratio of empirical variances, control variate over plain, per coordinate.
pub fn rrv(plain: &EstimatorSamples, cv: &EstimatorSamples) -> Result<Vec<f64>> {
    if plain.values.len() != cv.values.len() {
        return Err(Error::PlanInvalid("RRV needs paired trace sets".into()));
    }
    let dim = plain.values.first().map_or(0, Vec::len);
    (0..dim)
        .map(|i| {
            let vp = stats::variance(&plain.coordinate(i));
            if vp == 0.0 {
                return Err(Error::ZeroVariance(i));
            }
            Ok(stats::variance(&cv.coordinate(i)) / vp)
        })
        .collect()
}

struct LagOutcome {
    taus: Vec<usize>,
    bounds: Vec<EmpiricalBounds>,
    /// `[q][request]` estimator values.
    estimates: Vec<Vec<Vec<f64>>>,
}

fn provenance(replicate: usize, process: usize, lag: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Process {
        replicate,
        process,
        lag,
        source: Box::new(e),
    }
}

fn j_tilde(master: u64, replicate: usize, q: usize, lag: usize, tau: usize, t: usize) -> i64 {
    let xi = coin(master, &[DOMAIN_XI, replicate as u64, q as u64, lag as u64, t as u64]);
    j_count(tau, t, lag) as i64 - i64::from(xi)
}

/// Leave-one-out medians of `J̃_t` across processes.
fn medians_at(master: u64, replicate: usize, lag: usize, taus: &[usize], t: usize) -> Result<Vec<i64>> {
    let tildes: Vec<i64> = taus
        .iter()
        .enumerate()
        .map(|(q, &tau)| j_tilde(master, replicate, q, lag, tau, t))
        .collect();
    loo_medians(&tildes)
}

fn bounds_for(plan: &ExperimentPlan, replicate: usize, lag: usize, taus: &[usize]) -> Result<Vec<EmpiricalBounds>> {
    plan.ks()
        .into_iter()
        .map(|k| {
            let j: Vec<u64> = taus.iter().map(|&tau| j_count(tau, k, lag)).collect();
            let medians = medians_at(plan.master_seed, replicate, lag, taus, k)?;
            empirical_bounds(&j, &medians)
        })
        .collect()
}

/// Control-variate truncations `[request][q][t - k]`.
fn cv_truncations(plan: &ExperimentPlan, replicate: usize, lag: usize, taus: &[usize]) -> Result<Vec<Vec<Vec<i64>>>> {
    plan.estimators
        .iter()
        .map(|req| {
            let q_count = taus.len();
            if !req.kind.uses_cv() {
                return Ok(vec![Vec::new(); q_count]);
            }
            let per_t = (req.k..=req.endpoint())
                .map(|t| medians_at(plan.master_seed, replicate, lag, taus, t))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..q_count).map(|q| per_t.iter().map(|m| m[q]).collect()).collect())
        })
        .collect()
}

fn evaluate(req: &EstimatorRequest, ev: &EvaluatedTrace, m_hats: &[i64]) -> Result<Vec<f64>> {
    let r = req.endpoint();
    match req.kind {
        EstimatorKind::Forward => h_forward(ev, req.k),
        EstimatorKind::Backward => h_backward(ev, req.k),
        EstimatorKind::CvSingle => h_cv_single(ev, req.k, m_hats[0]),
        EstimatorKind::TimeAvg => h_timeavg(ev, req.k, r),
        EstimatorKind::TimeAvgCv => h_timeavg_cv(ev, req.k, r, m_hats),
    }
}

fn run_lag<K, D>(
    plan: &ExperimentPlan,
    kernel: &K,
    initial: &D,
    h: &PlanTest,
    replicate: usize,
    lag: usize,
) -> Result<LagOutcome>
where
    K: CoupledKernel,
    K::State: Observable,
    D: InitialDistribution<K::State> + Sync,
{
    let config = LagConfig::new(lag, plan.max_sweeps, initial)?;
    let traces: Vec<(CoupledTrace<K::State>, Stream)> = (0..plan.processes)
        .into_par_iter()
        .map(|q| {
            let mut rng = stream(
                plan.master_seed,
                &[DOMAIN_TRACE, replicate as u64, q as u64, lag as u64],
            );
            let trace = run_lagged_coupling(kernel, &config, &mut rng).map_err(provenance(replicate, q, lag))?;
            Ok((trace, rng))
        })
        .collect::<Result<_>>()?;
    let taus: Vec<usize> = traces.iter().map(|(t, _)| t.tau().expect("met trace")).collect();
    let bounds = bounds_for(plan, replicate, lag, &taus)?;
    let truncations = cv_truncations(plan, replicate, lag, &taus)?;

    let estimates = traces
        .into_par_iter()
        .enumerate()
        .map(|(q, (mut trace, mut rng))| {
            if plan.estimators.is_empty() {
                return Ok(Vec::new());
            }
            let tau = taus[q];
            let need = plan
                .estimators
                .iter()
                .zip(&truncations)
                .map(|(req, m)| {
                    let m_max = m[q].iter().copied().max().unwrap_or(-1);
                    required_x_index(tau, lag, req.k, req.endpoint(), m_max)
                })
                .max()
                .unwrap_or(0);
            let wrap = provenance(replicate, q, lag);
            trace.extend_to(kernel, &mut rng, need).map_err(&wrap)?;
            let ev = EvaluatedTrace::new(&trace, h).map_err(&wrap)?;
            plan.estimators
                .iter()
                .zip(&truncations)
                .map(|(req, m)| evaluate(req, &ev, &m[q]).map_err(&wrap))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LagOutcome {
        taus,
        bounds,
        estimates,
    })
}

fn run_family<K, D>(plan: &ExperimentPlan, kernel: &K, initial: &D) -> Result<Vec<Vec<LagOutcome>>>
where
    K: CoupledKernel,
    K::State: Observable,
    D: InitialDistribution<K::State> + Sync,
{
    let h = plan.test_function();
    (0..plan.replicates)
        .into_par_iter()
        .map(|rep| {
            plan.lags
                .iter()
                .map(|&lag| run_lag(plan, kernel, initial, &h, rep, lag))
                .collect()
        })
        .collect()
}

/// Draws `tau = delta + L - 1`, `delta ~ Geo(p)` on `{1, 2, ...}`.
pub fn sample_geometric_tau<R: Rng + ?Sized>(p: f64, lag: usize, rng: &mut R) -> Result<usize> {
    let geo = Geometric::new(p).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let failures = geo.sample(rng) as usize;
    Ok(failures + lag)
}

fn run_geometric(plan: &ExperimentPlan, p: f64) -> Result<Vec<Vec<LagOutcome>>> {
    GeometricSpec::new(p, 0, 1)?;
    (0..plan.replicates)
        .into_par_iter()
        .map(|rep| {
            plan.lags
                .iter()
                .map(|&lag| {
                    let taus = (0..plan.processes)
                        .map(|q| {
                            let mut rng = stream(plan.master_seed, &[DOMAIN_TRACE, rep as u64, q as u64, lag as u64]);
                            sample_geometric_tau(p, lag, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let bounds = bounds_for(plan, rep, lag, &taus)?;
                    Ok(LagOutcome {
                        taus,
                        bounds,
                        estimates: Vec::new(),
                    })
                })
                .collect()
        })
        .collect()
}

fn dispatch(plan: &ExperimentPlan) -> Result<Vec<Vec<LagOutcome>>> {
    match &plan.kernel {
        KernelSpec::Discrete { matrix, initial } => {
            let kernel = DiscreteMatrixKernel::new(matrix.clone())?;
            let init = Categorical::new(initial.clone())?;
            run_family(plan, &kernel, &init)
        }
        KernelSpec::RandomWalk {
            dimension,
            proposal_scale,
            init_mean,
            init_sd,
        } => {
            let kernel = CoupledRwm::new(StdGaussian { dim: *dimension }, *proposal_scale)?;
            let init = GaussianStart {
                dim: *dimension,
                mean: *init_mean,
                sd: *init_sd,
            };
            run_family(plan, &kernel, &init)
        }
        KernelSpec::GibbsGaussian {
            rho,
            init_mean,
            init_sd,
        } => {
            let kernel = CoupledGibbsGaussian::new(*rho)?;
            let init = GaussianStart {
                dim: 2,
                mean: *init_mean,
                sd: *init_sd,
            };
            run_family(plan, &kernel, &init)
        }
        KernelSpec::Ising { side, beta } => {
            let kernel = CoupledIsingSsg::new(*side, *beta)?;
            let init = UniformSpins { sites: side * side };
            run_family(plan, &kernel, &init)
        }
        KernelSpec::Geometric { p } => run_geometric(plan, *p),
    }
}

/// Runs the plan on the current rayon pool.
pub fn execute(plan: &ExperimentPlan) -> Result<RunOutput> {
    plan.validate()?;
    let started = Instant::now();
    let outcomes = dispatch(plan)?;
    let mut output = aggregate(plan, outcomes)?;
    output.summary.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(output)
}

/// Runs the plan on a dedicated pool of `threads` workers.
pub fn execute_with_threads(plan: &ExperimentPlan, threads: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::PlanInvalid(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| execute(plan))
}

fn aggregate(plan: &ExperimentPlan, outcomes: Vec<Vec<LagOutcome>>) -> Result<RunOutput> {
    let ks = plan.ks();
    let tv = match (&plan.kernel, ks.last()) {
        (KernelSpec::Discrete { matrix, initial }, Some(&k_max)) => {
            Some(DiscreteChain::new(matrix.clone(), initial.clone())?.tv_curve(k_max))
        }
        _ => None,
    };
    let labels = plan.test_function().labels();

    let mut rows = Vec::new();
    let mut bound_samples = Vec::new();
    let mut estimator_samples = Vec::new();
    let mut estimators = Vec::new();
    let mut meeting = Vec::new();
    let mut taus_out = Vec::new();

    for (li, &lag) in plan.lags.iter().enumerate() {
        let taus: Vec<usize> = outcomes.iter().flat_map(|rep| rep[li].taus.iter().copied()).collect();
        let steps: Vec<f64> = taus.iter().map(|&t| (t - lag) as f64).collect();
        meeting.push(MeetingSummary {
            lag,
            mean_joint_steps: stats::mean(&steps),
            max_tau: taus.iter().copied().max().unwrap_or(0),
            traces: taus.len(),
        });
        taus_out.push((lag, taus));

        for (ki, &k) in ks.iter().enumerate() {
            let reps: Vec<EmpiricalBounds> = outcomes.iter().map(|rep| rep[li].bounds[ki]).collect();
            let old: Vec<f64> = reps.iter().map(|b| b.old).collect();
            let new: Vec<f64> = reps.iter().map(|b| b.new).collect();
            rows.push(BoundRow {
                k,
                lag,
                old_bound: stats::mean(&old),
                new_bound: stats::mean(&new),
                replicate_sd_old: stats::sd(&old),
                replicate_sd_new: stats::sd(&new),
                processes: plan.processes,
                replicates: plan.replicates,
                tv_exact: tv.as_ref().map(|c| c[k]),
            });
            bound_samples.push(BoundSamples {
                k,
                lag,
                replicates: reps,
            });
        }

        for (ri, req) in plan.estimators.iter().enumerate() {
            let values: Vec<Vec<f64>> = outcomes
                .iter()
                .flat_map(|rep| rep[li].estimates.iter().map(|per_q| per_q[ri].clone()))
                .collect();
            estimator_samples.push(EstimatorSamples {
                request: *req,
                lag,
                values,
            });
        }
    }

    for samples in &estimator_samples {
        let req = samples.request;
        let dim = labels.len();
        let columns: Vec<Vec<f64>> = (0..dim).map(|i| samples.coordinate(i)).collect();
        let rrv_values = req.kind.baseline().and_then(|base| {
            estimator_samples
                .iter()
                .find(|s| {
                    s.lag == samples.lag
                        && s.request.kind == base
                        && s.request.k == req.k
                        && s.request.endpoint() == req.endpoint()
                })
                .map(|plain| {
                    (0..dim)
                        .map(|i| {
                            let vp = stats::variance(&plain.coordinate(i));
                            (vp > 0.0).then(|| stats::variance(&columns[i]) / vp)
                        })
                        .collect()
                })
        });
        estimators.push(EstimatorSummary {
            kind: req.kind,
            k: req.k,
            r: req.endpoint(),
            lag: samples.lag,
            coordinates: labels.clone(),
            mean: columns.iter().map(|c| stats::mean(c)).collect(),
            se: columns.iter().map(|c| stats::standard_error(c)).collect(),
            variance: columns.iter().map(|c| stats::variance(c)).collect(),
            traces: samples.values.len(),
            rrv: rrv_values,
        });
    }

    Ok(RunOutput {
        summary: RunSummary {
            master_seed: plan.master_seed,
            processes: plan.processes,
            replicates: plan.replicates,
            bounds: BoundReport { rows },
            estimators,
            meeting,
            wall_clock_seconds: 0.0,
        },
        estimator_samples,
        bound_samples,
        taus: taus_out,
    })
}

/// Bounds computed exactly instead of estimated: closed forms for geometric
/// meeting times, the pair-chain oracle for discrete chains.
pub fn exact_bound_report(kernel: &KernelSpec, lags: &[usize], ks: &[usize]) -> Result<BoundReport> {
    let mut rows = Vec::new();
    let row = |k, lag, old, new, tv| BoundRow {
        k,
        lag,
        old_bound: old,
        new_bound: new,
        replicate_sd_old: 0.0,
        replicate_sd_new: 0.0,
        processes: 0,
        replicates: 0,
        tv_exact: tv,
    };
    match kernel {
        KernelSpec::Geometric { p } => {
            for &lag in lags {
                for &k in ks {
                    let spec = GeometricSpec::new(*p, k, lag)?;
                    rows.push(row(
                        k,
                        lag,
                        geometric_old_bound(&spec),
                        geometric_new_bound(&spec),
                        None,
                    ));
                }
            }
        }
        KernelSpec::Discrete { matrix, initial } => {
            let chain = DiscreteChain::new(matrix.clone(), initial.clone())?;
            let tv = chain.tv_curve(ks.iter().copied().max().unwrap_or(0));
            for &lag in lags {
                let pmf = meeting_time_pmf(&chain, lag, None)?;
                for &k in ks {
                    let jd = j_distribution_from_tau(&pmf, k)?;
                    rows.push(row(k, lag, old_bound_exact(&jd), new_bound_exact(&jd), Some(tv[k])));
                }
            }
        }
        _ => {
            return Err(Error::PlanInvalid(
                "exact bounds are available for geometric and discrete kernels only".into(),
            ))
        }
    }
    Ok(BoundReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slow_chain() -> KernelSpec {
        KernelSpec::Discrete {
            matrix: TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap(),
            initial: vec![1.0, 0.0],
        }
    }

    #[test]
    fn k_grid_values() {
        assert_eq!(
            KGrid {
                start: 0,
                stop: 6,
                step: 3
            }
            .values(),
            vec![0, 3, 6]
        );
        assert!(KGrid {
            start: 4,
            stop: 3,
            step: 1
        }
        .values()
        .is_empty());
        assert!(KGrid {
            start: 0,
            stop: 3,
            step: 0
        }
        .values()
        .is_empty());
    }

    #[test]
    fn plan_validation() {
        let base = ExperimentPlan::new(slow_chain(), vec![1], 4, 2, 1).with_k_grid(0, 3, 1);
        assert!(base.validate().is_ok());
        assert!(ExperimentPlan {
            lags: vec![],
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(base.clone().with_k_grid(3, 0, 1).validate().is_err());
        assert!(ExperimentPlan {
            processes: 1,
            ..base.clone()
        }
        .validate()
        .is_err());
        let no_h = ExperimentPlan::new(slow_chain(), vec![1], 4, 2, 1).with_estimator(EstimatorKind::Backward, 0, None);
        assert!(no_h.validate().is_err());
        let no_r = no_h.clone().with_h(HSpec::Identity {});
        assert!(no_r.validate().is_ok());
        assert!(no_r
            .clone()
            .with_estimator(EstimatorKind::TimeAvg, 3, None)
            .validate()
            .is_err());
        assert!(no_r
            .clone()
            .with_estimator(EstimatorKind::TimeAvg, 3, Some(2))
            .validate()
            .is_err());
        assert!(no_r.clone().with_h(HSpec::Coordinate { index: 1 }).validate().is_err());
        assert!(no_r.clone().with_h(HSpec::Indicator { state: 2 }).validate().is_err());
        let geo = ExperimentPlan::new(KernelSpec::Geometric { p: 0.5 }, vec![1], 4, 2, 1)
            .with_estimator(EstimatorKind::Forward, 0, None)
            .with_h(HSpec::Identity {});
        assert!(matches!(geo.validate(), Err(Error::PlanInvalid(_))));
    }

    #[test]
    fn smallest_plan_by_hand() {
        // Identical rows: the pair meets at the first joint step unless X_1 == Y_0.
        let kernel = KernelSpec::Discrete {
            matrix: TransitionMatrix::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            initial: vec![1.0, 0.0],
        };
        let plan = ExperimentPlan::new(kernel, vec![1], 2, 1, 3)
            .with_k_grid(0, 1, 1)
            .with_estimator(EstimatorKind::Forward, 0, None)
            .with_h(HSpec::Identity {});
        let out = execute(&plan).unwrap();
        // X = 0, 1, 1, ...; Y = 0, 1, ...: tau = 2, J_0 = 1, J_1 = 0.
        assert_eq!(out.taus, vec![(1, vec![2, 2])]);
        let est = &out.summary.estimators[0];
        // h(X_0) + h(X_1) - h(Y_0) = 0 + 1 - 0
        assert_eq!(est.mean, vec![1.0]);
        let rows = &out.summary.bounds.rows;
        assert_eq!(rows[0].old_bound, 1.0);
        assert_eq!(rows[1].old_bound, 0.0);
        assert_eq!(rows[1].new_bound, 0.0);
        assert_eq!(rows[0].tv_exact, Some(1.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let plan = ExperimentPlan::new(slow_chain(), vec![1, 2], 8, 6, 42)
            .with_k_grid(0, 5, 1)
            .with_estimator(EstimatorKind::CvSingle, 0, None)
            .with_estimator(EstimatorKind::TimeAvgCv, 1, Some(4))
            .with_h(HSpec::Indicator { state: 1 });
        let a = execute_with_threads(&plan, 1).unwrap();
        let b = execute_with_threads(&plan, 4).unwrap();
        assert_eq!(a.summary.bounds, b.summary.bounds);
        assert_eq!(a.estimator_samples, b.estimator_samples);
        assert_eq!(a.summary.estimators, b.summary.estimators);
    }

    #[test]
    fn cap_exceeded_carries_provenance() {
        let kernel = KernelSpec::Discrete {
            matrix: TransitionMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            initial: vec![0.5, 0.5],
        };
        let plan = ExperimentPlan::new(kernel, vec![1], 3, 1, 0)
            .with_k_grid(0, 0, 1)
            .with_max_sweeps(50);
        // The flip chain from different parities never meets; over three
        // processes at least one starts apart with overwhelming probability.
        let seeds = (0..20u64).find_map(|s| {
            execute(&ExperimentPlan {
                master_seed: s,
                ..plan.clone()
            })
            .err()
        });
        let err = seeds.expect("some seed yields a non-meeting pair");
        assert!(err.is_cap_exceeded());
        assert!(matches!(err, Error::Process { lag: 1, .. }));
    }

    #[test]
    fn rrv_of_constant_is_zero_variance() {
        let s = EstimatorSamples {
            request: EstimatorRequest::new(EstimatorKind::Backward, 0, None),
            lag: 1,
            values: vec![vec![2.0]; 5],
        };
        assert_eq!(rrv(&s, &s).unwrap_err(), Error::ZeroVariance(0));
    }

    #[test]
    fn geometric_taus_have_the_right_offset() {
        let mut rng = stream(1, &[]);
        let taus: Vec<usize> = (0..2000)
            .map(|_| sample_geometric_tau(0.5, 3, &mut rng).unwrap())
            .collect();
        assert!(taus.iter().all(|&t| t >= 3));
        let at_lag = taus.iter().filter(|&&t| t == 3).count() as f64 / 2000.0;
        assert!((at_lag - 0.5).abs() < 0.05);
        assert!(!taus.iter().all(|&t| t == 3));
        assert_eq!(sample_geometric_tau(1.0, 2, &mut rng).unwrap(), 2);
    }

    #[test]
    fn exact_report_matches_closed_form() {
        let report = exact_bound_report(&KernelSpec::Geometric { p: 0.2 }, &[1, 2], &[0, 5]).unwrap();
        assert_eq!(report.rows.len(), 4);
        let spec = GeometricSpec::new(0.2, 5, 2).unwrap();
        assert_eq!(report.row(5, 2).unwrap().new_bound, geometric_new_bound(&spec));
        let discrete = exact_bound_report(&slow_chain(), &[1], &[0, 1, 2]).unwrap();
        for r in &discrete.rows {
            assert!(r.tv_exact.unwrap() <= r.new_bound + 1e-12);
            assert!(r.new_bound <= r.old_bound + 1e-12);
        }
        assert!(exact_bound_report(&KernelSpec::Ising { side: 2, beta: 0.1 }, &[1], &[0]).is_err());
    }
}
