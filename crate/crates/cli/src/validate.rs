//! Self-check battery run by `lagcv validate`.

use lagcv::bounds::{
    bounds_equal_predicate, new_bound_exact, new_bound_median_form, new_bound_tau_form, old_bound_exact, zeta_criterion,
};
use lagcv::coupling::{run_lagged_coupling, CoupledKernel, CoupledTrace, InitialDistribution, LagConfig};
use lagcv::estimators::{h_backward, h_forward, required_x_index, scalar, EvaluatedTrace};
use lagcv::kernels::{
    CoupledGibbsGaussian, CoupledIsingSsg, CoupledRwm, DiscreteMatrixKernel, GaussianStart, StdGaussian,
    TransitionMatrix, UniformSpins,
};
use lagcv::oracle::{random_chain, random_j_distribution};
use lagcv::rng::{stream, Stream, DOMAIN_BATTERY};
use rand::Rng;

const TOLERANCE: f64 = 1e-12;

/// One line of the PASS/FAIL table.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, failures: usize, cases: usize) -> Self {
        Check {
            name: name.into(),
            passed: failures == 0,
            detail: format!("{failures} of {cases} cases failed"),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<28} {}", self.name, self.detail)
    }
}

fn rng(seed: u64, battery: u64, case: usize) -> Stream {
    stream(seed, &[DOMAIN_BATTERY, battery, case as u64])
}

pub fn run(seed: u64, cases: usize, matrices: &[Vec<Vec<f64>>]) -> Vec<Check> {
    let mut checks = vec![
        forward_backward(seed, cases),
        bound_forms(seed, cases),
        equality_predicate(seed, cases),
        dominance(seed, cases),
    ];
    checks.extend(faithfulness(seed, cases));
    checks.push(diagonal(seed, cases));
    for (i, rows) in matrices.iter().enumerate() {
        checks.push(match TransitionMatrix::new(rows.clone()) {
            Ok(_) => Check {
                name: format!("row_sums[{i}]"),
                passed: true,
                detail: "rows are probability vectors".into(),
            },
            Err(e) => Check {
                name: format!("row_sums[{i}]"),
                passed: false,
                detail: e.to_string(),
            },
        });
    }
    checks
}

/// Runs a random discrete chain and returns the kernel, its trace and the
/// stream that produced it.
fn random_trace(
    seed: u64,
    battery: u64,
    case: usize,
) -> lagcv::Result<(DiscreteMatrixKernel, CoupledTrace<usize>, Stream)> {
    let mut r = rng(seed, battery, case);
    let n = r.random_range(2..=5);
    let kernel = DiscreteMatrixKernel::new(random_chain(n, &mut r)?)?;
    let lag = r.random_range(1..=3);
    let start = r.random_range(0..n);
    let config = LagConfig::new(lag, 100_000, lagcv::coupling::PointMass(start))?;
    let trace = run_lagged_coupling(&kernel, &config, &mut r)?;
    Ok((kernel, trace, r))
}

fn forward_backward(seed: u64, cases: usize) -> Check {
    let h = scalar(|&x: &usize| (x as f64).powi(2) - 1.5);
    let failures = (0..cases)
        .filter(|&case| {
            let outcome = (|| -> lagcv::Result<bool> {
                let (kernel, mut trace, mut r) = random_trace(seed, 0, case)?;
                let k = r.random_range(0..=6);
                let tau = trace.tau().expect("discrete chains meet");
                let need = required_x_index(tau, trace.lag(), k, k, -1);
                trace.extend_to(&kernel, &mut r, need)?;
                let ev = EvaluatedTrace::new(&trace, &h)?;
                let f = h_forward(&ev, k)?;
                let b = h_backward(&ev, k)?;
                Ok((f[0] - b[0]).abs() <= TOLERANCE * (1.0 + b[0].abs()))
            })();
            !matches!(outcome, Ok(true))
        })
        .count();
    Check::new("forward_backward_identity", failures, cases)
}

fn bound_forms(seed: u64, cases: usize) -> Check {
    let failures = (0..cases)
        .filter(|&case| {
            let jd = random_j_distribution(&mut rng(seed, 1, case));
            let a = new_bound_exact(&jd);
            let b = new_bound_median_form(&jd);
            let c = new_bound_tau_form(&jd.tau_survival());
            (a - b).abs() > TOLERANCE || (a - c).abs() > TOLERANCE
        })
        .count();
    Check::new("bound_forms_agree", failures, cases)
}

fn equality_predicate(seed: u64, cases: usize) -> Check {
    let failures = (0..cases)
        .filter(|&case| {
            let jd = random_j_distribution(&mut rng(seed, 2, case));
            let equal = (old_bound_exact(&jd) - new_bound_exact(&jd)).abs() <= TOLERANCE;
            let predicate = bounds_equal_predicate(&jd);
            // Inside the tolerance band either answer is acceptable.
            let margin = 2.0 * jd.prob(0) - (1.0 - jd.prob(1));
            let decided = margin.abs() > 1e-9;
            decided && (predicate != equal || zeta_criterion(&jd.tau_survival()) != predicate)
        })
        .count();
    Check::new("equality_predicate", failures, cases)
}

fn dominance(seed: u64, cases: usize) -> Check {
    let failures = (0..cases)
        .filter(|&case| {
            let jd = random_j_distribution(&mut rng(seed, 3, case));
            new_bound_exact(&jd) > old_bound_exact(&jd) + TOLERANCE
        })
        .count();
    Check::new("new_bound_dominance", failures, cases)
}

fn faithful_runs<K, D>(kernel: &K, initial: D, seed: u64, battery: u64, cases: usize) -> usize
where
    K: CoupledKernel,
    D: InitialDistribution<K::State> + Clone,
{
    (0..cases)
        .filter(|&case| {
            let mut r = rng(seed, battery, case);
            let lag = 1 + case % 3;
            let config = match LagConfig::new(lag, 100_000, initial.clone()) {
                Ok(c) => c.with_horizon(lag + 20),
                Err(_) => return true,
            };
            match run_lagged_coupling(kernel, &config, &mut r) {
                Ok(trace) => trace.tau().is_none() || !trace.is_faithful(),
                Err(_) => true,
            }
        })
        .count()
}

fn faithfulness(seed: u64, cases: usize) -> Vec<Check> {
    // Continuous kernels are slower; a tenth of the cases is plenty.
    let few = cases.div_ceil(10);
    let mut out = Vec::new();

    let discrete = (0..cases)
        .filter(|&case| match random_trace(seed, 4, case) {
            Ok((_, trace, _)) => !trace.is_faithful(),
            Err(_) => true,
        })
        .count();
    out.push(Check::new("faithful_discrete", discrete, cases));

    let start = GaussianStart {
        dim: 2,
        mean: 1.0,
        sd: 1.0,
    };
    let rwm = CoupledRwm::new(StdGaussian { dim: 2 }, 1.0).expect("valid scale");
    out.push(Check::new(
        "faithful_random_walk",
        faithful_runs(&rwm, start, seed, 5, few),
        few,
    ));

    let gibbs = CoupledGibbsGaussian::new(0.5).expect("valid correlation");
    out.push(Check::new(
        "faithful_gibbs",
        faithful_runs(&gibbs, start, seed, 6, few),
        few,
    ));

    let ising = CoupledIsingSsg::new(4, 0.2).expect("valid lattice");
    out.push(Check::new(
        "faithful_ising",
        faithful_runs(&ising, UniformSpins { sites: 16 }, seed, 7, few),
        few,
    ));
    out
}

/// Joint steps from equal states must give equal states.
fn diagonal(seed: u64, cases: usize) -> Check {
    let failures = (0..cases)
        .filter(|&case| {
            let mut r = rng(seed, 8, case);
            let n = r.random_range(2..=5);
            let Ok(m) = random_chain(n, &mut r) else { return true };
            let Ok(kernel) = DiscreteMatrixKernel::new(m) else {
                return true;
            };
            let x = r.random_range(0..n);
            match kernel.joint_step(&x, &x, &mut r) {
                Ok((a, b)) => a != b,
                Err(_) => true,
            }
        })
        .count();
    Check::new("diagonal_absorbing", failures, cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_battery_passes() {
        let checks = run(11, 200, &[]);
        for c in &checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn bad_matrix_fails_its_row() {
        let checks = run(11, 10, &[vec![vec![0.5, 0.4], vec![0.5, 0.5]]]);
        let row = checks.iter().find(|c| c.name == "row_sums[0]").unwrap();
        assert!(!row.passed);
        assert!(row.detail.contains("sums to"));
    }
}
