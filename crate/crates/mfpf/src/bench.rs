//! Load-flow timing: NR and DC per solve, the surrogate as one batched
//! inference amortized over the workload. Every method runs on the same
//! scenario list, single-threaded.

use std::hint::black_box;
use std::time::Instant;

use mfpf_core::mfnn::MfnnParams;
use mfpf_core::powerflow::{solve_dc, solve_nr, Injections, NrConfig, PfError};
use mfpf_core::scenario::{generate_scenario, Scenario, ScenarioConfig, ScenarioError};
use mfpf_core::{NetworkCase, TopologyVector};

/// Seconds per scenario, one entry per repetition.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MethodTiming {
    pub method: String,
    pub per_rep: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl MethodTiming {
    fn new(method: &str, per_rep: Vec<f64>) -> Self {
        let n = per_rep.len() as f64;
        let mean = per_rep.iter().sum::<f64>() / n;
        let var = per_rep.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        MethodTiming { method: method.into(), mean, median: mfpf_core::eval::median(&per_rep), stddev: var.sqrt(), per_rep }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TimingReport {
    pub case: String,
    pub n_scenarios: usize,
    pub reps: usize,
    /// Rows per surrogate inference call.
    pub batch_size: usize,
    pub methods: Vec<MethodTiming>,
    pub nr_not_converged: usize,
    pub hardware: String,
}

impl TimingReport {
    pub fn method(&self, name: &str) -> Option<&MethodTiming> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub fn hardware_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} {} ({cpus} logical cpus), timed single-threaded", std::env::consts::OS, std::env::consts::ARCH)
}

/// `n` valid scenarios with exactly `k` outages each.
pub fn contingency_workload(case: &NetworkCase, n: usize, k: usize, seed: u64) -> Result<Vec<Scenario>, ScenarioError> {
    let cfg = ScenarioConfig { k, rho: 1.0, n_low: n, seed, ..ScenarioConfig::default() };
    cfg.validate()?;
    (0..n).map(|i| generate_scenario(case, &cfg, i)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("benchmark needs at least one scenario and one repetition")]
    Empty,
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Model(#[from] mfpf_core::mfnn::MfnnError),
}

/// Times every method over `workload` for `reps` repetitions after one
/// unmeasured warm-up pass per method.
pub fn bench_loadflow(
    case: &NetworkCase,
    workload: &[Scenario],
    model: Option<&MfnnParams>,
    reps: usize,
    nr: &NrConfig,
) -> Result<TimingReport, BenchError> {
    if workload.is_empty() || reps == 0 {
        return Err(BenchError::Empty);
    }
    let inj: Vec<Injections> = workload.iter().map(|s| Injections::from_features(case, &s.x)).collect::<Result<_, _>>()?;
    let taus: Vec<&TopologyVector> = workload.iter().map(|s| &s.tau).collect();
    let xs: Vec<&[f64]> = workload.iter().map(|s| s.x.as_slice()).collect();
    let n = workload.len() as f64;

    let run_nr = || -> Result<usize, PfError> {
        let mut bad = 0;
        for (i, t) in inj.iter().zip(&taus) {
            bad += usize::from(!black_box(solve_nr(case, t, i, nr)?).converged);
        }
        Ok(bad)
    };
    let run_dc = || -> Result<(), PfError> {
        for (i, t) in inj.iter().zip(&taus) {
            black_box(solve_dc(case, t, i)?);
        }
        Ok(())
    };
    let run_nn = |m: &MfnnParams| -> Result<(), mfpf_core::mfnn::MfnnError> {
        black_box(m.predict(&xs, &taus)?);
        Ok(())
    };

    let nr_not_converged = run_nr()?;
    run_dc()?;
    if let Some(m) = model {
        run_nn(m)?;
    }
    let (mut t_nr, mut t_dc, mut t_nn) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..reps {
        let t = Instant::now();
        run_nr()?;
        t_nr.push(t.elapsed().as_secs_f64() / n);
        let t = Instant::now();
        run_dc()?;
        t_dc.push(t.elapsed().as_secs_f64() / n);
        if let Some(m) = model {
            let t = Instant::now();
            run_nn(m)?;
            t_nn.push(t.elapsed().as_secs_f64() / n);
        }
    }
    let mut methods = vec![MethodTiming::new("nr", t_nr), MethodTiming::new("dc", t_dc)];
    if model.is_some() {
        methods.push(MethodTiming::new("mfnn", t_nn));
    }
    Ok(TimingReport {
        case: case.name().to_string(),
        n_scenarios: workload.len(),
        reps,
        batch_size: workload.len(),
        methods,
        nr_not_converged,
        hardware: hardware_note(),
    })
}
