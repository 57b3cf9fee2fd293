//! Thread-pool drivers. Results match the serial functions in `mfpf-core`
//! exactly because every scenario and sweep cell has its own seed.

use mfpf_core::eval::{plan_sweep, run_cell, SweepParam, SweepTable};
use mfpf_core::mfnn::TrainConfig;
use mfpf_core::scenario::{assemble_dataset, generate_scenario, Dataset, ScenarioConfig, ScenarioError};
use mfpf_core::NetworkCase;
use rayon::prelude::*;

/// Runs `f` on a pool of `jobs` threads (`0` = one per core).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Same dataset as `mfpf_core::scenario::generate_dataset`, generated on
/// `jobs` threads. The first failing index (in index order) is reported.
pub fn generate_dataset_parallel(case: &NetworkCase, cfg: &ScenarioConfig, jobs: usize) -> Result<Dataset, ScenarioError> {
    cfg.validate()?;
    if cfg.k > case.n_lines() {
        return Err(ScenarioError::TooManyOutages { k: cfg.k, n_lines: case.n_lines() });
    }
    let results: Vec<_> = with_pool(jobs, || (0..cfg.n_low).into_par_iter().map(|i| generate_scenario(case, cfg, i)).collect());
    let scenarios = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    assemble_dataset(case, cfg, scenarios)
}

/// Sweep with cells spread over `jobs` threads. Each cell trains
/// single-threaded, so the table equals the serial one.
pub fn sweep_parallel(
    case: &NetworkCase,
    param: SweepParam,
    values: &[f64],
    scenario: &ScenarioConfig,
    train: &TrainConfig,
    reps: usize,
    jobs: usize,
) -> SweepTable {
    let (cells, warnings) = plan_sweep(param, values, scenario, train, reps);
    let results = with_pool(jobs, || cells.par_iter().map(|c| run_cell(case, param, c)).collect());
    SweepTable::from_results(param, &cells, results, warnings)
}
