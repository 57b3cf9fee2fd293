//! Error reports and sweep protocols.
//!
//! Errors are mean squared errors against the NR labels, per output group,
//! in per-unit (the dataset's physical units), averaged over lines and
//! scenarios. The DC baseline and the surrogate are always scored on the
//! same scenarios.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::grid::{NetworkCase, TopologyVector};
use crate::mfnn::{self, MfnnError, MfnnParams, TrainConfig};
use crate::powerflow::{solve_nr, Injections, NrConfig, PfError};
use crate::rng::derive_seed;
use crate::scenario::{generate_dataset, Dataset, ScenarioConfig, ScenarioError};

/// Output groups in target order.
pub const GROUPS: [&str; 4] = ["p_li", "i_li", "v_li", "theta_li"];

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptySplit,
    MissingLabel { scenario: usize },
    Shape { expected: usize, found: usize },
    Pf(PfError),
    Model(MfnnError),
    Scenario(ScenarioError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptySplit => write!(f, "evaluation split is empty"),
            EvalError::MissingLabel { scenario } => write!(f, "scenario {scenario} has no NR or DC label"),
            EvalError::Shape { expected, found } => write!(f, "prediction width {found}, expected {expected}"),
            EvalError::Pf(e) => write!(f, "{e}"),
            EvalError::Model(e) => write!(f, "{e}"),
            EvalError::Scenario(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<PfError> for EvalError {
    fn from(e: PfError) -> Self {
        EvalError::Pf(e)
    }
}

impl From<MfnnError> for EvalError {
    fn from(e: MfnnError) -> Self {
        EvalError::Model(e)
    }
}

impl From<ScenarioError> for EvalError {
    fn from(e: ScenarioError) -> Self {
        EvalError::Scenario(e)
    }
}

/// Anything that maps raw features and a topology to targets in physical
/// units.
pub trait Surrogate {
    fn predict_batch(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<Vec<Vec<f64>>, EvalError>;
}

impl Surrogate for MfnnParams {
    fn predict_batch(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(self.predict(xs, taus)?)
    }
}

/// Re-solves every scenario with Newton-Raphson. Scores zero against NR
/// labels produced with the same settings.
pub struct NrOracle<'a> {
    pub case: &'a NetworkCase,
    pub cfg: NrConfig,
}

impl Surrogate for NrOracle<'_> {
    fn predict_batch(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<Vec<Vec<f64>>, EvalError> {
        xs.iter()
            .zip(taus)
            .map(|(x, tau)| {
                let inj = Injections::from_features(self.case, x)?;
                Ok(solve_nr(self.case, tau, &inj, &self.cfg)?.targets())
            })
            .collect()
    }
}

/// Per-group MSE of `pred` against `truth`; both are full target vectors
/// `(p, i, v, theta)` of `n_lines` entries each.
pub fn group_mse<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], truth: &[T], n_lines: usize) -> Result<[f64; 4], EvalError> {
    if pred.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let mut acc = [0.0; 4];
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        for found in [p.len(), t.len()] {
            if found != 4 * n_lines {
                return Err(EvalError::Shape { expected: 4 * n_lines, found });
            }
        }
        for (g, a) in acc.iter_mut().enumerate() {
            let r = g * n_lines..(g + 1) * n_lines;
            *a += p[r.clone()].iter().zip(&t[r]).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
    }
    let n = (pred.len() * n_lines) as f64;
    Ok(acc.map(|a| a / n))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// DC against NR, in [`GROUPS`] order.
    pub dc: [f64; 4],
    /// Surrogate against NR.
    pub mfnn: [f64; 4],
    pub n_scenarios: usize,
    pub n_lines: usize,
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<(f64, f64)> {
        GROUPS.iter().position(|g| *g == name).map(|i| (self.dc[i], self.mfnn[i]))
    }
}

/// Scores `model` and the DC labels against the NR labels on `indices`.
pub fn evaluate(model: &dyn Surrogate, dataset: &Dataset, indices: &[usize]) -> Result<EvalReport, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let ds = dataset.denormalized();
    let n_lines = ds.scenarios[indices[0]].tau.len();
    let mut xs = Vec::with_capacity(indices.len());
    let mut taus = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    let mut dc = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &ds.scenarios[i];
        let (Some(h), Some(l)) = (s.y_high.as_deref(), s.y_low.as_deref()) else {
            return Err(EvalError::MissingLabel { scenario: i });
        };
        xs.push(s.x.as_slice());
        taus.push(&s.tau);
        truth.push(h);
        dc.push(l);
    }
    let pred = model.predict_batch(&xs, &taus)?;
    Ok(EvalReport {
        dc: group_mse(&dc, &truth, n_lines)?,
        mfnn: group_mse(&pred, &truth, n_lines)?,
        n_scenarios: indices.len(),
        n_lines,
    })
}

/// `(scenario, line, group, nr, dc, mfnn)`.
pub type ScatterRow = (usize, usize, &'static str, f64, f64, f64);

/// Scatter rows `(scenario, line, group, nr, dc, mfnn)` for every scenario
/// in `indices`.
pub fn scatter_rows(
    model: &dyn Surrogate,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<ScatterRow>, EvalError> {
    let ds = dataset.denormalized();
    let xs: Vec<&[f64]> = indices.iter().map(|&i| ds.scenarios[i].x.as_slice()).collect();
    let taus: Vec<&TopologyVector> = indices.iter().map(|&i| &ds.scenarios[i].tau).collect();
    let pred = model.predict_batch(&xs, &taus)?;
    let mut rows = Vec::new();
    for (k, &i) in indices.iter().enumerate() {
        let s = &ds.scenarios[i];
        let (Some(h), Some(l)) = (s.y_high.as_deref(), s.y_low.as_deref()) else {
            return Err(EvalError::MissingLabel { scenario: i });
        };
        let n = s.tau.len();
        for (g, name) in GROUPS.iter().enumerate() {
            for line in 0..n {
                let j = g * n + line;
                rows.push((i, line, *name, h[j], l[j], pred[k][j]));
            }
        }
    }
    Ok(rows)
}

/// Largest `|mfnn - nr| / |nr|` over the voltage group, skipping zero labels.
pub fn max_relative_voltage_deviation(rows: &[ScatterRow]) -> f64 {
    rows.iter()
        .filter(|r| r.2 == "v_li" && r.3 != 0.0)
        .map(|r| ((r.5 - r.3) / r.3).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepParam {
    Rho,
    Omega,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::Omega => "omega",
        }
    }
}

/// One train-and-evaluate job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    pub rep: usize,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

/// Expands `values x reps` into cells. Duplicate values are dropped with a
/// warning.
///
/// Repetition `r` draws its data with seed `derive_seed(scenario.seed, r)`
/// and trains with `derive_seed(train.seed, r)`, whatever the swept value.
/// An omega sweep therefore shares one scenario pool per repetition, and
/// because every cell relabels that pool through [`Dataset::with_omega`] the
/// high-fidelity subsets are nested across omegas.
pub fn plan_sweep(
    param: SweepParam,
    values: &[f64],
    scenario: &ScenarioConfig,
    train: &TrainConfig,
    reps: usize,
) -> (Vec<SweepCell>, Vec<String>) {
    let mut seen: Vec<f64> = Vec::new();
    let mut warnings = Vec::new();
    for &v in values {
        if seen.contains(&v) {
            warnings.push(format!("duplicate {} value {v} ignored", param.name()));
        } else {
            seen.push(v);
        }
    }
    let mut cells = Vec::new();
    for &value in &seen {
        for rep in 0..reps {
            let mut sc = scenario.clone();
            sc.seed = derive_seed(scenario.seed, rep as u64);
            match param {
                SweepParam::Rho => sc.rho = value,
                SweepParam::Omega => sc.omega = value,
            }
            let mut tc = train.clone();
            tc.seed = derive_seed(train.seed, rep as u64);
            cells.push(SweepCell { value, rep, scenario: sc, train: tc });
        }
    }
    (cells, warnings)
}

/// Generates the cell's dataset, trains, and scores the test split (the
/// validation split when there is no test split).
pub fn run_cell(case: &NetworkCase, param: SweepParam, cell: &SweepCell) -> Result<EvalReport, EvalError> {
    let ds = match param {
        SweepParam::Rho => generate_dataset(case, &cell.scenario)?,
        SweepParam::Omega => {
            let pool = ScenarioConfig { omega: 1.0, ..cell.scenario.clone() };
            generate_dataset(case, &pool)?.with_omega(cell.value)?
        }
    };
    let out = mfnn::train(&ds, &cell.train)?;
    let held = if ds.split.test.is_empty() { &ds.split.val } else { &ds.split.test };
    evaluate(&out.model, &ds, held)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub rep: usize,
    pub report: Result<EvalReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

impl SweepTable {
    /// Assembles a table from cells and their results, in cell order.
    pub fn from_results(param: SweepParam, cells: &[SweepCell], results: Vec<Result<EvalReport, EvalError>>, warnings: Vec<String>) -> Self {
        let rows = cells
            .iter()
            .zip(results)
            .map(|(c, r)| SweepRow { value: c.value, rep: c.rep, report: r.map_err(|e| e.to_string()) })
            .collect();
        SweepTable { param, rows, warnings }
    }

    /// Per swept value: `(value, median surrogate MSE, median DC MSE, failed
    /// cells)` for group `g` over the successful repetitions.
    pub fn medians(&self, g: usize) -> Vec<(f64, f64, f64, usize)> {
        let mut values: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !values.contains(&r.value) {
                values.push(r.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let ok: Vec<&EvalReport> = self.rows.iter().filter(|r| r.value == v).filter_map(|r| r.report.as_ref().ok()).collect();
                let failed = self.rows.iter().filter(|r| r.value == v && r.report.is_err()).count();
                let m: Vec<f64> = ok.iter().map(|r| r.mfnn[g]).collect();
                let d: Vec<f64> = ok.iter().map(|r| r.dc[g]).collect();
                (v, median(&m), median(&d), failed)
            })
            .collect()
    }
}

/// Median; NaN for an empty slice.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Serial sweep: every cell in order.
pub fn sweep(
    case: &NetworkCase,
    param: SweepParam,
    values: &[f64],
    scenario: &ScenarioConfig,
    train: &TrainConfig,
    reps: usize,
) -> SweepTable {
    let (cells, warnings) = plan_sweep(param, values, scenario, train, reps);
    let results = cells.iter().map(|c| run_cell(case, param, c)).collect();
    SweepTable::from_results(param, &cells, results, warnings)
}

pub fn sweep_rho(case: &NetworkCase, rhos: &[f64], scenario: &ScenarioConfig, train: &TrainConfig, reps: usize) -> SweepTable {
    sweep(case, SweepParam::Rho, rhos, scenario, train, reps)
}

pub fn sweep_omega(case: &NetworkCase, omegas: &[f64], scenario: &ScenarioConfig, train: &TrainConfig, reps: usize) -> SweepTable {
    sweep(case, SweepParam::Omega, omegas, scenario, train, reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::testing::five_bus;
    use alloc::vec;
    use rand::Rng as _;

    fn small_dataset() -> Dataset {
        let cfg = ScenarioConfig { n_low: 60, rho: 1.0, k: 1, omega: 1.0, seed: 3, ..ScenarioConfig::default() };
        generate_dataset(&five_bus(), &cfg).unwrap()
    }

    #[test]
    fn nr_oracle_scores_zero() {
        let case = five_bus();
        let ds = small_dataset();
        let oracle = NrOracle { case: &case, cfg: ds.config.nr };
        let r = evaluate(&oracle, &ds, &ds.split.test).unwrap();
        assert_eq!(r.mfnn, [0.0; 4]);
        assert!(r.dc[0] > 0.0);
        assert_eq!(r.n_scenarios, ds.split.test.len());
    }

    #[test]
    fn group_mse_matches_brute_force() {
        let mut rng = crate::rng::stream(9, 0);
        let n = 3;
        let pred: Vec<Vec<f64>> = (0..5).map(|_| (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let truth: Vec<Vec<f64>> = (0..5).map(|_| (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = group_mse(&pred, &truth, n).unwrap();
        for g in 0..4 {
            let mut s = 0.0;
            let mut c = 0;
            for k in 0..5 {
                for l in 0..n {
                    let d = pred[k][g * n + l] - truth[k][g * n + l];
                    s += d * d;
                    c += 1;
                }
            }
            assert!((got[g] - s / c as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn scatter_shape_and_labels() {
        let case = five_bus();
        let ds = small_dataset();
        let oracle = NrOracle { case: &case, cfg: ds.config.nr };
        let rows = scatter_rows(&oracle, &ds, &ds.split.test).unwrap();
        assert_eq!(rows.len(), ds.split.test.len() * case.n_lines() * 4);
        for r in &rows {
            let s = &ds.scenarios[r.0];
            let g = GROUPS.iter().position(|n| *n == r.2).unwrap();
            assert_eq!(r.3, s.y_high.as_ref().unwrap()[g * case.n_lines() + r.1]);
        }
        assert_eq!(max_relative_voltage_deviation(&rows), 0.0);
    }

    #[test]
    fn plan_dedups_and_seeds() {
        let (cells, warn) = plan_sweep(SweepParam::Omega, &[0.1, 0.5, 0.1], &ScenarioConfig::default(), &TrainConfig::default(), 2);
        assert_eq!(cells.len(), 4);
        assert_eq!(warn.len(), 1);
        assert_eq!(cells[0].scenario.seed, cells[2].scenario.seed);
        assert_ne!(cells[0].scenario.seed, cells[1].scenario.seed);
    }

    #[test]
    fn medians_skip_failed_cells() {
        let ok = |m: f64| Ok(EvalReport { dc: [1.0; 4], mfnn: [m; 4], n_scenarios: 1, n_lines: 1 });
        let (cells, _) = plan_sweep(SweepParam::Rho, &[0.5], &ScenarioConfig::default(), &TrainConfig::default(), 3);
        let t = SweepTable::from_results(SweepParam::Rho, &cells, vec![ok(3.0), Err(EvalError::EmptySplit), ok(1.0)], vec![]);
        assert_eq!(t.medians(0), vec![(0.5, 2.0, 1.0, 1)]);
    }
}
