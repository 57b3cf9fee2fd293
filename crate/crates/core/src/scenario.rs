//! Contingency scenario sampling and fidelity-tagged datasets.
//!
//! Each scenario is drawn from its own random stream keyed by `(seed, index)`
//! so any subset of indices can be generated in any order, or in parallel,
//! and still reproduce the same dataset.
//!
//! Every scenario is solved with both the DC approximation and
//! Newton-Raphson. The NR solve decides validity (divergent or islanded
//! samples are redrawn), and solving it everywhere keeps the scenario pool
//! independent of `omega`. `omega` only decides which training scenarios
//! keep their high-fidelity label. Validation and test scenarios always keep
//! it because they are scored against NR.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{apply_topology, slack_component_mask, NetworkCase, TopologyVector};
use crate::powerflow::{solve_dc, solve_nr, Injections, NrConfig, PfError};
use crate::rng::{self, Rng};

const SPLIT_STREAM: u64 = u64::MAX - 1;
const HIGH_ORDER_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioConfig {
    /// Simultaneous line outages in a contingency sample.
    pub k: usize,
    /// Probability that a sample is a contingency sample.
    pub rho: f64,
    pub sigma_pg: f64,
    pub sigma_vg: f64,
    pub sigma_pl: f64,
    pub sigma_ql: f64,
    /// Total number of scenarios (all carry a DC label).
    pub n_low: usize,
    /// Share of training scenarios that keep their NR label.
    pub omega: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Put whole topology patterns in the test split so none of them is seen
    /// during training.
    pub out_of_sample_test: bool,
    pub max_retries: u32,
    pub nr: NrConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            k: 1,
            rho: 0.8,
            sigma_pg: 0.05,
            sigma_vg: 0.01,
            sigma_pl: 0.05,
            sigma_ql: 0.05,
            n_low: 2000,
            omega: 0.5,
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            out_of_sample_test: false,
            max_retries: 100,
            nr: NrConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.rho) {
            return Err(ScenarioError::Config("rho must lie in [0, 1]"));
        }
        if !unit(self.omega) {
            return Err(ScenarioError::Config("omega must lie in [0, 1]"));
        }
        if [self.sigma_pg, self.sigma_vg, self.sigma_pl, self.sigma_ql].iter().any(|s| !(*s >= 0.0)) {
            return Err(ScenarioError::Config("sigmas must be non-negative"));
        }
        if !unit(self.val_fraction) || !unit(self.test_fraction) || self.val_fraction + self.test_fraction > 1.0 {
            return Err(ScenarioError::Config("split fractions must lie in [0, 1] and sum to at most 1"));
        }
        if self.max_retries == 0 {
            return Err(ScenarioError::Config("max_retries must be at least 1"));
        }
        self.nr.validate().map_err(ScenarioError::Pf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    Config(&'static str),
    TooManyOutages { k: usize, n_lines: usize },
    RetriesExhausted { index: usize, attempts: u32, islanded: u32, diverged: u32 },
    Pf(PfError),
    OmegaExceedsLabels { requested: usize, available: usize },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Config(m) => write!(f, "invalid scenario configuration: {m}"),
            ScenarioError::TooManyOutages { k, n_lines } => {
                write!(f, "k = {k} outages requested but the case has {n_lines} lines")
            }
            ScenarioError::RetriesExhausted { index, attempts, islanded, diverged } => write!(
                f,
                "scenario {index}: no valid sample after {attempts} attempts \
                 ({islanded} islanded the grid, {diverged} did not converge)"
            ),
            ScenarioError::Pf(e) => write!(f, "{e}"),
            ScenarioError::OmegaExceedsLabels { requested, available } => write!(
                f,
                "{requested} high-fidelity training labels requested, only {available} available"
            ),
        }
    }
}

impl core::error::Error for ScenarioError {}

impl From<PfError> for ScenarioError {
    fn from(e: PfError) -> Self {
        ScenarioError::Pf(e)
    }
}

/// `k` distinct lines out with probability `rho`, otherwise all in service.
pub fn sample_topology(n_lines: usize, k: usize, rho: f64, rng: &mut Rng) -> Result<TopologyVector, ScenarioError> {
    if k > n_lines {
        return Err(ScenarioError::TooManyOutages { k, n_lines });
    }
    let hit = rng.random::<f64>() < rho;
    if !hit || k == 0 {
        return Ok(TopologyVector::all_in_service(n_lines));
    }
    let out = rand::seq::index::sample(rng, n_lines, k).into_vec();
    Ok(TopologyVector::with_outages(n_lines, &out))
}

/// Setpoints perturbed by independent relative normal noise. Generator
/// voltages are clamped to [0.9, 1.1] pu.
pub fn sample_injections(case: &NetworkCase, cfg: &ScenarioConfig, rng: &mut Rng) -> Injections {
    let base = Injections::from_case(case);
    let mut perturb = |v: &[f64], sigma: f64| -> Vec<f64> {
        v.iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(rng);
                s * (1.0 + sigma * z)
            })
            .collect()
    };
    let gen_p = perturb(&base.gen_p, cfg.sigma_pg);
    let gen_v = perturb(&base.gen_v, cfg.sigma_vg).into_iter().map(|v| v.clamp(0.9, 1.1)).collect();
    let load_p = perturb(&base.load_p, cfg.sigma_pl);
    let load_q = perturb(&base.load_q, cfg.sigma_ql);
    Injections { gen_p, gen_v, load_p, load_q }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    /// `(p_g, v_g, p_l, q_l)`.
    pub x: Vec<f64>,
    pub tau: TopologyVector,
    /// DC targets `(p_li, i_li, v_li, theta_li)`.
    pub y_low: Option<Vec<f64>>,
    /// Newton-Raphson targets, same layout.
    pub y_high: Option<Vec<f64>>,
    pub valid: bool,
    /// Draws it took to find a valid sample (1 = first try).
    pub attempts: u32,
}

/// Draws scenario `index`, redrawing islanded or non-convergent samples up
/// to `cfg.max_retries` times. The result carries both labels.
pub fn generate_scenario(case: &NetworkCase, cfg: &ScenarioConfig, index: usize) -> Result<Scenario, ScenarioError> {
    let mut rng = rng::stream(cfg.seed, index as u64);
    let (mut islanded, mut diverged) = (0, 0);
    for attempt in 1..=cfg.max_retries {
        let tau = sample_topology(case.n_lines(), cfg.k, cfg.rho, &mut rng)?;
        let inj = sample_injections(case, cfg, &mut rng);
        let net = apply_topology(case, &tau).map_err(PfError::from)?;
        if slack_component_mask(&net).iter().any(|&a| !a) {
            islanded += 1;
            continue;
        }
        let nr = solve_nr(case, &tau, &inj, &cfg.nr)?;
        if !nr.converged {
            diverged += 1;
            continue;
        }
        let dc = solve_dc(case, &tau, &inj)?;
        return Ok(Scenario {
            x: inj.to_features(),
            tau,
            y_low: Some(dc.targets()),
            y_high: Some(nr.targets()),
            valid: true,
            attempts: attempt,
        });
    }
    Err(ScenarioError::RetriesExhausted { index, attempts: cfg.max_retries, islanded, diverged })
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CaseRef {
    pub name: String,
    pub line_hash: String,
}

impl CaseRef {
    pub fn of(case: &NetworkCase) -> Self {
        CaseRef { name: case.name().into(), line_hash: case.line_order_hash() }
    }

    pub fn matches(&self, case: &NetworkCase) -> bool {
        self.line_hash == case.line_order_hash()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Z-score statistics. Features cover `x` only; `tau` stays binary. Both
/// fidelities share the target statistics so the low-fidelity prediction and
/// the high-fidelity target live on the same scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

/// Mean and std per column. A constant column gets its value as the mean and
/// std 1 so it normalizes to exactly zero.
pub fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    let mut n = 0usize;
    for row in rows.clone() {
        n += 1;
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    if n == 0 {
        return (vec![0.0; width], vec![1.0; width]);
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; width];
    for row in rows {
        for (j, &v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    let mut std = vec![1.0; width];
    for j in 0..width {
        if lo[j] == hi[j] {
            mean[j] = lo[j];
            continue;
        }
        let s = Float::sqrt(var[j] / n as f64);
        if s > 0.0 {
            std[j] = s;
        }
    }
    (mean, std)
}

impl NormStats {
    pub fn identity(x_len: usize, y_len: usize) -> Self {
        NormStats { x_mean: vec![0.0; x_len], x_std: vec![1.0; x_len], y_mean: vec![0.0; y_len], y_std: vec![1.0; y_len] }
    }

    /// Fits on the given training scenarios: features over all of them,
    /// targets over their NR labels (DC labels when none carry one).
    pub fn fit(scenarios: &[Scenario], train: &[usize], x_len: usize, y_len: usize) -> Self {
        let xs = train.iter().map(|&i| scenarios[i].x.as_slice());
        let (x_mean, x_std) = column_stats(xs, x_len);
        let has_high = train.iter().any(|&i| scenarios[i].y_high.is_some());
        let ys = train.iter().filter_map(|&i| {
            let s = &scenarios[i];
            if has_high { s.y_high.as_deref() } else { s.y_low.as_deref() }
        });
        let (y_mean, y_std) = column_stats(ys, y_len);
        NormStats { x_mean, x_std, y_mean, y_std }
    }

    pub fn normalize_x(&self, x: &[f64]) -> Vec<f64> {
        zscore(x, &self.x_mean, &self.x_std)
    }

    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        zscore(y, &self.y_mean, &self.y_std)
    }

    pub fn denormalize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn denormalize_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.y_mean).zip(&self.y_std).map(|((v, m), s)| v * s + m).collect()
    }
}

fn zscore(v: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    v.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub case_ref: CaseRef,
    pub config: ScenarioConfig,
    pub scenarios: Vec<Scenario>,
    pub split: Split,
    /// Fixed permutation of the training indices. The first
    /// `ceil(omega * n_train)` keep their NR label, so the labeled subsets of
    /// two omegas over the same pool are nested.
    pub high_order: Vec<usize>,
    pub norm: NormStats,
    /// Whether `scenarios` hold z-scored values.
    pub normalized: bool,
}

/// Serial generation. Equivalent to generating every index with
/// [`generate_scenario`] and passing the results to [`assemble_dataset`].
pub fn generate_dataset(case: &NetworkCase, cfg: &ScenarioConfig) -> Result<Dataset, ScenarioError> {
    cfg.validate()?;
    if cfg.k > case.n_lines() {
        return Err(ScenarioError::TooManyOutages { k: cfg.k, n_lines: case.n_lines() });
    }
    let scenarios = (0..cfg.n_low).map(|i| generate_scenario(case, cfg, i)).collect::<Result<Vec<_>, _>>()?;
    assemble_dataset(case, cfg, scenarios)
}

/// Assigns splits, applies `omega` and fits normalization. `scenarios` must
/// be indices `0..n` in order, each carrying both labels.
pub fn assemble_dataset(
    case: &NetworkCase,
    cfg: &ScenarioConfig,
    scenarios: Vec<Scenario>,
) -> Result<Dataset, ScenarioError> {
    cfg.validate()?;
    let split = assign_split(&scenarios, cfg);
    let mut order = split.train.clone();
    order.shuffle(&mut rng::stream(cfg.seed, HIGH_ORDER_STREAM));
    let mut ds = Dataset {
        case_ref: CaseRef::of(case),
        config: cfg.clone(),
        norm: NormStats::identity(case.feature_len(), case.target_len()),
        scenarios,
        split,
        high_order: order,
        normalized: false,
    };
    ds = ds.with_omega(cfg.omega)?;
    Ok(ds)
}

fn assign_split(scenarios: &[Scenario], cfg: &ScenarioConfig) -> Split {
    let n = scenarios.len();
    let n_test = round_count(cfg.test_fraction, n);
    let n_val = round_count(cfg.val_fraction, n).min(n - n_test);
    let mut rng = rng::stream(cfg.seed, SPLIT_STREAM);
    let mut test = Vec::new();
    let mut rest: Vec<usize>;
    if cfg.out_of_sample_test {
        let mut groups: BTreeMap<&[u8], Vec<usize>> = BTreeMap::new();
        for (i, s) in scenarios.iter().enumerate() {
            if s.tau.n_outages() > 0 {
                groups.entry(s.tau.as_slice()).or_default().push(i);
            }
        }
        let mut patterns: Vec<&[u8]> = groups.keys().copied().collect();
        patterns.shuffle(&mut rng);
        let mut held = BTreeMap::new();
        for p in patterns {
            if test.len() >= n_test {
                break;
            }
            test.extend_from_slice(&groups[p]);
            held.insert(p, ());
        }
        rest = (0..n).filter(|&i| !held.contains_key(scenarios[i].tau.as_slice())).collect();
    } else {
        rest = (0..n).collect();
        rest.shuffle(&mut rng);
        test = rest.split_off(n - n_test);
    }
    if cfg.out_of_sample_test {
        rest.shuffle(&mut rng);
    }
    let n_val = n_val.min(rest.len());
    let mut val = rest.split_off(rest.len() - n_val);
    let mut train = rest;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Split { train, val, test }
}

fn round_count(fraction: f64, n: usize) -> usize {
    let c = Float::round(fraction * n as f64) as usize;
    c.min(n)
}

/// `ceil(omega * n)`, guarded against `0.3 * 1000 = 300.00000000000006`.
pub fn high_count(omega: f64, n: usize) -> usize {
    let raw = omega * n as f64;
    let r = Float::round(raw);
    let c = if (raw - r).abs() < 1e-9 { r } else { Float::ceil(raw) };
    (c as usize).min(n)
}

impl Dataset {
    pub fn n_high_train(&self) -> usize {
        self.split.train.iter().filter(|&&i| self.scenarios[i].y_high.is_some()).count()
    }

    /// Training indices that carry an NR label, in `high_order` order.
    pub fn high_train(&self) -> Vec<usize> {
        self.high_order.iter().copied().filter(|&i| self.scenarios[i].y_high.is_some()).collect()
    }

    /// Same pool with only the first `ceil(omega * n_train)` training
    /// scenarios of `high_order` keeping their NR label. Fails when that
    /// needs labels this dataset has already dropped.
    pub fn with_omega(&self, omega: f64) -> Result<Dataset, ScenarioError> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(ScenarioError::Config("omega must lie in [0, 1]"));
        }
        if self.normalized {
            return Err(ScenarioError::Config("relabel before normalizing"));
        }
        let want = high_count(omega, self.high_order.len());
        let available = self.high_order.iter().take_while(|&&i| self.scenarios[i].y_high.is_some()).count();
        if want > available {
            return Err(ScenarioError::OmegaExceedsLabels { requested: want, available });
        }
        let mut ds = self.clone();
        for &i in &self.high_order[want..] {
            ds.scenarios[i].y_high = None;
        }
        ds.config.omega = omega;
        let (xl, yl) = (self.norm.x_mean.len(), self.norm.y_mean.len());
        ds.norm = NormStats::fit(&ds.scenarios, &ds.split.train, xl, yl);
        Ok(ds)
    }

    /// Copy with features and both target sets z-scored by `self.norm`.
    pub fn normalized(&self) -> Dataset {
        if self.normalized {
            return self.clone();
        }
        let mut ds = self.clone();
        for s in &mut ds.scenarios {
            s.x = self.norm.normalize_x(&s.x);
            s.y_low = s.y_low.as_deref().map(|y| self.norm.normalize_y(y));
            s.y_high = s.y_high.as_deref().map(|y| self.norm.normalize_y(y));
        }
        ds.normalized = true;
        ds
    }

    /// Inverse of [`Dataset::normalized`].
    pub fn denormalized(&self) -> Dataset {
        if !self.normalized {
            return self.clone();
        }
        let mut ds = self.clone();
        for s in &mut ds.scenarios {
            s.x = self.norm.denormalize_x(&s.x);
            s.y_low = s.y_low.as_deref().map(|y| self.norm.denormalize_y(y));
            s.y_high = s.y_high.as_deref().map(|y| self.norm.denormalize_y(y));
        }
        ds.normalized = false;
        ds
    }
}
