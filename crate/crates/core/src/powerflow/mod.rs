//! Low-fidelity (DC) and high-fidelity (Newton-Raphson) power flow plus the
//! per-line quantities both emit: active from-end flow `p_li`, from-end
//! current magnitude `i_li`, from-bus voltage magnitude `v_li` and loading
//! `theta_li` (current over rating).
//!
//! Contingencies can island part of the grid. Both solvers then solve the
//! component that holds the slack bus and report zero voltage, angle and
//! line quantities everywhere else.

mod dc;
mod newton;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;

use crate::grid::{apply_topology, build_ybus, slack_component_mask, BranchModel, BusKind};
use crate::grid::{CaseError, EffectiveNetwork, NetworkCase, TopologyVector};
use crate::linalg::LinalgError;

pub use dc::solve_dc;
pub use newton::solve_nr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Fidelity {
    Dc,
    Nr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PfError {
    Case(CaseError),
    InjectionShape { what: &'static str, expected: usize, found: usize },
    Config(&'static str),
    Singular { fidelity: Fidelity, pivot: usize },
}

impl fmt::Display for PfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PfError::Case(e) => write!(f, "{e}"),
            PfError::InjectionShape { what, expected, found } => {
                write!(f, "{what} has {found} entries, case needs {expected}")
            }
            PfError::Config(msg) => write!(f, "invalid solver configuration: {msg}"),
            PfError::Singular { fidelity: Fidelity::Dc, pivot } => {
                write!(f, "DC susceptance matrix is singular (pivot {pivot})")
            }
            PfError::Singular { fidelity: Fidelity::Nr, pivot } => {
                write!(f, "Newton-Raphson Jacobian is singular (pivot {pivot})")
            }
        }
    }
}

impl core::error::Error for PfError {}

impl From<CaseError> for PfError {
    fn from(e: CaseError) -> Self {
        PfError::Case(e)
    }
}

pub(crate) fn singular(fidelity: Fidelity, e: LinalgError) -> PfError {
    match e {
        LinalgError::Singular { pivot } => PfError::Singular { fidelity, pivot },
        LinalgError::Dimension { .. } => PfError::Config("internal dimension mismatch"),
    }
}

/// Per-unit operating point: one entry per generator and per load, in case
/// order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Injections {
    pub gen_p: Vec<f64>,
    pub gen_v: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
}

impl Injections {
    /// The case's own setpoints.
    pub fn from_case(case: &NetworkCase) -> Self {
        Injections {
            gen_p: case.generators().iter().map(|g| g.p_set).collect(),
            gen_v: case.generators().iter().map(|g| g.v_set).collect(),
            load_p: case.loads().iter().map(|l| l.p_set).collect(),
            load_q: case.loads().iter().map(|l| l.q_set).collect(),
        }
    }

    /// Scales every active and reactive injection; voltage setpoints stay.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Injections {
            gen_p: scale(&self.gen_p),
            gen_v: self.gen_v.clone(),
            load_p: scale(&self.load_p),
            load_q: scale(&self.load_q),
        }
    }

    /// Feature layout `(p_g, v_g, p_l, q_l)`.
    pub fn to_features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * (self.gen_p.len() + self.load_p.len()));
        x.extend_from_slice(&self.gen_p);
        x.extend_from_slice(&self.gen_v);
        x.extend_from_slice(&self.load_p);
        x.extend_from_slice(&self.load_q);
        x
    }

    pub fn from_features(case: &NetworkCase, x: &[f64]) -> Result<Self, PfError> {
        if x.len() != case.feature_len() {
            return Err(PfError::InjectionShape {
                what: "feature vector",
                expected: case.feature_len(),
                found: x.len(),
            });
        }
        let ng = case.generators().len();
        let nl = case.loads().len();
        Ok(Injections {
            gen_p: x[..ng].to_vec(),
            gen_v: x[ng..2 * ng].to_vec(),
            load_p: x[2 * ng..2 * ng + nl].to_vec(),
            load_q: x[2 * ng + nl..].to_vec(),
        })
    }

    pub(crate) fn check(&self, case: &NetworkCase) -> Result<(), PfError> {
        let ng = case.generators().len();
        let nl = case.loads().len();
        for (what, v, n) in [
            ("gen_p", &self.gen_p, ng),
            ("gen_v", &self.gen_v, ng),
            ("load_p", &self.load_p, nl),
            ("load_q", &self.load_q, nl),
        ] {
            if v.len() != n {
                return Err(PfError::InjectionShape { what, expected: n, found: v.len() });
            }
        }
        Ok(())
    }

    /// Scheduled complex power per bus: generation minus load. Generator
    /// reactive output is unknown and left at zero.
    pub fn bus_power(&self, case: &NetworkCase) -> Vec<Complex64> {
        let mut s = vec![Complex64::new(0.0, 0.0); case.n_buses()];
        for (g, &p) in case.generators().iter().zip(&self.gen_p) {
            s[g.bus].re += p;
        }
        for ((l, &p), &q) in case.loads().iter().zip(&self.load_p).zip(&self.load_q) {
            s[l.bus] -= Complex64::new(p, q);
        }
        s
    }

    /// Voltage magnitude to hold at each bus: the first generator's setpoint
    /// on slack and PV buses, 1.0 on PQ buses.
    pub fn voltage_targets(&self, case: &NetworkCase) -> Vec<f64> {
        let mut vm = vec![1.0; case.n_buses()];
        let mut set = vec![false; case.n_buses()];
        for (g, &v) in case.generators().iter().zip(&self.gen_v) {
            if !set[g.bus] && case.buses()[g.bus].kind != BusKind::Pq {
                vm[g.bus] = v;
                set[g.bus] = true;
            }
        }
        vm
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PfSolution {
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute power mismatch of the last iterate (0 for DC).
    pub max_mismatch: f64,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub p_li: Vec<f64>,
    pub i_li: Vec<f64>,
    pub v_li: Vec<f64>,
    pub theta_li: Vec<f64>,
    pub fidelity: Fidelity,
}

impl PfSolution {
    /// Target layout `(p_li, i_li, v_li, theta_li)`.
    pub fn targets(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(4 * self.p_li.len());
        y.extend_from_slice(&self.p_li);
        y.extend_from_slice(&self.i_li);
        y.extend_from_slice(&self.v_li);
        y.extend_from_slice(&self.theta_li);
        y
    }

    pub fn n_lines(&self) -> usize {
        self.p_li.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NrInit {
    Flat,
    DcWarmStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NrConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub init: NrInit,
}

impl Default for NrConfig {
    fn default() -> Self {
        NrConfig { tol: 1e-8, max_iter: 20, init: NrInit::Flat }
    }
}

impl NrConfig {
    pub fn validate(&self) -> Result<(), PfError> {
        if !(self.tol > 0.0) {
            return Err(PfError::Config("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(PfError::Config("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Fills the four per-line quantities from bus voltages. Lines that are out
/// of service or touch a bus outside `active` carry zero flow, current and
/// loading; `v_li` is always the from-bus magnitude.
pub(crate) fn ac_line_quantities(
    net: &EffectiveNetwork<'_>,
    vm: &[f64],
    va: &[f64],
    active: &[bool],
) -> [Vec<f64>; 4] {
    let n = net.case().n_lines();
    let (mut p, mut i, mut v, mut th) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for line in net.case().lines() {
        let (f, t) = (line.from_bus, line.to_bus);
        v[line.id] = vm[f];
        if !net.line_in_service(line.id) || !active[f] || !active[t] {
            continue;
        }
        let vf = Complex64::from_polar(vm[f], va[f]);
        let vt = Complex64::from_polar(vm[t], va[t]);
        let y = BranchModel::from_line(line).admittance();
        let i_f = y.ff * vf + y.ft * vt;
        let i_t = y.tf * vf + y.tt * vt;
        p[line.id] = (vf * i_f.conj()).re;
        i[line.id] = i_f.norm();
        th[line.id] = i_f.norm().max(i_t.norm()) / line.i_max;
    }
    [p, i, v, th]
}

/// Largest absolute deviation between the complex power implied by the
/// solution voltages and the scheduled injections, over non-slack buses of
/// the slack component (active power at PV and PQ buses, reactive power at
/// PQ buses).
pub fn verify_power_balance(
    case: &NetworkCase,
    tau: &TopologyVector,
    injections: &Injections,
    solution: &PfSolution,
) -> Result<f64, PfError> {
    injections.check(case)?;
    let net = apply_topology(case, tau)?;
    let ybus = build_ybus(&net);
    let active = slack_component_mask(&net);
    let v: Vec<Complex64> = solution
        .vm
        .iter()
        .zip(&solution.va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let sbus = injections.bus_power(case);
    Ok(max_mismatch(case, &ybus, &v, &sbus, &active))
}

pub(crate) fn max_mismatch(
    case: &NetworkCase,
    ybus: &crate::grid::Ybus,
    v: &[Complex64],
    sbus: &[Complex64],
    active: &[bool],
) -> f64 {
    let current = ybus.mul_vec(v);
    let mut worst = 0.0f64;
    for bus in case.buses() {
        if !active[bus.id] || bus.kind == BusKind::Slack {
            continue;
        }
        let mis = v[bus.id] * current[bus.id].conj() - sbus[bus.id];
        worst = worst.max(mis.re.abs());
        if bus.kind == BusKind::Pq {
            worst = worst.max(mis.im.abs());
        }
    }
    worst
}
