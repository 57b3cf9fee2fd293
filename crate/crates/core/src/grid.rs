//! Grid data model: buses, lines, transformers, machines and loads, the
//! per-line topology vector, connectivity and the bus admittance matrix.
//!
//! All electrical quantities are per-unit on the case's `base_mva`. Lines are
//! the switchable branches indexed by the topology vector; transformers are
//! fixed branches that are always in service.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    pub vm_init: f64,
    /// Radians.
    pub va_init: f64,
    /// Shunt conductance at 1 pu voltage.
    pub gs: f64,
    /// Shunt susceptance at 1 pu voltage.
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Position of this line in the topology vector.
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split evenly between both ends.
    pub b: f64,
    /// Current rating in per-unit.
    pub i_max: f64,
}

/// A fixed two-winding transformer with an off-nominal ratio on the from side.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub g: f64,
    pub b: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_set: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub p_set: f64,
    pub q_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseError {
    EmptyCase,
    BusIdOrder { position: usize, id: usize },
    LineIdOrder { position: usize, id: usize },
    TransformerIdOrder { position: usize, id: usize },
    NoSlack,
    DuplicateSlack { first: usize, second: usize },
    DanglingBus { element: &'static str, index: usize, bus: usize },
    SelfLoop { element: &'static str, index: usize },
    ZeroReactance { element: &'static str, index: usize },
    NonPositiveRating { line: usize },
    NonPositiveTap { transformer: usize },
    NonPositiveVoltage { bus: usize },
    NonPositiveBase,
    NonFinite { element: &'static str, index: usize },
    GeneratorOnPqBus { generator: usize, bus: usize },
    MissingGenerator { bus: usize },
    Disconnected { components: usize },
    TopologyLength { expected: usize, found: usize },
    TopologyEntry { index: usize, value: u8 },
}

impl fmt::Display for CaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseError::EmptyCase => write!(f, "case has no buses"),
            CaseError::BusIdOrder { position, id } => {
                write!(f, "bus at position {position} has id {id}; ids must be 0..n contiguous")
            }
            CaseError::LineIdOrder { position, id } => {
                write!(f, "line at position {position} has id {id}; ids must be 0..n contiguous")
            }
            CaseError::TransformerIdOrder { position, id } => write!(
                f,
                "transformer at position {position} has id {id}; ids must be 0..n contiguous"
            ),
            CaseError::NoSlack => write!(f, "case has no slack bus"),
            CaseError::DuplicateSlack { first, second } => {
                write!(f, "duplicate slack buses {first} and {second}")
            }
            CaseError::DanglingBus { element, index, bus } => {
                write!(f, "{element} {index} references unknown bus {bus}")
            }
            CaseError::SelfLoop { element, index } => {
                write!(f, "{element} {index} connects a bus to itself")
            }
            CaseError::ZeroReactance { element, index } => {
                write!(f, "{element} {index} has zero reactance")
            }
            CaseError::NonPositiveRating { line } => {
                write!(f, "line {line} has a non-positive current rating")
            }
            CaseError::NonPositiveTap { transformer } => {
                write!(f, "transformer {transformer} has a non-positive tap ratio")
            }
            CaseError::NonPositiveVoltage { bus } => {
                write!(f, "bus {bus} has a non-positive voltage")
            }
            CaseError::NonPositiveBase => write!(f, "base_mva must be positive"),
            CaseError::NonFinite { element, index } => {
                write!(f, "{element} {index} has a non-finite value")
            }
            CaseError::GeneratorOnPqBus { generator, bus } => {
                write!(f, "generator {generator} sits on PQ bus {bus}")
            }
            CaseError::MissingGenerator { bus } => {
                write!(f, "voltage-controlled bus {bus} has no generator")
            }
            CaseError::Disconnected { components } => write!(
                f,
                "reference topology splits the grid into {components} components"
            ),
            CaseError::TopologyLength { expected, found } => {
                write!(f, "topology vector has length {found}, case has {expected} lines")
            }
            CaseError::TopologyEntry { index, value } => {
                write!(f, "topology entry {index} is {value}; entries must be 0 or 1")
            }
        }
    }
}

impl core::error::Error for CaseError {}

/// Static grid description. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    transformers: Vec<Transformer>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    slack: usize,
}

impl NetworkCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        transformers: Vec<Transformer>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self, CaseError> {
        let mut case = NetworkCase {
            name: name.into(),
            base_mva,
            buses,
            lines,
            transformers,
            generators,
            loads,
            slack: 0,
        };
        case.slack = case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<usize, CaseError> {
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(CaseError::NonPositiveBase);
        }
        if self.buses.is_empty() {
            return Err(CaseError::EmptyCase);
        }
        let n = self.buses.len();
        let mut slack = None;
        for (pos, bus) in self.buses.iter().enumerate() {
            if bus.id != pos {
                return Err(CaseError::BusIdOrder { position: pos, id: bus.id });
            }
            if ![bus.base_kv, bus.vm_init, bus.va_init, bus.gs, bus.bs]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(CaseError::NonFinite { element: "bus", index: pos });
            }
            if bus.vm_init <= 0.0 {
                return Err(CaseError::NonPositiveVoltage { bus: pos });
            }
            if bus.kind == BusKind::Slack {
                if let Some(first) = slack {
                    return Err(CaseError::DuplicateSlack { first, second: pos });
                }
                slack = Some(pos);
            }
        }
        let slack = slack.ok_or(CaseError::NoSlack)?;

        let check_bus = |element, index, bus: usize| {
            if bus < n {
                Ok(())
            } else {
                Err(CaseError::DanglingBus { element, index, bus })
            }
        };
        for (pos, line) in self.lines.iter().enumerate() {
            if line.id != pos {
                return Err(CaseError::LineIdOrder { position: pos, id: line.id });
            }
            check_bus("line", pos, line.from_bus)?;
            check_bus("line", pos, line.to_bus)?;
            if line.from_bus == line.to_bus {
                return Err(CaseError::SelfLoop { element: "line", index: pos });
            }
            if ![line.r, line.x, line.b, line.i_max].iter().all(|v| v.is_finite()) {
                return Err(CaseError::NonFinite { element: "line", index: pos });
            }
            if line.x == 0.0 {
                return Err(CaseError::ZeroReactance { element: "line", index: pos });
            }
            if line.i_max <= 0.0 {
                return Err(CaseError::NonPositiveRating { line: pos });
            }
        }
        for (pos, tr) in self.transformers.iter().enumerate() {
            if tr.id != pos {
                return Err(CaseError::TransformerIdOrder { position: pos, id: tr.id });
            }
            check_bus("transformer", pos, tr.from_bus)?;
            check_bus("transformer", pos, tr.to_bus)?;
            if tr.from_bus == tr.to_bus {
                return Err(CaseError::SelfLoop { element: "transformer", index: pos });
            }
            if ![tr.r, tr.x, tr.g, tr.b, tr.tap].iter().all(|v| v.is_finite()) {
                return Err(CaseError::NonFinite { element: "transformer", index: pos });
            }
            if tr.x == 0.0 {
                return Err(CaseError::ZeroReactance { element: "transformer", index: pos });
            }
            if tr.tap <= 0.0 {
                return Err(CaseError::NonPositiveTap { transformer: pos });
            }
        }
        let mut has_gen = vec![false; n];
        for (pos, gen) in self.generators.iter().enumerate() {
            check_bus("generator", pos, gen.bus)?;
            if !(gen.p_set.is_finite() && gen.v_set.is_finite()) {
                return Err(CaseError::NonFinite { element: "generator", index: pos });
            }
            if gen.v_set <= 0.0 {
                return Err(CaseError::NonPositiveVoltage { bus: gen.bus });
            }
            if self.buses[gen.bus].kind == BusKind::Pq {
                return Err(CaseError::GeneratorOnPqBus { generator: pos, bus: gen.bus });
            }
            has_gen[gen.bus] = true;
        }
        for bus in &self.buses {
            if bus.kind != BusKind::Pq && !has_gen[bus.id] {
                return Err(CaseError::MissingGenerator { bus: bus.id });
            }
        }
        for (pos, load) in self.loads.iter().enumerate() {
            check_bus("load", pos, load.bus)?;
            if !(load.p_set.is_finite() && load.q_set.is_finite()) {
                return Err(CaseError::NonFinite { element: "load", index: pos });
            }
        }

        let tau = TopologyVector::all_in_service(self.lines.len());
        let components = connected_components(&EffectiveNetwork { case: self, tau: &tau });
        if components.len() != 1 {
            return Err(CaseError::Disconnected { components: components.len() });
        }
        Ok(slack)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn transformers(&self) -> &[Transformer] {
        &self.transformers
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    /// Generators other than the machine(s) on the slack bus.
    pub fn dispatchable_generators(&self) -> usize {
        self.generators.iter().filter(|g| g.bus != self.slack).count()
    }

    /// Width of the feature vector `(p_g, v_g, p_l, q_l)`.
    pub fn feature_len(&self) -> usize {
        2 * self.generators.len() + 2 * self.loads.len()
    }

    /// Width of the target vector `(p_li, i_li, v_li, theta_li)`.
    pub fn target_len(&self) -> usize {
        4 * self.lines.len()
    }

    /// Short hex digest of the case name and the line ordering that indexes
    /// the topology vector. Datasets and models record it so that they are
    /// never paired with a differently ordered case.
    pub fn line_order_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.name.as_bytes());
        hasher.update((self.buses.len() as u64).to_le_bytes());
        for line in &self.lines {
            hasher.update((line.from_bus as u64).to_le_bytes());
            hasher.update((line.to_bus as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in &digest[..8] {
            use core::fmt::Write;
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Per-line in-service status: 1 in service, 0 out of service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopologyVector {
    status: Vec<u8>,
}

impl TopologyVector {
    pub fn new(status: Vec<u8>) -> Result<Self, CaseError> {
        if let Some((index, &value)) = status.iter().enumerate().find(|(_, &s)| s > 1) {
            return Err(CaseError::TopologyEntry { index, value });
        }
        Ok(TopologyVector { status })
    }

    /// The reference topology: every line in service.
    pub fn all_in_service(n_lines: usize) -> Self {
        TopologyVector { status: vec![1; n_lines] }
    }

    /// Reference topology with the given lines taken out. Out-of-range
    /// indices are ignored.
    pub fn with_outages(n_lines: usize, outages: &[usize]) -> Self {
        let mut tau = Self::all_in_service(n_lines);
        for &i in outages {
            if i < n_lines {
                tau.status[i] = 0;
            }
        }
        tau
    }

    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }

    pub fn is_in_service(&self, line: usize) -> bool {
        self.status[line] == 1
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.status
    }

    pub fn outages(&self) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_outages(&self) -> usize {
        self.status.iter().filter(|&&s| s == 0).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.status.iter().map(|&s| f64::from(s)).collect()
    }
}

/// Series/shunt parameters of one in-service branch in the standard
/// pi model with an off-nominal ratio on the from side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchModel {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub g: f64,
    pub b: f64,
    pub tap: f64,
}

/// The four terminal admittances `(yff, yft, ytf, ytt)` of a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub ff: Complex64,
    pub ft: Complex64,
    pub tf: Complex64,
    pub tt: Complex64,
}

impl BranchModel {
    pub fn from_line(line: &Line) -> Self {
        BranchModel {
            from: line.from_bus,
            to: line.to_bus,
            r: line.r,
            x: line.x,
            g: 0.0,
            b: line.b,
            tap: 1.0,
        }
    }

    pub fn from_transformer(tr: &Transformer) -> Self {
        BranchModel {
            from: tr.from_bus,
            to: tr.to_bus,
            r: tr.r,
            x: tr.x,
            g: tr.g,
            b: tr.b,
            tap: tr.tap,
        }
    }

    pub fn admittance(&self) -> BranchAdmittance {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x);
        let half_shunt = Complex64::new(self.g, self.b) * 0.5;
        let tt = ys + half_shunt;
        let ff = tt / (self.tap * self.tap);
        let ft = -ys / self.tap;
        BranchAdmittance { ff, ft, tf: ft, tt }
    }
}

/// A case seen through a topology vector: out-of-service lines are absent
/// for solver purposes while the case itself is untouched.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveNetwork<'a> {
    case: &'a NetworkCase,
    tau: &'a TopologyVector,
}

pub fn apply_topology<'a>(
    case: &'a NetworkCase,
    tau: &'a TopologyVector,
) -> Result<EffectiveNetwork<'a>, CaseError> {
    if tau.len() != case.n_lines() {
        return Err(CaseError::TopologyLength { expected: case.n_lines(), found: tau.len() });
    }
    Ok(EffectiveNetwork { case, tau })
}

impl<'a> EffectiveNetwork<'a> {
    pub fn case(&self) -> &'a NetworkCase {
        self.case
    }

    pub fn tau(&self) -> &'a TopologyVector {
        self.tau
    }

    pub fn n_buses(&self) -> usize {
        self.case.n_buses()
    }

    pub fn line_in_service(&self, line: usize) -> bool {
        self.tau.is_in_service(line)
    }

    pub fn in_service_lines(&self) -> impl Iterator<Item = &'a Line> + 'a {
        let tau = self.tau;
        self.case.lines.iter().filter(move |l| tau.is_in_service(l.id))
    }

    pub fn n_in_service_lines(&self) -> usize {
        self.tau.len() - self.tau.n_outages()
    }

    /// All in-service branches: lines allowed by the topology vector followed
    /// by every transformer.
    pub fn branches(&self) -> impl Iterator<Item = BranchModel> + 'a {
        self.in_service_lines()
            .map(BranchModel::from_line)
            .chain(self.case.transformers.iter().map(BranchModel::from_transformer))
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for br in self.branches() {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        adj
    }
}

/// Partition of all buses into maximal sets connected by in-service
/// branches. Components are ordered by their smallest bus id and each
/// component is sorted.
pub fn connected_components(net: &EffectiveNetwork<'_>) -> Vec<Vec<usize>> {
    let adj = net.adjacency();
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Membership mask of the component that contains the slack bus.
pub fn slack_component_mask(net: &EffectiveNetwork<'_>) -> Vec<bool> {
    let adj = net.adjacency();
    let mut mask = vec![false; adj.len()];
    let slack = net.case.slack_bus();
    mask[slack] = true;
    let mut stack = vec![slack];
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !mask[v] {
                mask[v] = true;
                stack.push(v);
            }
        }
    }
    mask
}

/// Sparse complex bus admittance matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Ybus {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl Ybus {
    /// Assembles from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ybus { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, y) in self.row(i) {
                row[j] = y;
            }
        }
        dense
    }
}

/// Stamps every in-service branch and the fixed bus shunts into the bus
/// admittance matrix.
pub fn build_ybus(net: &EffectiveNetwork<'_>) -> Ybus {
    let n = net.n_buses();
    let mut triplets = Vec::with_capacity(4 * (net.case.lines.len() + net.case.transformers.len()) + n);
    for br in net.branches() {
        let y = br.admittance();
        triplets.push((br.from, br.from, y.ff));
        triplets.push((br.from, br.to, y.ft));
        triplets.push((br.to, br.from, y.tf));
        triplets.push((br.to, br.to, y.tt));
    }
    for bus in &net.case.buses {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            triplets.push((bus.id, bus.id, Complex64::new(bus.gs, bus.bs)));
        }
    }
    Ybus::from_triplets(n, triplets)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    pub fn bus(id: usize, kind: BusKind) -> Bus {
        Bus { id, kind, base_kv: 100.0, vm_init: 1.0, va_init: 0.0, gs: 0.0, bs: 0.0 }
    }

    pub fn line(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64, b: f64) -> Line {
        Line { id, from_bus, to_bus, r, x, b, i_max: 2.0 }
    }

    /// Slack at bus 0, one line to a PQ bus carrying `load` pu.
    pub fn two_bus(r: f64, x: f64, b: f64, load: f64) -> NetworkCase {
        NetworkCase::new(
            "two-bus",
            100.0,
            vec![bus(0, BusKind::Slack), bus(1, BusKind::Pq)],
            vec![line(0, 0, 1, r, x, b)],
            vec![],
            vec![Generator { bus: 0, p_set: 0.0, v_set: 1.0 }],
            vec![Load { bus: 1, p_set: load, q_set: 0.0 }],
        )
        .unwrap()
    }

    /// Five-bus meshed test grid with a PV bus, a transformer and a shunt.
    pub fn five_bus() -> NetworkCase {
        let mut buses = vec![
            bus(0, BusKind::Slack),
            bus(1, BusKind::Pv),
            bus(2, BusKind::Pq),
            bus(3, BusKind::Pq),
            bus(4, BusKind::Pq),
        ];
        buses[3].bs = 0.05;
        NetworkCase::new(
            "five-bus",
            100.0,
            buses,
            vec![
                line(0, 0, 1, 0.02, 0.06, 0.03),
                line(1, 0, 2, 0.08, 0.24, 0.025),
                line(2, 1, 2, 0.06, 0.18, 0.02),
                line(3, 1, 3, 0.06, 0.18, 0.02),
                line(4, 2, 3, 0.01, 0.03, 0.01),
            ],
            vec![Transformer { id: 0, from_bus: 3, to_bus: 4, r: 0.0, x: 0.08, g: 0.0, b: 0.0, tap: 0.97 }],
            vec![
                Generator { bus: 0, p_set: 0.0, v_set: 1.04 },
                Generator { bus: 1, p_set: 0.4, v_set: 1.02 },
            ],
            vec![
                Load { bus: 1, p_set: 0.2, q_set: 0.1 },
                Load { bus: 2, p_set: 0.45, q_set: 0.15 },
                Load { bus: 3, p_set: 0.4, q_set: 0.05 },
                Load { bus: 4, p_set: 0.6, q_set: 0.1 },
            ],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_bus_ybus_matches_hand_values() {
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::all_in_service(1);
        let y = build_ybus(&apply_topology(&case, &tau).unwrap()).to_dense();
        let expect = [[c(0.0, -10.0), c(0.0, 10.0)], [c(0.0, 10.0), c(0.0, -10.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y[i][j] - expect[i][j]).norm() < 1e-12, "{i},{j}: {}", y[i][j]);
            }
        }
    }

    #[test]
    fn rows_sum_to_zero_without_shunts() {
        let mut case = five_bus();
        // strip charging, shunt and tap so only series elements remain
        let lines = case.lines.iter().cloned().map(|mut l| {
            l.b = 0.0;
            l
        });
        let lines: Vec<_> = lines.collect();
        let mut buses = case.buses.clone();
        buses[3].bs = 0.0;
        let mut trs = case.transformers.clone();
        trs[0].tap = 1.0;
        case = NetworkCase::new("flat", 100.0, buses, lines, trs, case.generators.clone(), case.loads.clone())
            .unwrap();
        let tau = TopologyVector::all_in_service(5);
        let y = build_ybus(&apply_topology(&case, &tau).unwrap());
        for i in 0..y.dim() {
            let s: Complex64 = y.row(i).map(|(_, v)| v).sum();
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn ybus_is_symmetric() {
        let case = five_bus();
        let tau = TopologyVector::with_outages(5, &[2]);
        let y = build_ybus(&apply_topology(&case, &tau).unwrap()).to_dense();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(y[i][j], y[j][i]);
            }
        }
    }

    #[test]
    fn removing_a_line_subtracts_its_stamp() {
        let case = five_bus();
        let full = TopologyVector::all_in_service(5);
        let cut = TopologyVector::with_outages(5, &[3]);
        let y_full = build_ybus(&apply_topology(&case, &full).unwrap()).to_dense();
        let y_cut = build_ybus(&apply_topology(&case, &cut).unwrap()).to_dense();
        let st = BranchModel::from_line(&case.lines()[3]).admittance();
        let (f, t) = (1, 3);
        let mut expect = y_full.clone();
        expect[f][f] -= st.ff;
        expect[f][t] -= st.ft;
        expect[t][f] -= st.tf;
        expect[t][t] -= st.tt;
        for i in 0..5 {
            for j in 0..5 {
                assert!((expect[i][j] - y_cut[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_topology_counts_and_rejects_length() {
        let case = five_bus();
        let tau = TopologyVector::with_outages(5, &[0]);
        let net = apply_topology(&case, &tau).unwrap();
        assert_eq!(net.n_in_service_lines(), 4);
        assert_eq!(net.in_service_lines().count(), 4);
        let bad = TopologyVector::all_in_service(4);
        assert_eq!(
            apply_topology(&case, &bad).unwrap_err(),
            CaseError::TopologyLength { expected: 5, found: 4 }
        );
    }

    #[test]
    fn components_of_reference_and_split_two_bus() {
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::all_in_service(1);
        assert_eq!(connected_components(&apply_topology(&case, &tau).unwrap()), vec![vec![0, 1]]);
        let out = TopologyVector::with_outages(1, &[0]);
        assert_eq!(
            connected_components(&apply_topology(&case, &out).unwrap()),
            vec![vec![0], vec![1]]
        );
    }

    #[test]
    fn validation_errors() {
        let ok = five_bus();
        let mut lines = ok.lines.clone();
        lines[0].to_bus = 99;
        let err = NetworkCase::new("x", 100.0, ok.buses.clone(), lines, vec![], ok.generators.clone(), vec![])
            .unwrap_err();
        assert_eq!(err, CaseError::DanglingBus { element: "line", index: 0, bus: 99 });

        let mut buses = ok.buses.clone();
        buses[2].kind = BusKind::Slack;
        let err = NetworkCase::new("x", 100.0, buses, ok.lines.clone(), ok.transformers.clone(), ok.generators.clone(), vec![])
            .unwrap_err();
        assert_eq!(err, CaseError::DuplicateSlack { first: 0, second: 2 });

        let mut lines = ok.lines.clone();
        lines[1].x = 0.0;
        let err = NetworkCase::new("x", 100.0, ok.buses.clone(), lines, ok.transformers.clone(), ok.generators.clone(), vec![])
            .unwrap_err();
        assert_eq!(err, CaseError::ZeroReactance { element: "line", index: 1 });

        let err = NetworkCase::new("x", 100.0, ok.buses.clone(), ok.lines.clone(), vec![], ok.generators.clone(), vec![])
            .unwrap_err();
        assert_eq!(err, CaseError::Disconnected { components: 2 });

        assert!(TopologyVector::new(vec![1, 2, 0]).is_err());
    }

    #[test]
    fn line_order_hash_tracks_ordering() {
        let a = five_bus();
        let mut lines = a.lines.clone();
        lines.swap(0, 1);
        lines[0].id = 0;
        lines[1].id = 1;
        let b = NetworkCase::new("five-bus", 100.0, a.buses.clone(), lines, a.transformers.clone(), a.generators.clone(), a.loads.clone())
            .unwrap();
        assert_eq!(a.line_order_hash().len(), 16);
        assert_ne!(a.line_order_hash(), b.line_order_hash());
        assert_eq!(a.line_order_hash(), five_bus().line_order_hash());
    }
}
