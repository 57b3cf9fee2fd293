//! Reference solutions exported from pandapower (see
//! `tools/export_reference.py`). Reference angles carry the reference's slack
//! angle, so angles are compared relative to the slack bus.

#![allow(dead_code)]

use mfpf_core::{Injections, NetworkCase, NrConfig, TopologyVector};

pub const IEEE14_BASE: &str = include_str!("../data/ieee14_base.csv");
pub const IEEE14_OUTAGE3: &str = include_str!("../data/ieee14_outage3.csv");
pub const IEEE14_OUTAGE9: &str = include_str!("../data/ieee14_outage9.csv");
pub const IEEE118_BASE: &str = include_str!("../data/ieee118_base.csv");
pub const IEEE118_OUTAGE10_50: &str = include_str!("../data/ieee118_outage10_50.csv");

pub struct Reference {
    pub iterations: usize,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub p: Vec<f64>,
    pub i_ka: Vec<f64>,
}

pub fn read_reference(text: &str) -> Reference {
    let mut r = Reference { iterations: 0, vm: vec![], va: vec![], p: vec![], i_ka: vec![] };
    for line in text.lines() {
        if let Some(it) = line.strip_prefix("# iterations=") {
            r.iterations = it.trim().parse().unwrap();
            continue;
        }
        if line.starts_with('#') || line.starts_with("kind") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let (a, b): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        match f[0] {
            "bus" => {
                r.vm.push(a);
                r.va.push(b);
            }
            "line" => {
                r.p.push(a);
                r.i_ka.push(b);
            }
            other => panic!("unexpected row kind {other}"),
        }
    }
    r
}

/// Worst absolute deviations of our NR solution from the reference.
#[derive(Debug)]
pub struct Deviation {
    pub converged: bool,
    pub iterations: usize,
    pub reference_iterations: usize,
    pub vm: f64,
    pub va: f64,
    pub p: f64,
    pub i: f64,
    /// Outaged lines report exactly zero flow.
    pub outages_zero: bool,
}

pub fn compare(case: &NetworkCase, outages: &[usize], reference: &str) -> Deviation {
    let r = read_reference(reference);
    let tau = TopologyVector::with_outages(case.n_lines(), outages);
    let sol = mfpf_core::powerflow::solve_nr(case, &tau, &Injections::from_case(case), &NrConfig::default())
        .unwrap();
    let slack = case.slack_bus();
    let mut d = Deviation {
        converged: sol.converged,
        iterations: sol.iterations,
        reference_iterations: r.iterations,
        vm: 0.0,
        va: 0.0,
        p: 0.0,
        i: 0.0,
        outages_zero: outages.iter().all(|&k| (sol.p_li[k], sol.i_li[k], sol.theta_li[k]) == (0.0, 0.0, 0.0)),
    };
    for b in 0..case.n_buses() {
        d.vm = d.vm.max((sol.vm[b] - r.vm[b]).abs());
        d.va = d.va.max(((sol.va[b] - sol.va[slack]) - (r.va[b] - r.va[slack])).abs());
    }
    for line in case.lines() {
        let k = line.id;
        d.p = d.p.max((sol.p_li[k] - r.p[k]).abs());
        // kA to per-unit on the from-bus voltage base
        let base_ka = case.base_mva() / (3f64.sqrt() * case.buses()[line.from_bus].base_kv);
        d.i = d.i.max((sol.i_li[k] - r.i_ka[k] / base_ka).abs());
    }
    d
}
