//! Text and CSV renderings of evaluation, sweep and timing results. Every
//! artifact opens with `# key = value` echo lines so it can be traced back
//! to the tool version and configuration that produced it.

use std::fmt::Write as _;

use mfpf_core::eval::{EvalReport, ScatterRow, SweepTable, GROUPS};

use crate::bench::TimingReport;
use crate::data_io::TOOL;

/// Echo block. `tool` is always first.
pub fn echo(pairs: &[(&str, String)]) -> String {
    let mut out = format!("# tool = {TOOL}\n");
    for (k, v) in pairs {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

pub fn eval_text(r: &EvalReport, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    let _ = writeln!(out, "# scenarios = {}, lines = {}", r.n_scenarios, r.n_lines);
    let _ = writeln!(out, "{:<10} {:>14} {:>14} {:>10}", "group", "dc_mse", "mfnn_mse", "mfnn/dc");
    for (g, name) in GROUPS.iter().enumerate() {
        let _ = writeln!(out, "{:<10} {:>14.6e} {:>14.6e} {:>10.4}", name, r.dc[g], r.mfnn[g], ratio(r.mfnn[g], r.dc[g]));
    }
    out
}

pub fn eval_csv(r: &EvalReport, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    out.push_str("group,dc_mse,mfnn_mse,n_scenarios,n_lines\n");
    for (g, name) in GROUPS.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{},{},{}", r.dc[g], r.mfnn[g], r.n_scenarios, r.n_lines);
    }
    out
}

/// Medians per swept value, one block per target group.
pub fn sweep_text(t: &SweepTable, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    for w in &t.warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    let p = t.param.name();
    for (g, name) in GROUPS.iter().enumerate() {
        let _ = writeln!(out, "\n[{name}] median MSE over repetitions");
        let _ = writeln!(out, "{p:>8} {:>14} {:>14} {:>8}", "mfnn", "dc", "failed");
        for (v, m, d, failed) in t.medians(g) {
            let _ = writeln!(out, "{v:>8} {m:>14.6e} {d:>14.6e} {failed:>8}");
        }
    }
    out
}

/// One row per cell and group. Failed cells keep their error message.
pub fn sweep_csv(t: &SweepTable, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    let _ = writeln!(out, "{},rep,group,mfnn_mse,dc_mse,error", t.param.name());
    for row in &t.rows {
        match &row.report {
            Ok(r) => {
                for (g, name) in GROUPS.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{name},{},{},", row.value, row.rep, r.mfnn[g], r.dc[g]);
                }
            }
            Err(e) => {
                let _ = writeln!(out, "{},{},,,,\"{}\"", row.value, row.rep, e.replace('"', "'"));
            }
        }
    }
    out
}

pub fn timing_text(t: &TimingReport, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    let _ = writeln!(out, "# case = {}, scenarios = {}, repetitions = {}", t.case, t.n_scenarios, t.reps);
    let _ = writeln!(out, "# surrogate batch size = {}", t.batch_size);
    let _ = writeln!(out, "# hardware: {}", t.hardware);
    if t.nr_not_converged > 0 {
        let _ = writeln!(out, "# warning: {} NR solves did not converge", t.nr_not_converged);
    }
    let _ = writeln!(out, "{:<8} {:>14} {:>14} {:>14}", "method", "mean_s", "median_s", "stddev_s");
    for m in &t.methods {
        let _ = writeln!(out, "{:<8} {:>14.6e} {:>14.6e} {:>14.6e}", m.method, m.mean, m.median, m.stddev);
    }
    out
}

pub fn timing_csv(t: &TimingReport, echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    out.push_str("method,rep,seconds_per_scenario\n");
    for m in &t.methods {
        for (i, s) in m.per_rep.iter().enumerate() {
            let _ = writeln!(out, "{},{i},{s}", m.method);
        }
    }
    out
}

/// Per-line predictions next to the NR truth.
pub fn scatter_csv(rows: &[ScatterRow], echo_block: &str) -> String {
    let mut out = echo_block.to_string();
    out.push_str("scenario,line,group,nr,dc,mfnn\n");
    for (s, l, g, nr, dc, nn) in rows {
        let _ = writeln!(out, "{s},{l},{g},{nr},{dc},{nn}");
    }
    out
}
