use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::{ac_line_quantities, max_mismatch, singular, solve_dc, Fidelity};
use super::{Injections, NrConfig, NrInit, PfError, PfSolution};
use crate::grid::{apply_topology, build_ybus, slack_component_mask, BusKind};
use crate::grid::{NetworkCase, TopologyVector, Ybus};
use crate::linalg::{self, LinearSolver, SparseLu, SparseMatrix, DENSE_LIMIT};

/// Full polar Newton-Raphson on the active-power mismatch of PV and PQ buses
/// and the reactive-power mismatch of PQ buses.
///
/// Iterates until the largest mismatch drops below `cfg.tol` or `max_iter`
/// updates have been taken. A run that does not converge returns its last
/// iterate with `converged = false`.
pub fn solve_nr(
    case: &NetworkCase,
    tau: &TopologyVector,
    injections: &Injections,
    cfg: &NrConfig,
) -> Result<PfSolution, PfError> {
    cfg.validate()?;
    injections.check(case)?;
    let net = apply_topology(case, tau)?;
    let n = case.n_buses();
    let active = slack_component_mask(&net);
    let ybus = build_ybus(&net);
    let sbus = injections.bus_power(case);

    let targets = injections.voltage_targets(case);
    let mut vm: Vec<f64> = (0..n).map(|b| if active[b] { targets[b] } else { 0.0 }).collect();
    let mut va = vec![0.0; n];
    if cfg.init == NrInit::DcWarmStart {
        let dc = solve_dc(case, tau, injections)?;
        va.copy_from_slice(&dc.va);
    }

    let mut pv = Vec::new();
    let mut pq = Vec::new();
    for bus in case.buses() {
        if !active[bus.id] {
            continue;
        }
        match bus.kind {
            BusKind::Pv => pv.push(bus.id),
            BusKind::Pq => pq.push(bus.id),
            BusKind::Slack => {}
        }
    }
    let pvpq: Vec<usize> = pv.iter().chain(&pq).copied().collect();
    let n_ang = pvpq.len();
    let dim = n_ang + pq.len();
    // Jacobian column of each bus angle / magnitude
    let mut col_a = vec![usize::MAX; n];
    let mut col_m = vec![usize::MAX; n];
    for (k, &b) in pvpq.iter().enumerate() {
        col_a[b] = k;
    }
    for (k, &b) in pq.iter().enumerate() {
        col_m[b] = n_ang + k;
    }

    let mut v: Vec<Complex64> = (0..n).map(|b| Complex64::from_polar(vm[b], va[b])).collect();
    let mut f = mismatch_vector(&ybus, &v, &sbus, &pvpq, &pq);
    let mut norm = inf_norm(&f);
    let mut converged = norm < cfg.tol;
    let mut iterations = 0;
    let mut ordering: Option<Vec<usize>> = None;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let jac = jacobian(&ybus, &v, &pvpq, &pq, &col_a, &col_m, dim);
        let mut dx: Vec<f64> = f.iter().map(|x| -x).collect();
        if dim <= DENSE_LIMIT {
            linalg::DenseLu.solve(&jac, &mut dx)
        } else {
            let order = ordering.get_or_insert_with(|| linalg::minimum_degree_order(&jac));
            SparseLu::with_ordering(order.clone()).solve(&jac, &mut dx)
        }
        .map_err(|e| singular(Fidelity::Nr, e))?;

        for (k, &b) in pvpq.iter().enumerate() {
            va[b] += dx[k];
        }
        for (k, &b) in pq.iter().enumerate() {
            vm[b] += dx[n_ang + k];
        }
        for b in 0..n {
            if active[b] {
                v[b] = Complex64::from_polar(vm[b], va[b]);
            }
        }
        f = mismatch_vector(&ybus, &v, &sbus, &pvpq, &pq);
        norm = inf_norm(&f);
        if !norm.is_finite() {
            break;
        }
        converged = norm < cfg.tol;
    }

    // a negative magnitude is an equivalent polar point; keep vm >= 0
    for b in 0..n {
        if vm[b] < 0.0 {
            vm[b] = -vm[b];
            va[b] += core::f64::consts::PI;
        }
    }
    let [p_li, i_li, v_li, theta_li] = ac_line_quantities(&net, &vm, &va, &active);
    let max_mis = if norm.is_finite() { max_mismatch(case, &ybus, &v, &sbus, &active) } else { norm };
    Ok(PfSolution {
        converged,
        iterations,
        max_mismatch: max_mis,
        vm,
        va,
        p_li,
        i_li,
        v_li,
        theta_li,
        fidelity: Fidelity::Nr,
    })
}

fn inf_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |acc, x| if x.is_nan() { f64::NAN } else { acc.max(x.abs()) })
}

fn mismatch_vector(
    ybus: &Ybus,
    v: &[Complex64],
    sbus: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
) -> Vec<f64> {
    let mis = |b: usize| {
        let i: Complex64 = ybus.row(b).map(|(k, y)| y * v[k]).sum();
        v[b] * i.conj() - sbus[b]
    };
    let mut f = Vec::with_capacity(pvpq.len() + pq.len());
    f.extend(pvpq.iter().map(|&b| mis(b).re));
    f.extend(pq.iter().map(|&b| mis(b).im));
    f
}

/// Real Jacobian of the mismatch with respect to `(va[pvpq], vm[pq])`.
fn jacobian(
    ybus: &Ybus,
    v: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
    col_a: &[usize],
    col_m: &[usize],
    dim: usize,
) -> SparseMatrix {
    let j = Complex64::new(0.0, 1.0);
    let n_ang = pvpq.len();
    let mut triplets = Vec::with_capacity(4 * ybus.nnz());
    // row r of the P block belongs to bus pvpq[r]; row n_ang + r of the Q
    // block to bus pq[r]
    let mut q_row = vec![usize::MAX; v.len()];
    for (r, &b) in pq.iter().enumerate() {
        q_row[b] = n_ang + r;
    }
    for (r, &i) in pvpq.iter().enumerate() {
        let vi = v[i];
        let ii: Complex64 = ybus.row(i).map(|(k, y)| y * v[k]).sum();
        let vni = if vi.norm() > 0.0 { vi / vi.norm() } else { Complex64::new(1.0, 0.0) };
        for (k, y) in ybus.row(i) {
            let vk = v[k];
            let vnk = if vk.norm() > 0.0 { vk / vk.norm() } else { Complex64::new(1.0, 0.0) };
            let (ds_dva, ds_dvm) = if k == i {
                (j * vi * (ii - y * vi).conj(), vi * (y * vni).conj() + ii.conj() * vni)
            } else {
                (j * vi * (-(y * vk)).conj(), vi * (y * vnk).conj())
            };
            let qr = q_row[i];
            if col_a[k] != usize::MAX {
                triplets.push((r, col_a[k], ds_dva.re));
                if qr != usize::MAX {
                    triplets.push((qr, col_a[k], ds_dva.im));
                }
            }
            if col_m[k] != usize::MAX {
                triplets.push((r, col_m[k], ds_dvm.re));
                if qr != usize::MAX {
                    triplets.push((qr, col_m[k], ds_dvm.im));
                }
            }
        }
    }
    SparseMatrix::from_triplets(dim, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::testing::{five_bus, two_bus};
    use crate::powerflow::verify_power_balance;

    #[test]
    fn flat_no_load_network_converges_immediately() {
        let case = two_bus(0.01, 0.1, 0.0, 0.0);
        let tau = TopologyVector::all_in_service(1);
        let inj = Injections::from_case(&case);
        let sol = solve_nr(&case, &tau, &inj, &NrConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert_eq!(sol.vm, vec![1.0, 1.0]);
        assert_eq!(sol.p_li, vec![0.0]);
        assert_eq!(verify_power_balance(&case, &tau, &inj, &sol).unwrap(), 0.0);
    }

    #[test]
    fn two_bus_lossless_closed_form() {
        // P = V1 V2 sin(d)/x with V1 = 1 and Q2 = 0 has a closed form
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::all_in_service(1);
        let inj = Injections::from_case(&case);
        let sol = solve_nr(&case, &tau, &inj, &NrConfig::default()).unwrap();
        assert!(sol.converged);
        // receiving-end Q balance: V2^2 = V2 cos(d) => V2 = cos(d); P = cos d sin d / x
        let d = -sol.va[1];
        assert!((sol.vm[1] - d.cos()).abs() < 1e-9);
        assert!((d.cos() * d.sin() / 0.1 - 1.0).abs() < 1e-8);
        assert!((sol.p_li[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn converged_solution_balances() {
        let case = five_bus();
        let inj = Injections::from_case(&case);
        for out in [vec![], vec![0], vec![2, 4]] {
            let tau = TopologyVector::with_outages(5, &out);
            let sol = solve_nr(&case, &tau, &inj, &NrConfig::default()).unwrap();
            assert!(sol.converged, "{out:?}");
            assert!(verify_power_balance(&case, &tau, &inj, &sol).unwrap() <= 1e-8);
            for &l in &out {
                assert_eq!((sol.p_li[l], sol.i_li[l], sol.theta_li[l]), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn warm_and_flat_starts_agree() {
        let case = five_bus();
        let inj = Injections::from_case(&case).scaled(1.5);
        let tau = TopologyVector::with_outages(5, &[1]);
        let flat = solve_nr(&case, &tau, &inj, &NrConfig::default()).unwrap();
        let warm =
            solve_nr(&case, &tau, &inj, &NrConfig { init: NrInit::DcWarmStart, ..NrConfig::default() })
                .unwrap();
        assert!(flat.converged && warm.converged);
        let diff = flat.vm.iter().zip(&warm.vm).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-8);
    }

    #[test]
    fn hopeless_load_does_not_converge() {
        let case = two_bus(0.0, 0.1, 0.0, 50.0);
        let tau = TopologyVector::all_in_service(1);
        let sol = solve_nr(&case, &tau, &Injections::from_case(&case), &NrConfig::default()).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 20);
    }

    #[test]
    fn rejects_bad_config() {
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::all_in_service(1);
        let cfg = NrConfig { tol: 0.0, ..NrConfig::default() };
        assert!(matches!(
            solve_nr(&case, &tau, &Injections::from_case(&case), &cfg),
            Err(PfError::Config(_))
        ));
    }
}
