use alloc::vec;
use alloc::vec::Vec;


use super::{singular, Fidelity, Injections, PfError, PfSolution};
use crate::grid::{apply_topology, slack_component_mask, NetworkCase, TopologyVector};
use crate::linalg::{self, SparseMatrix};

/// DC approximation: flat 1 pu voltages, lossless branches, `B' θ = P` over
/// the non-slack buses of the slack component with `θ_slack = 0`.
///
/// Branch susceptances are `1 / (x · tap)`. Line outputs use the DC proxies
/// `v_li = 1`, `i_li = |p_li|` and `theta_li = i_li / i_max`.
pub fn solve_dc(
    case: &NetworkCase,
    tau: &TopologyVector,
    injections: &Injections,
) -> Result<PfSolution, PfError> {
    injections.check(case)?;
    let net = apply_topology(case, tau)?;
    let n = case.n_buses();
    let slack = case.slack_bus();
    let active = slack_component_mask(&net);

    // reduced index of each active non-slack bus
    let mut idx = vec![usize::MAX; n];
    let mut m = 0;
    for b in 0..n {
        if active[b] && b != slack {
            idx[b] = m;
            m += 1;
        }
    }

    let mut triplets = Vec::new();
    for br in net.branches() {
        if !active[br.from] {
            continue;
        }
        let b = 1.0 / (br.x * br.tap);
        let (f, t) = (idx[br.from], idx[br.to]);
        if f != usize::MAX {
            triplets.push((f, f, b));
        }
        if t != usize::MAX {
            triplets.push((t, t, b));
        }
        if f != usize::MAX && t != usize::MAX {
            triplets.push((f, t, -b));
            triplets.push((t, f, -b));
        }
    }
    let sbus = injections.bus_power(case);
    let mut rhs = vec![0.0; m];
    for b in 0..n {
        if idx[b] != usize::MAX {
            rhs[idx[b]] = sbus[b].re - case.buses()[b].gs;
        }
    }
    if m > 0 {
        let bprime = SparseMatrix::from_triplets(m, triplets);
        linalg::solve(&bprime, &mut rhs).map_err(|e| singular(Fidelity::Dc, e))?;
    }

    let mut va = vec![0.0; n];
    let mut vm = vec![0.0; n];
    for b in 0..n {
        if active[b] {
            vm[b] = 1.0;
            if idx[b] != usize::MAX {
                va[b] = rhs[idx[b]];
            }
        }
    }

    let nl = case.n_lines();
    let (mut p, mut i, mut v, mut th) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; nl], vec![0.0; nl]);
    for line in case.lines() {
        let (f, t) = (line.from_bus, line.to_bus);
        v[line.id] = vm[f];
        if !net.line_in_service(line.id) || !active[f] {
            continue;
        }
        let flow = (va[f] - va[t]) / line.x;
        p[line.id] = flow;
        i[line.id] = flow.abs() / vm[f];
        th[line.id] = i[line.id] / line.i_max;
    }

    Ok(PfSolution {
        converged: true,
        iterations: 1,
        max_mismatch: 0.0,
        vm,
        va,
        p_li: p,
        i_li: i,
        v_li: v,
        theta_li: th,
        fidelity: Fidelity::Dc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::testing::{five_bus, two_bus};

    #[test]
    fn two_bus_hand_solution() {
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::all_in_service(1);
        let sol = solve_dc(&case, &tau, &Injections::from_case(&case)).unwrap();
        assert!((sol.va[1] + 0.1).abs() < 1e-15);
        assert!((sol.p_li[0] - 1.0).abs() < 1e-14);
        assert_eq!(sol.v_li[0], 1.0);
        assert!((sol.theta_li[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_injection_zero_flow() {
        let case = five_bus();
        let inj = Injections::from_case(&case).scaled(0.0);
        for tau in [TopologyVector::all_in_service(5), TopologyVector::with_outages(5, &[1, 4])] {
            let sol = solve_dc(&case, &tau, &inj).unwrap();
            assert!(sol.va.iter().all(|&a| a == 0.0));
            assert!(sol.p_li.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn slack_balances_component() {
        let case = five_bus();
        let tau = TopologyVector::with_outages(5, &[2]);
        let inj = Injections::from_case(&case);
        let sol = solve_dc(&case, &tau, &inj).unwrap();
        // net flow out of the slack equals total non-slack withdrawal
        let sbus = inj.bus_power(&case);
        let slack_out: f64 = case
            .lines()
            .iter()
            .filter(|l| tau.is_in_service(l.id))
            .map(|l| {
                if l.from_bus == 0 {
                    sol.p_li[l.id]
                } else if l.to_bus == 0 {
                    -sol.p_li[l.id]
                } else {
                    0.0
                }
            })
            .sum();
        let others: f64 = (1..5).map(|b| sbus[b].re).sum();
        assert!((slack_out + others).abs() < 1e-12);
    }

    #[test]
    fn islanded_bus_is_zeroed() {
        let case = two_bus(0.0, 0.1, 0.0, 1.0);
        let tau = TopologyVector::with_outages(1, &[0]);
        let sol = solve_dc(&case, &tau, &Injections::from_case(&case)).unwrap();
        assert_eq!(sol.vm, vec![1.0, 0.0]);
        assert_eq!(sol.p_li, vec![0.0]);
        assert_eq!(sol.v_li, vec![1.0]);
    }
}
