"""Export the bundled IEEE cases and frozen reference power-flow results.

Run once with pandapower installed:

    python3 tools/export_reference.py

Writes the native `.case` files and `case14.m` under crates/mfpf/cases/ and
reference solutions under crates/mfpf/tests/data/. Branch data is taken from
pandapower's internal per-unit model after a solve so that the Rust solver
and the reference operate on identical electrical parameters.
"""
import math
import os

import numpy as np
import pandapower as pp
import pandapower.networks as pn
from pandapower.pypower.idx_brch import BR_B, BR_G, BR_R, BR_X, F_BUS, PF, T_BUS, TAP
from pandapower.pypower.idx_bus import BASE_KV, BS, BUS_TYPE, GS

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
CASES = os.path.join(ROOT, "crates", "mfpf", "cases")
DATA = os.path.join(ROOT, "crates", "mfpf", "tests", "data")
TOL_MVA = 1e-11


def g(x):
    return "%.12g" % (float(x) + 0.0)


def exact(x):
    return repr(float(x))


def solve(net):
    pp.runpp(net, tolerance_mva=TOL_MVA, max_iteration=30, init="flat", trafo_model="t")
    return net


def export_native(net, name, path):
    ppc = net._ppc
    base = ppc["baseMVA"]
    bus = ppc["bus"].real
    br = ppc["branch"]
    n_line = len(net.line)
    slack = int(net.ext_grid.bus.iloc[0])
    out = [
        "mfpf-case v1",
        f"# exported from pandapower {pp.__version__}; per-unit on base_mva, angles in radians",
        f"name = {name}",
        f"base_mva = {g(base)}",
    ]
    kinds = {1: "pq", 2: "pv", 3: "slack"}
    for i in range(bus.shape[0]):
        out.append(
            f"bus id={i} kind={kinds[int(bus[i, BUS_TYPE])]} base_kv={g(bus[i, BASE_KV])} "
            f"vm=1 va=0 gs={g(bus[i, GS] / base)} bs={g(bus[i, BS] / base)}"
        )
    for k in range(br.shape[0]):
        f, t = int(br[k, F_BUS].real), int(br[k, T_BUS].real)
        r, x, b, gg = br[k, BR_R].real, br[k, BR_X].real, br[k, BR_B].real, br[k, BR_G].real
        tap = br[k, TAP].real or 1.0
        if k < n_line:
            # rating converted from kA to per-unit at the from-bus voltage level
            i_base_ka = base / (math.sqrt(3.0) * bus[f, BASE_KV])
            i_max = net.line.max_i_ka.iloc[k] / i_base_ka
            out.append(
                f"line id={k} from={f} to={t} r={g(r)} x={g(x)} b={g(b)} i_max={g(i_max)}"
            )
        else:
            out.append(
                f"transformer id={k - n_line} from={f} to={t} r={g(r)} x={g(x)} g={g(gg)} b={g(b)} tap={g(tap)}"
            )
    vm_set = {}
    for _, eg in net.ext_grid.iterrows():
        vm_set[int(eg.bus)] = eg.vm_pu
    gens = [(slack, float(net.res_ext_grid.p_mw.iloc[0]), float(net.ext_grid.vm_pu.iloc[0]))]
    for idx, gen in net.gen.iterrows():
        gens.append((int(gen.bus), float(gen.p_mw), float(gen.vm_pu)))
    for b_, p, v in gens:
        out.append(f"gen bus={b_} p={g(p / base)} v={g(v)}")
    for _, ld in net.load.iterrows():
        out.append(f"load bus={int(ld.bus)} p={g(ld.p_mw / base)} q={g(ld.q_mvar / base)}")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def export_matpower(net, name, path):
    ppc = net._ppc
    bus = ppc["bus"].real
    br = ppc["branch"].real
    lines = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {g(ppc['baseMVA'])};", ""]
    lines.append("%% bus data")
    lines.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin")
    lines.append("mpc.bus = [")
    pd = np.zeros(bus.shape[0])
    qd = np.zeros(bus.shape[0])
    for _, ld in net.load.iterrows():
        pd[int(ld.bus)] += ld.p_mw
        qd[int(ld.bus)] += ld.q_mvar
    for i in range(bus.shape[0]):
        row = [i + 1, int(bus[i, BUS_TYPE]), pd[i], qd[i], bus[i, GS], bus[i, BS], 1, 1.0, 0.0, bus[i, BASE_KV], 1, 1.06, 0.94]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines.append("];")
    lines.append("")
    lines.append("%% generator data")
    lines.append("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin")
    lines.append("mpc.gen = [")
    slack = int(net.ext_grid.bus.iloc[0])
    lines.append(f"\t{slack + 1}\t{g(net.res_ext_grid.p_mw.iloc[0])}\t0\t9900\t-9900\t{g(net.ext_grid.vm_pu.iloc[0])}\t100\t1\t9900\t0;")
    for _, gen in net.gen.iterrows():
        lines.append(f"\t{int(gen.bus) + 1}\t{g(gen.p_mw)}\t0\t9900\t-9900\t{g(gen.vm_pu)}\t100\t1\t9900\t0;")
    lines.append("];")
    lines.append("")
    lines.append("%% branch data")
    lines.append("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax")
    lines.append("mpc.branch = [")
    for k in range(br.shape[0]):
        row = [int(br[k, F_BUS]) + 1, int(br[k, T_BUS]) + 1, g(br[k, BR_R]), g(br[k, BR_X]), g(br[k, BR_B]), 9900, 0, 0, g(br[k, TAP]) if k >= len(net.line) else 0, 0, 1, -360, 360]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines.append("];")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_solution(net, path, header):
    base = net._ppc["baseMVA"]
    br = net._ppc["branch"]
    n_line = len(net.line)
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(f"# iterations={net._ppc['iterations']}\n")
        fh.write("kind,index,a,b\n")
        for i, row in net.res_bus.iterrows():
            fh.write(f"bus,{i},{exact(row.vm_pu)},{exact(math.radians(row.va_degree))}\n")
        for k in range(n_line):
            if net.line.in_service.iloc[k]:
                p = br[k, PF].real / base
            else:
                p = 0.0
            i_from = net.res_line.i_from_ka.iloc[k]
            fh.write(f"line,{k},{exact(p)},{exact(i_from)}\n")


def export_ybus(net, path):
    ybus = net._ppc["internal"]["Ybus"].tocoo()
    with open(path, "w") as fh:
        fh.write("row,col,re,im\n")
        for r, c, v in sorted(zip(ybus.row, ybus.col, ybus.data)):
            fh.write(f"{r},{c},{exact(v.real)},{exact(v.imag)}\n")


def main():
    os.makedirs(CASES, exist_ok=True)
    os.makedirs(DATA, exist_ok=True)
    for name, factory in (("ieee14", pn.case14), ("ieee118", pn.case118)):
        net = solve(factory())
        export_native(net, name, os.path.join(CASES, f"{name}.case"))
        export_solution(net, os.path.join(DATA, f"{name}_base.csv"), f"{name} base topology, pandapower {pp.__version__}")
        if name == "ieee14":
            export_matpower(net, "case14", os.path.join(CASES, "case14.m"))
            export_ybus(net, os.path.join(DATA, "ieee14_ybus.csv"))
            for outage in (3, 9):
                net2 = factory()
                net2.line.loc[outage, "in_service"] = False
                solve(net2)
                export_solution(net2, os.path.join(DATA, f"ieee14_outage{outage}.csv"), f"{name} line {outage} out")
        else:
            net2 = factory()
            net2.line.loc[[10, 50], "in_service"] = False
            solve(net2)
            export_solution(net2, os.path.join(DATA, "ieee118_outage10_50.csv"), f"{name} lines 10,50 out")


if __name__ == "__main__":
    main()
