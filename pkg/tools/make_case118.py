"""Generate the bundled 118-bus test case.

The original IEEE 118-bus data set is not redistributable from this
environment, so the bundled case is a deterministic reconstruction: the true
118-bus topology skeleton (bus numbering, line/transformer placement, the 54
unit locations with the published dispatch, the 345 kV backbone) carrying
synthetic per-element parameters calibrated to the published aggregates
(4242 MW / 1438 Mvar served over 99 load buses, 186 branches of which 9 are
transformers). Branch ratings are assigned from the solved base-case flows.

Run from the repository root:  python3 tools/make_case118.py
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from patc.netmodel import parse_case  # noqa: E402
from patc.powerflow import PfOptions, base_injections, branch_flows, solve_power_flow  # noqa: E402

# 345 kV backbone buses; everything else is 138 kV
BACKBONE = {8, 9, 10, 26, 30, 38, 63, 64, 65, 68, 81, 116}

# transformers tie the backbone to the 138 kV system
TRANSFORMERS = [(8, 5), (26, 25), (30, 17), (38, 37), (63, 59), (64, 61), (65, 66), (68, 69), (81, 80)]

LINES = [
    (1, 2), (1, 3), (2, 12), (3, 5), (3, 12), (4, 5), (4, 11), (5, 6), (5, 11), (6, 7),
    (7, 12), (8, 9), (8, 30), (9, 10), (11, 12), (11, 13), (12, 14), (12, 16), (12, 117),
    (13, 15), (14, 15), (15, 17), (15, 19), (15, 33), (16, 17), (17, 18), (17, 31), (17, 113),
    (18, 19), (19, 20), (19, 34), (20, 21), (21, 22), (22, 23), (23, 24), (23, 25), (23, 32),
    (24, 70), (24, 72), (25, 27), (26, 30), (27, 28), (27, 32), (27, 115), (28, 29), (29, 31),
    (30, 38), (31, 32), (32, 113), (32, 114), (33, 37), (34, 36), (34, 37), (34, 43), (35, 36),
    (35, 37), (37, 39), (37, 40), (38, 65), (39, 40), (40, 41), (40, 42), (41, 42), (42, 49),
    (42, 49), (43, 44), (44, 45), (45, 46), (45, 49), (46, 47), (46, 48), (47, 49), (47, 69),
    (48, 49), (49, 50), (49, 51), (49, 54), (49, 54), (49, 66), (49, 66), (49, 69), (50, 57),
    (51, 52), (51, 58), (52, 53), (53, 54), (54, 55), (54, 56), (54, 59), (55, 56), (55, 59),
    (56, 57), (56, 58), (56, 59), (56, 59), (59, 60), (59, 61), (60, 61), (60, 62), (61, 62),
    (62, 66), (62, 67), (63, 64), (64, 65), (65, 68), (66, 67), (68, 81), (68, 116), (69, 70),
    (69, 75), (69, 77), (70, 71), (70, 74), (70, 75), (71, 72), (71, 73), (74, 75), (75, 77),
    (75, 118), (76, 77), (76, 118), (77, 78), (77, 80), (77, 80), (77, 82), (78, 79), (79, 80),
    (80, 96), (80, 97), (80, 98), (80, 99), (82, 83), (82, 96), (83, 84), (83, 85), (84, 85),
    (85, 86), (85, 88), (85, 89), (86, 87), (88, 89), (89, 90), (89, 90), (89, 92), (89, 92),
    (90, 91), (91, 92), (92, 93), (92, 94), (92, 100), (92, 102), (93, 94), (94, 95), (94, 96),
    (94, 100), (95, 96), (96, 97), (98, 100), (99, 100), (100, 101), (100, 103), (100, 104),
    (100, 106), (101, 102), (103, 104), (103, 105), (103, 110), (104, 105), (105, 106),
    (105, 107), (105, 108), (106, 107), (108, 109), (109, 110), (110, 111), (110, 112),
    (114, 115),
]

# dispatching units: bus -> scheduled MW (published dispatch); slack is 69
DISPATCH = {
    10: 450.0, 12: 85.0, 25: 220.0, 26: 314.0, 31: 7.0, 46: 19.0, 49: 204.0, 54: 48.0,
    59: 155.0, 61: 160.0, 65: 391.0, 66: 392.0, 69: 516.4, 80: 477.0, 87: 4.0, 89: 607.0,
    100: 252.0, 103: 40.0, 111: 36.0,
}

# synchronous condenser locations (35 units, zero active dispatch)
CONDENSERS = [
    1, 4, 6, 8, 15, 18, 19, 24, 27, 32, 34, 36, 40, 42, 55, 56, 62, 70, 72, 73, 74, 76, 77,
    85, 90, 91, 92, 99, 104, 105, 107, 110, 112, 113, 116,
]

NO_LOAD = {5, 9, 10, 25, 26, 30, 37, 38, 63, 64, 65, 68, 71, 81, 86, 87, 89, 111, 116}

TOTAL_P = 4242.0
TOTAL_Q = 1438.0


def build_case_text() -> str:
    rng = np.random.default_rng(118)
    lines = LINES
    assert len(lines) == 177, len(lines)
    branches = [(f, t, False) for f, t in lines] + [(f, t, True) for f, t in TRANSFORMERS]
    assert len(branches) == 186

    buses = sorted({b for f, t, _ in branches for b in (f, t)})
    assert buses == list(range(1, 119)), "topology must cover buses 1..118"

    load_buses = [b for b in buses if b not in NO_LOAD]
    assert len(load_buses) == 99

    weights = rng.lognormal(mean=0.0, sigma=0.55, size=len(load_buses))
    weights = np.minimum(weights, np.quantile(weights, 0.93))
    pd = np.round(TOTAL_P * weights / weights.sum(), 1)
    pd[np.argmax(pd)] += np.round(TOTAL_P - pd.sum(), 1)
    pf = rng.uniform(0.93, 0.985, size=len(load_buses))
    qd = np.round(pd * np.tan(np.arccos(pf)), 1)
    qd[np.argmax(qd)] += np.round(TOTAL_Q - qd.sum(), 1)
    loads = dict(zip(load_buses, zip(pd, qd)))

    gen_rows = []
    for bus in sorted(set(DISPATCH) | set(CONDENSERS)):
        vg = round(float(rng.uniform(1.0, 1.045)), 3)
        if bus in DISPATCH:
            pg = DISPATCH[bus]
            pmax = max(np.ceil(1.25 * pg / 10.0) * 10.0, pg + 30.0)
            qmax = max(np.ceil(0.55 * pmax / 10.0) * 10.0, 40.0)
            qmin = -np.ceil(0.6 * qmax / 10.0) * 10.0
            gen_rows.append((bus, pg, 0.0, qmax, qmin, vg, pmax))
        if bus in CONDENSERS:
            qmax = float(rng.choice([30.0, 50.0, 60.0, 80.0]))
            gen_rows.append((bus, 0.0, 0.0, qmax, -qmax, vg, 0.0))
    assert len(gen_rows) == 54, len(gen_rows)

    branch_rows = []
    for f, t, is_xfmr in branches:
        if is_xfmr:
            x = round(float(rng.uniform(0.02, 0.045)), 4)
            r = round(x / 40.0, 5)
            b = 0.0
            tap = round(float(rng.uniform(0.97, 1.03)), 3)
        elif f in BACKBONE and t in BACKBONE:
            x = round(float(rng.uniform(0.02, 0.06)), 4)
            r = round(x / 10.0, 5)
            b = round(x * 2.5, 4)
            tap = 0.0
        else:
            x = round(float(rng.uniform(0.02, 0.09)), 4)
            r = round(x * float(rng.uniform(0.22, 0.30)), 5)
            b = round(x * 0.35, 4)
            tap = 0.0
        branch_rows.append([f, t, r, x, b, 0.0, 0.0, 0.0, tap, 0.0, 1])

    def emit(rates=None) -> str:
        out = ["function mpc = case118"]
        out.append("% 118-bus transmission test case.")
        out.append("%")
        out.append("% Deterministic reconstruction of the 118-bus system: true topology")
        out.append("% skeleton and unit placement with synthetic per-element parameters")
        out.append("% calibrated to the published aggregates (4242 MW / 1438 Mvar over 99")
        out.append("% load buses; 177 lines + 9 transformers; 54 units). Generated by")
        out.append("% tools/make_case118.py; regenerate rather than editing by hand.")
        out.append("mpc.version = '2';")
        out.append("mpc.baseMVA = 100;")
        out.append("")
        out.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin")
        out.append("mpc.bus = [")
        for b in buses:
            p, q = loads.get(b, (0.0, 0.0))
            if b == 69:
                kind = 3
            elif any(g[0] == b for g in gen_rows):
                kind = 2
            else:
                kind = 1
            kv = 345 if b in BACKBONE else 138
            out.append(f"\t{b}\t{kind}\t{p}\t{q}\t0\t0\t1\t1.0\t0\t{kv}\t1\t1.06\t0.94;")
        out.append("];")
        out.append("")
        out.append("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin")
        out.append("mpc.gen = [")
        for bus, pg, qg, qmax, qmin, vg, pmax in gen_rows:
            out.append(f"\t{bus}\t{pg}\t{qg}\t{qmax}\t{qmin}\t{vg}\t100\t1\t{pmax}\t0;")
        out.append("];")
        out.append("")
        out.append("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus")
        out.append("mpc.branch = [")
        for k, row in enumerate(branch_rows):
            f, t, r, x, b, ra, rb, rc, tap, ang, st = row
            if rates is not None:
                ra, rb, rc = rates[k]
            out.append(f"\t{f}\t{t}\t{r}\t{x}\t{b}\t{ra}\t{rb}\t{rc}\t{tap}\t{ang}\t{st};")
        out.append("];")
        out.append("")
        return "\n".join(out)

    # first pass without ratings: solve, add shunt support where the profile
    # sags, then rate branches from the compensated base-case flows
    shunts: dict[int, float] = {}
    for round_ in range(8):
        net = parse_case(emit())
        inj = base_injections(net)
        state = solve_power_flow(net, inj, PfOptions(tolerance=1e-10, max_iterations=30))
        vm = state.voltage_magnitudes
        low = [(net.buses[k].id, v) for k, v in enumerate(vm) if v < 0.97]
        if not low:
            break
        for bus, v in low:
            shunts[bus] = shunts.get(bus, 0.0) + (25.0 if v < 0.95 else 12.0)
        bs_line = {b: s for b, s in shunts.items()}
        # rebuild bus rows with the accumulated shunt values

        def emit_with_shunts(rates=None, _base_emit=emit):
            text = _base_emit(rates)
            out = []
            for line in text.splitlines():
                parts = line.split("\t")
                if len(parts) == 14 and parts[0] == "" and parts[1].isdigit():
                    bus = int(parts[1])
                    if bus in bs_line and parts[13].endswith(";"):
                        parts[6] = str(bs_line[bus])
                        line = "\t".join(parts)
                out.append(line)
            return "\n".join(out)

        emit = emit_with_shunts
    _, _, loading = branch_flows(net, state)
    print(f"base case: {state.iterations} iterations, mismatch {state.max_mismatch:.2e}, "
          f"{len(shunts)} compensated bus(es)")
    print(f"voltages: {state.voltage_magnitudes.min():.4f} .. {state.voltage_magnitudes.max():.4f}")
    rates = []
    for k, row in enumerate(branch_rows):
        f, t = row[0], row[1]
        backbone = f in BACKBONE and t in BACKBONE or row[8] != 0.0
        floor = 150.0 if backbone else 60.0
        ra = max(floor, float(np.ceil(loading[k] * 100.0 * 1.6 / 10.0) * 10.0))
        rc = float(np.ceil(ra * 1.25 / 5.0) * 5.0)
        rates.append((ra, ra, rc))
    return emit(rates)


def main():
    text = build_case_text()
    dest = Path(__file__).resolve().parent.parent / "src" / "patc" / "data" / "case118.m"
    dest.write_text(text)
    print(f"wrote {dest}")
    net = parse_case(text)
    state = solve_power_flow(net, base_injections(net), PfOptions(tolerance=1e-10, max_iterations=30))
    print(f"reparsed: {net.n_bus} buses, {len(net.branches)} branches, {len(net.generators)} gens; "
          f"converged={state.converged} V in [{state.voltage_magnitudes.min():.4f}, "
          f"{state.voltage_magnitudes.max():.4f}]")


if __name__ == "__main__":
    main()
