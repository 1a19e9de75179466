"""Simulate the shipped reconditioning chain with the reference parameters
and print checkup capacities and the sub-cell imbalance around each hold.

    python scripts/run_chain.py [--rest]

``--rest`` replaces every voltage hold by an open-circuit rest.
"""
import argparse
import time

import numpy as np

from lirecon.ecm import reference_parameters
from lirecon.protocol import holds_as_rest, reconditioning_protocol
from lirecon.simulate import extract_cycle_capacities, run_protocol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rest", action="store_true")
    a = ap.parse_args()
    p = reference_parameters()
    proto = reconditioning_protocol()
    if a.rest:
        proto = holds_as_rest(proto)
    t0 = time.perf_counter()
    tr = run_protocol(p, p.initial_state(), proto, max_repetitions=3)
    print(f"{len(tr)} rows in {time.perf_counter() - t0:.1f} s")
    for c, cap in sorted(extract_cycle_capacities(tr).items()):
        print(f"cycle {c}: charge {cap.charge_ah}  discharge {cap.discharge_ah}")
    for label in np.unique(tr.step_label):
        if not label.startswith("hold_") or label.endswith(("_charge", "_discharge", "_rest")):
            continue
        idx = np.nonzero(tr.step_label == label)[0]
        a0, b0 = idx[0] - 1, idx[-1]
        print(f"{label}: |N1-N2| {abs(tr.n1[a0] - tr.n2[a0]):.4g} -> "
              f"{abs(tr.n1[b0] - tr.n2[b0]):.4g} Ah, final |i_e| {abs(tr.i_e[b0]):.3g} A")
    total = tr.total_lithium
    print(f"max lithium drift {np.max(np.abs(total - total[0])):.3g} Ah")


if __name__ == "__main__":
    main()
