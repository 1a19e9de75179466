"""Regenerate the shipped electrode OCP tables.

Graphite follows the MCMB expression of Doyle et al. (as reproduced in Plett's
battery-modeling text); LFP follows the Prada et al. expression. Both get
exponential saturation barriers at the stoichiometry limits so that a
sub-cell pinned against a full or empty electrode stops accepting current
before the stoichiometry leaves [0, 1].

    python scripts/make_ocp_tables.py
"""
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "lirecon" / "data"


def graphite(x):
    u = (
        0.194
        + 1.5 * np.exp(-120.0 * x)
        + 0.0351 * np.tanh((x - 0.286) / 0.083)
        - 0.0045 * np.tanh((x - 0.849) / 0.119)
        - 0.035 * np.tanh((x - 0.9233) / 0.05)
        - 0.0147 * np.tanh((x - 0.5) / 0.034)
        - 0.102 * np.tanh((x - 0.194) / 0.142)
        - 0.022 * np.tanh((x - 0.9) / 0.0164)
        - 0.011 * np.tanh((x - 0.124) / 0.0226)
        + 0.0155 * np.tanh((x - 0.105) / 0.029)
    )
    # saturation barrier (fully lithiated graphite)
    return u - 1.0 * np.exp(-(1.0 - x) / 0.006)


def lfp(y):
    u = 3.4077 - 0.020269 * y + 0.5 * np.exp(-150.0 * y) - 0.9 * np.exp(-30.0 * (1.0 - y))
    # saturation barriers (empty / full olivine)
    return u + 0.8 * np.exp(-y / 0.006) - 1.0 * np.exp(-(1.0 - y) / 0.006)


def grid(n_core=801, n_edge=200, edge=0.05):
    # refined near both ends, where the barriers live
    lo = np.linspace(0.0, edge, n_edge, endpoint=False)
    mid = np.linspace(edge, 1.0 - edge, n_core, endpoint=False)
    hi = np.linspace(1.0 - edge, 1.0, n_edge + 1)
    return np.concatenate([lo, mid, hi])


def write(path, z, u, header):
    # enforce the non-increasing convention exactly
    u = np.minimum.accumulate(u)
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for zi, ui in zip(z, u):
            fh.write(f"{zi:.6f}\t{ui:.6f}\n")


if __name__ == "__main__":
    z = grid()
    write(
        DATA / "graphite_mcmb.ocp",
        z,
        graphite(z),
        [
            "graphite (MCMB) open-circuit potential vs Li/Li+",
            "columns: stoichiometry z (0 = empty, 1 = fully lithiated), potential [V]",
            "MCMB staircase (Doyle) plus a saturation barrier for z -> 1",
        ],
    )
    write(
        DATA / "lfp.ocp",
        z,
        lfp(z),
        [
            "LiFePO4 open-circuit potential vs Li/Li+",
            "columns: stoichiometry z (0 = delithiated, 1 = fully lithiated), potential [V]",
            "Prada plateau plus saturation barriers at both ends",
        ],
    )
