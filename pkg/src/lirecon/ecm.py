"""Two-sub-cell equivalent circuit with a lateral bridge resistor.

Topology: nodes {positive terminal, mid-node 1, mid-node 2, negative
terminal}. Sub-cell k has a cathode branch (source U+_k in series with R_k)
from the positive terminal to mid-node k and an anode branch (source U-_k in
series with R_k) from mid-node k to the negative terminal. R_e joins the two
mid-nodes.

Sign convention: terminal current > 0 is discharge, and every branch
current is positive in the discharge direction (anode -> mid-node ->
cathode). Mid-node potentials are referenced to the negative terminal.
``i_bridge`` is the lithium-equivalent current *into* sub-cell 1, so
``dN1/dt = i_bridge / 3600`` (Ah/s); the electrical current flowing from
mid-node 1 to mid-node 2 is ``-i_bridge``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .ocp import ElectrodeCurve, default_graphite, default_lfp


class EcmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EcmParameters:
    """Circuit constants, electrode capacities and OCP curves.

    ``r2_branch`` is the per-electrode branch resistance of sub-cell 2 (ohm);
    sub-cell 1 uses ``k * r2_branch`` and the bridge ``ke * r2_branch``.
    ``q_max_neg`` is the whole-cell negative capacity (Ah), split equally
    between sub-cells; ``r_np`` is the negative/positive capacity ratio.
    """

    r2_branch: float
    k: float
    ke: float
    q_max_neg: float
    r_np: float
    ocp_neg: ElectrodeCurve
    ocp_pos: ElectrodeCurve
    z0: tuple = (0.5, 0.5, 0.5, 0.5)

    def __post_init__(self):
        for name in ("r2_branch", "ke", "q_max_neg", "r_np"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise EcmError(f"{name} must be positive and finite, got {value}")
        if not np.isfinite(self.k) or self.k < 1:
            raise EcmError(f"k must be >= 1 (sub-cell 1 is the resistive branch), got {self.k}")
        z0 = tuple(float(z) for z in self.z0)
        if len(z0) != 4 or not all(0.0 <= z <= 1.0 for z in z0):
            raise EcmError(f"z0 must hold four stoichiometries in [0, 1], got {self.z0}")
        object.__setattr__(self, "z0", z0)

    @property
    def r1_branch(self):
        return self.k * self.r2_branch

    @property
    def r_bridge(self):
        return self.ke * self.r2_branch

    @property
    def r0(self):
        """Effective series resistance of the two sub-cells in parallel."""
        return 2.0 * self.k / (self.k + 1.0) * self.r2_branch

    @property
    def q_neg_sub(self):
        return self.q_max_neg / 2.0

    @property
    def q_pos_sub(self):
        return self.q_max_neg / (2.0 * self.r_np)

    def kernel_vector(self):
        return np.array(
            [self.r1_branch, self.r2_branch, self.r_bridge, self.q_neg_sub, self.q_pos_sub]
        )

    def initial_state(self):
        return EcmState(self.z0, 0.0)

    def with_values(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class EcmState:
    """Stoichiometries ``(z1-, z1+, z2-, z2+)`` at time ``t`` (s)."""

    z: tuple
    t: float = 0.0

    def __post_init__(self):
        z = tuple(float(v) for v in self.z)
        if len(z) != 4:
            raise EcmError("state needs four stoichiometries")
        if not all(np.isfinite(z)) or not np.isfinite(self.t):
            raise EcmError(f"non-finite state {z} at t={self.t}")
        if not all(0.0 <= v <= 1.0 for v in z):
            raise EcmError(f"stoichiometry outside [0, 1]: {z}")
        object.__setattr__(self, "z", z)

    def as_array(self):
        return np.array(self.z)


@dataclass(frozen=True)
class NetworkSolution:
    i_pos: tuple  # cathode-branch currents (i1, i2), A
    i_neg: tuple  # anode-branch currents (j1, j2), A
    i_bridge: float  # lithium-equivalent current into sub-cell 1, A
    v_terminal: float
    phi_mid: tuple  # mid-node potentials vs negative terminal, V
    current: float = field(default=0.0)  # terminal current (i1 + i2), A


def electrode_potentials(params: EcmParameters, state: EcmState):
    """Return ``(U-_1, U+_1, U-_2, U+_2)``."""
    z1n, z1p, z2n, z2p = state.z
    return (
        float(params.ocp_neg(z1n)),
        float(params.ocp_pos(z1p)),
        float(params.ocp_neg(z2n)),
        float(params.ocp_pos(z2p)),
    )


def subcell_ocv(params: EcmParameters, state: EcmState):
    un1, up1, un2, up2 = electrode_potentials(params, state)
    return up1 - un1, up2 - un2


def solve_network(
    params: EcmParameters,
    state: EcmState,
    current: Optional[float] = None,
    voltage: Optional[float] = None,
) -> NetworkSolution:
    """Solve the resistor network with the OCP sources frozen at ``state``.

    Exactly one of ``current`` (terminal current, discharge positive) or
    ``voltage`` (imposed terminal voltage) must be given.
    """
    if (current is None) == (voltage is None):
        raise EcmError("give exactly one of current= or voltage=")
    value = current if current is not None else voltage
    if not np.isfinite(value):
        raise EcmError(f"constraint value must be finite, got {value}")
    pots = electrode_potentials(params, state)
    if not all(np.isfinite(pots)):
        raise EcmError(f"OCP evaluation returned NaN at z={state.z}")
    mode = _kernels.MODE_CURRENT if current is not None else _kernels.MODE_VOLTAGE
    i1, i2, j1, j2, ie, v, phi1, phi2, cur = _kernels.network(
        *pots, params.r1_branch, params.r2_branch, params.r_bridge, mode, float(value)
    )
    return NetworkSolution((i1, i2), (j1, j2), ie, v, (phi1, phi2), cur)


def state_derivative(params: EcmParameters, state: EcmState, sol: NetworkSolution):
    """Stoichiometry rates (1/s) from coulomb counting on every electrode."""
    qn = 3600.0 * params.q_neg_sub
    qp = 3600.0 * params.q_pos_sub
    i1, i2 = sol.i_pos
    j1, j2 = sol.i_neg
    return np.array([-j1 / qn, i1 / qp, -j2 / qn, i2 / qp])


def subcell_lithium(params: EcmParameters, state: EcmState):
    """Lithium held by each sub-cell and in total, in Ah."""
    z1n, z1p, z2n, z2p = state.z
    n1 = z1n * params.q_neg_sub + z1p * params.q_pos_sub
    n2 = z2n * params.q_neg_sub + z2p * params.q_pos_sub
    return n1, n2, n1 + n2


def kcl_residuals(params: EcmParameters, state: EcmState, sol: NetworkSolution):
    """Kirchhoff residuals of a solution (all zero for an exact solve)."""
    un1, up1, un2, up2 = electrode_potentials(params, state)
    r1, r2, re = params.r1_branch, params.r2_branch, params.r_bridge
    (i1, i2), (j1, j2) = sol.i_pos, sol.i_neg
    phi1, phi2 = sol.phi_mid
    v = sol.v_terminal
    return np.array(
        [
            phi1 - (-un1 - r1 * j1),
            phi2 - (-un2 - r2 * j2),
            v - (phi1 + up1 - r1 * i1),
            v - (phi2 + up2 - r2 * i2),
            (i1 - j1) - sol.i_bridge,
            (j2 - i2) - sol.i_bridge,
            re * sol.i_bridge - (phi2 - phi1),
            (i1 + i2) - sol.current,
            (j1 + j2) - sol.current,
        ]
    )


# Fitted LFP/graphite 18650 values. R2 is R_e / k_e = 44514.26 mOhm / 505,
# which 88.15 mOhm rounds; it gives R0 = 111 mOhm exactly.
REFERENCE_FIT = dict(
    r2_branch=44.51426 / 505.0,
    k=1.7,
    ke=505.0,
    q_max_neg=1.227,
    r_np=1.064,
    z0=(0.001, 0.752, 0.104, 0.983),
)


def reference_parameters(ocp_neg=None, ocp_pos=None) -> EcmParameters:
    return EcmParameters(
        ocp_neg=ocp_neg if ocp_neg is not None else default_graphite(),
        ocp_pos=ocp_pos if ocp_pos is not None else default_lfp(),
        **REFERENCE_FIT,
    )


def symmetric_state(params: EcmParameters, z_neg: float, z_pos: float, t=0.0):
    return EcmState((z_neg, z_pos, z_neg, z_pos), t)


def params_from_vector(x: Sequence[float], ocp_neg, ocp_pos) -> EcmParameters:
    """Build parameters from the nine-entry fit vector
    ``[r2, k, ke, q_max_neg, r_np, z1-, z1+, z2-, z2+]``."""
    x = [float(v) for v in x]
    return EcmParameters(
        r2_branch=x[0], k=x[1], ke=x[2], q_max_neg=x[3], r_np=x[4],
        ocp_neg=ocp_neg, ocp_pos=ocp_pos, z0=tuple(x[5:9]),
    )


def params_to_vector(params: EcmParameters):
    return np.array(
        [params.r2_branch, params.k, params.ke, params.q_max_neg, params.r_np, *params.z0]
    )
