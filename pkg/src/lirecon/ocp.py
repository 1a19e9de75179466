"""Electrode open-circuit potential tables."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

NEGATIVE = "negative"
POSITIVE = "positive"


class OcpTableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ElectrodeCurve:
    """Tabulated electrode potential vs stoichiometry.

    Potentials must be non-increasing in ``z`` for both electrodes (a more
    lithiated electrode sits at lower potential vs Li/Li+). Evaluation clamps
    to the table's endpoints instead of extrapolating.
    """

    z: np.ndarray
    potential: np.ndarray
    electrode_kind: str = NEGATIVE

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float)
        u = np.ascontiguousarray(self.potential, dtype=float)
        if z.ndim != 1 or z.shape != u.shape:
            raise OcpTableError("z and potential must be 1-D arrays of equal length")
        if z.size < 2:
            raise OcpTableError("an OCP table needs at least 2 samples")
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(u)):
            raise OcpTableError("OCP table contains non-finite values")
        if np.any(np.diff(z) <= 0):
            raise OcpTableError("z samples must be strictly increasing")
        if np.any(np.diff(u) > 0):
            raise OcpTableError("potential must be non-increasing in z")
        if self.electrode_kind not in (NEGATIVE, POSITIVE):
            raise OcpTableError(f"unknown electrode kind {self.electrode_kind!r}")
        z.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "potential", u)

    def __call__(self, z):
        return np.interp(z, self.z, self.potential)

    @property
    def z_range(self):
        return float(self.z[0]), float(self.z[-1])


def read_ocp_table(path, electrode_kind=NEGATIVE) -> ElectrodeCurve:
    """Read a ``z<TAB>potential`` table; ``#`` starts a comment."""
    zs, us = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise OcpTableError(f"{path}:{lineno}: expected 'z<TAB>potential'")
            try:
                zs.append(float(parts[0]))
                us.append(float(parts[1]))
            except ValueError as exc:
                raise OcpTableError(f"{path}:{lineno}: {exc}") from None
    return ElectrodeCurve(np.array(zs), np.array(us), electrode_kind)


def write_ocp_table(curve: ElectrodeCurve, path, comment=None):
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for z, u in zip(curve.z, curve.potential):
            fh.write(f"{float(z)!r}\t{float(u)!r}\n")


def packaged_table(name) -> Path:
    return Path(str(resources.files("lirecon") / "data" / name))


def default_graphite() -> ElectrodeCurve:
    return read_ocp_table(packaged_table("graphite_mcmb.ocp"), NEGATIVE)


def default_lfp() -> ElectrodeCurve:
    return read_ocp_table(packaged_table("lfp.ocp"), POSITIVE)
