"""ECM parameter files and run manifests."""
from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path

from .ecm import REFERENCE_FIT, EcmError, EcmParameters
from .ocp import NEGATIVE, POSITIVE, default_graphite, default_lfp, read_ocp_table

PARAM_KEYS = ("r2_branch", "k", "ke", "q_max_neg", "r_np", "z0")
MANIFEST = "manifest.json"


class ParamsFileError(ValueError):
    pass


def read_params_file(path) -> EcmParameters:
    """INI ``[ecm]`` section with ``r2_branch`` (ohm), ``k``, ``ke``,
    ``q_max_neg`` (Ah), ``r_np``, ``z0`` (four numbers) and optional
    ``ocp_neg`` / ``ocp_pos`` table paths (relative to the file). Missing
    constants take the reference-fit values."""
    path = Path(path)
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ParamsFileError(f"cannot read params file {path}")
    if "ecm" not in cp:
        raise ParamsFileError(f"{path}: missing [ecm] section")
    sec = cp["ecm"]
    unknown = set(sec) - set(PARAM_KEYS) - {"ocp_neg", "ocp_pos"}
    if unknown:
        raise ParamsFileError(f"{path}: unknown keys {sorted(unknown)}")
    values = dict(REFERENCE_FIT)
    try:
        for key in PARAM_KEYS[:-1]:
            if key in sec:
                values[key] = float(sec[key])
        if "z0" in sec:
            values["z0"] = tuple(float(v) for v in sec["z0"].replace(",", " ").split())
    except ValueError as exc:
        raise ParamsFileError(f"{path}: {exc}") from None
    neg = read_ocp_table(path.parent / sec["ocp_neg"], NEGATIVE) if "ocp_neg" in sec \
        else default_graphite()
    pos = read_ocp_table(path.parent / sec["ocp_pos"], POSITIVE) if "ocp_pos" in sec \
        else default_lfp()
    try:
        return EcmParameters(ocp_neg=neg, ocp_pos=pos, **values)
    except EcmError as exc:
        raise ParamsFileError(f"{path}: {exc}") from None


def write_params_file(params: EcmParameters, path, ocp_neg=None, ocp_pos=None):
    cp = configparser.ConfigParser()
    sec = {k: repr(float(getattr(params, k))) for k in PARAM_KEYS[:-1]}
    sec["z0"] = " ".join(repr(z) for z in params.z0)
    if ocp_neg is not None:
        sec["ocp_neg"] = str(ocp_neg)
    if ocp_pos is not None:
        sec["ocp_pos"] = str(ocp_pos)
    cp["ecm"] = sec
    with open(path, "w") as fh:
        cp.write(fh)


def file_digest(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir, command: str, args: dict, inputs: dict, version: str):
    """``manifest.json``: subcommand, arguments (without the output
    directory), input digests and toolkit version. No timestamps, so
    reruns reproduce it byte for byte."""
    doc = {
        "command": command,
        "args": args,
        "inputs": {k: {"path": str(v), "sha256": file_digest(v)} for k, v in sorted(inputs.items())},
        "version": version,
    }
    Path(out_dir, MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def read_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParamsFileError(f"cannot read manifest {path}: {exc}") from None
    for key in ("command", "args", "version"):
        if key not in doc:
            raise ParamsFileError(f"{path}: manifest lacks {key!r}")
    return doc
