"""Cycling / checkup / hold protocols and their text format.

One step per line inside ``repeat <n> ... end`` blocks::

    repeat 2
    cc_charge current=0.3 cutoff_v=3.6 label=checkup_charge
    rest duration_s=120
    cc_discharge current=0.3 cutoff_v=2.0
    rest duration_s=120
    end

``cv_hold`` takes its target from ``cutoff_v`` (``voltage`` is accepted as an
alias). ``#`` starts a comment.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

CC_CHARGE = "cc_charge"
CC_DISCHARGE = "cc_discharge"
CV_HOLD = "cv_hold"
REST = "rest"
KINDS = (CC_CHARGE, CC_DISCHARGE, CV_HOLD, REST)


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolStep:
    kind: str
    current: float = 0.0
    voltage: Optional[float] = None
    duration: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown step kind {self.kind!r}")
        if self.kind in (CC_CHARGE, CC_DISCHARGE):
            if not self.current > 0:
                raise ProtocolError(f"{self.kind} needs a positive current")
            if self.voltage is None:
                raise ProtocolError(f"{self.kind} needs a voltage cutoff (cutoff_v=)")
            if self.duration is not None and not self.duration > 0:
                raise ProtocolError("duration must be positive")
        else:
            if self.duration is None or not self.duration > 0:
                raise ProtocolError(f"{self.kind} needs a positive duration_s")
            if self.kind == CV_HOLD and self.voltage is None:
                raise ProtocolError("cv_hold needs a target voltage (cutoff_v=)")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @property
    def signed_current(self):
        """Terminal current with discharge positive."""
        if self.kind == CC_DISCHARGE:
            return self.current
        if self.kind == CC_CHARGE:
            return -self.current
        return 0.0


@dataclass(frozen=True)
class ProtocolBlock:
    steps: tuple
    repetitions: int = 1

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ProtocolError("a block needs at least one step")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ProtocolError(f"repetitions must be a positive integer, got {self.repetitions}")


@dataclass(frozen=True)
class Protocol:
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ProtocolError("a protocol needs at least one block")

    @classmethod
    def single(cls, *steps, repetitions=1):
        return cls((ProtocolBlock(tuple(steps), repetitions),))

    def replace_step(self, predicate, factory):
        """New protocol with every step matching ``predicate`` rebuilt by ``factory``."""
        blocks = []
        for block in self.blocks:
            steps = tuple(factory(s) if predicate(s) else s for s in block.steps)
            blocks.append(ProtocolBlock(steps, block.repetitions))
        return Protocol(tuple(blocks))


_KEYS = {
    "current": "current",
    "cutoff_v": "voltage",
    "voltage": "voltage",
    "duration_s": "duration",
    "label": "label",
}


def _parse_step(tokens, where):
    kind = tokens[0]
    if kind not in KINDS:
        raise ProtocolError(f"{where}: unknown step kind {kind!r}")
    kwargs = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ProtocolError(f"{where}: expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        if key not in _KEYS:
            raise ProtocolError(f"{where}: unknown key {key!r}")
        if key == "label":
            kwargs["label"] = val
        else:
            try:
                kwargs[_KEYS[key]] = float(val)
            except ValueError:
                raise ProtocolError(f"{where}: {key} is not a number: {val!r}") from None
    try:
        return ProtocolStep(kind, **kwargs)
    except ProtocolError as exc:
        raise ProtocolError(f"{where}: {exc}") from None


def parse_protocol_text(text, source="<protocol>") -> Protocol:
    blocks = []
    current = None
    reps = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        tokens = shlex.split(line)
        head = tokens[0]
        if head == "repeat":
            if current is not None:
                raise ProtocolError(f"{where}: nested repeat blocks are not supported")
            if len(tokens) != 2:
                raise ProtocolError(f"{where}: expected 'repeat <n>'")
            try:
                reps = int(tokens[1])
            except ValueError:
                raise ProtocolError(f"{where}: bad repetition count {tokens[1]!r}") from None
            if reps < 1:
                raise ProtocolError(f"{where}: repetition count must be >= 1")
            current = []
        elif head == "end":
            if current is None:
                raise ProtocolError(f"{where}: 'end' without 'repeat'")
            if not current:
                raise ProtocolError(f"{where}: empty repeat block")
            blocks.append(ProtocolBlock(tuple(current), reps))
            current = None
        else:
            step = _parse_step(tokens, where)
            if current is None:
                # bare steps outside a block form a single-repetition block
                blocks.append(ProtocolBlock((step,), 1))
            else:
                current.append(step)
    if current is not None:
        raise ProtocolError(f"{source}: unterminated repeat block")
    if not blocks:
        raise ProtocolError(f"{source}: no steps")
    return Protocol(tuple(blocks))


def parse_protocol_file(path) -> Protocol:
    path = Path(path)
    return parse_protocol_text(path.read_text(), str(path))


def format_protocol(protocol: Protocol) -> str:
    lines = []
    for block in protocol.blocks:
        lines.append(f"repeat {block.repetitions}")
        for s in block.steps:
            parts = [s.kind]
            if s.kind in (CC_CHARGE, CC_DISCHARGE):
                parts.append(f"current={s.current!r}")
            if s.voltage is not None:
                parts.append(f"cutoff_v={s.voltage!r}")
            if s.duration is not None:
                parts.append(f"duration_s={s.duration!r}")
            parts.append(f"label={shlex.quote(s.label)}")
            lines.append(" ".join(parts))
        lines.append("end")
    return "\n".join(lines) + "\n"


def reconditioning_protocol() -> Protocol:
    """The shipped 919-cycle aging + checkup + reconditioning chain."""
    path = resources.files("lirecon") / "data" / "reconditioning.protocol"
    return parse_protocol_text(path.read_text(), "reconditioning.protocol")


def holds_as_rest(protocol: Protocol) -> Protocol:
    """Replace every voltage hold by an open-circuit rest of equal length."""
    return protocol.replace_step(
        lambda s: s.kind == CV_HOLD,
        lambda s: ProtocolStep(REST, duration=s.duration, label=s.label + "_as_rest"),
    )
