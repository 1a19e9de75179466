import pytest
from hypothesis import given, strategies as st

from lirecon.protocol import (
    CC_CHARGE, CC_DISCHARGE, CV_HOLD, REST, Protocol, ProtocolBlock, ProtocolError,
    ProtocolStep, format_protocol, holds_as_rest, parse_protocol_file, parse_protocol_text,
    reconditioning_protocol,
)


def test_one_line_rest():
    p = parse_protocol_text("rest duration_s=60\n")
    assert len(p.blocks) == 1
    assert p.blocks[0].repetitions == 1
    assert p.blocks[0].steps[0] == ProtocolStep(REST, duration=60.0)


def test_shipped_chain():
    p = reconditioning_protocol()
    assert [b.repetitions for b in p.blocks] == [919, 2, 1, 1, 2]
    cyc = p.blocks[0].steps
    assert cyc[0] == ProtocolStep(CC_CHARGE, 1.0, 4.0, None, "cycle_charge")
    assert cyc[2] == ProtocolStep(CC_DISCHARGE, 1.0, 2.5, None, "cycle_discharge")
    holds = [s for b in p.blocks for s in b.steps if s.kind == CV_HOLD]
    assert [(s.voltage, s.duration) for s in holds] == [(3.6, 259200.0), (2.0, 259200.0)]
    post_rest = p.blocks[4].steps[1]
    assert post_rest.duration == 600.0


@pytest.mark.parametrize("text, match", [
    ("repeat 0\nrest duration_s=1\nend\n", "repetition"),
    ("cc_charge current=1\n", "cutoff"),
    ("charge current=1 cutoff_v=4\n", "unknown step kind"),
    ("repeat 2\nrest duration_s=1\n", "unterminated"),
    ("end\n", "without"),
    ("rest duration_s=abc\n", "not a number"),
    ("rest\n", "duration"),
    ("cc_discharge current=-1 cutoff_v=2\n", "positive current"),
    ("# only a comment\n", "no steps"),
])
def test_parse_errors(text, match):
    with pytest.raises(ProtocolError, match=match):
        parse_protocol_text(text)


def test_error_names_line():
    with pytest.raises(ProtocolError, match=":3:"):
        parse_protocol_text("repeat 1\nrest duration_s=1\nbogus x=1\nend\n")


def test_voltage_alias_and_label_default():
    p = parse_protocol_text("cv_hold voltage=3.6 duration_s=10\n")
    s = p.blocks[0].steps[0]
    assert s.voltage == 3.6 and s.label == CV_HOLD


def test_signed_current():
    assert ProtocolStep(CC_DISCHARGE, 2.0, 2.0).signed_current == 2.0
    assert ProtocolStep(CC_CHARGE, 2.0, 4.0).signed_current == -2.0
    assert ProtocolStep(REST, duration=1.0).signed_current == 0.0


def test_holds_as_rest():
    p = holds_as_rest(reconditioning_protocol())
    kinds = [s.kind for b in p.blocks for s in b.steps]
    assert CV_HOLD not in kinds
    replaced = [s for s in p.blocks[2].steps if s.label.endswith("_as_rest")]
    assert replaced[0].duration == 259200.0


def test_file_round_trip(tmp_path):
    p = reconditioning_protocol()
    path = tmp_path / "chain.protocol"
    path.write_text(format_protocol(p))
    assert parse_protocol_file(path) == p


steps = st.one_of(
    st.builds(ProtocolStep, st.just(CC_CHARGE), st.floats(0.01, 5), st.floats(2, 4.2),
              st.one_of(st.none(), st.floats(1, 1e5)), st.sampled_from(["a", "chg", "x y"])),
    st.builds(ProtocolStep, st.just(CV_HOLD), st.just(0.0), st.floats(2, 4),
              st.floats(1, 1e6), st.sampled_from(["hold", ""])),
    st.builds(ProtocolStep, st.just(REST), st.just(0.0), st.none(), st.floats(1, 1e4)),
)


@given(st.lists(st.builds(ProtocolBlock, st.lists(steps, min_size=1, max_size=4),
                          st.integers(1, 1000)), min_size=1, max_size=4))
def test_format_parse_round_trip(blocks):
    p = Protocol(tuple(blocks))
    assert parse_protocol_text(format_protocol(p)) == p
