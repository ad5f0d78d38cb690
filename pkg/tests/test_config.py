import copy
import json

import numpy as np
import pytest

from droopstab.config import (
    ConfigError,
    apply_overrides,
    config_hash,
    load_config,
    load_slopes,
    parse_config,
    reference_path,
    serialize,
    validate,
)
from droopstab.units import UnitError, parse_unit, to_si


@pytest.fixture(scope="module")
def raw_doc():
    return json.loads(reference_path().read_text())


@pytest.mark.parametrize(
    "unit, factor, dim",
    [
        ("mH/km", 1e-6, "H/m"),
        ("uF/km", 1e-9, "F/m"),
        ("ohm/km", 1e-3, "ohm/m"),
        ("MW/kV", 1e3, "W/V"),
        ("kV", 1e3, "V"),
        ("m", 1.0, "m"),
        ("mm", 1e-3, "m"),
        ("Mvar", 1e6, "var"),
    ],
)
def test_parse_unit(unit, factor, dim):
    f, d = parse_unit(unit)
    assert f == pytest.approx(factor)
    assert d == dim


def test_to_si_frequency_alias():
    assert to_si(50, "Hz", "rad/s") == pytest.approx(2 * np.pi * 50)


@pytest.mark.parametrize("unit", ["furlong", "mH/km/s", "kV"])
def test_to_si_rejects(unit):
    with pytest.raises(UnitError):
        to_si(1.0, unit, "H/m")


def test_reference_parses_to_si(ref_config):
    assert ref_config.n_nodes == 14
    assert ref_config.n_lines == 20
    assert ref_config.droop_nodes == ("1", "2", "3", "6", "8")
    ln = ref_config.lines[0]
    assert ln.l_per_m == pytest.approx(0.9337e-6)
    assert ln.c_per_m == pytest.approx(0.01274e-9)
    assert ln.inductance == pytest.approx(ln.l_per_m * ln.length)
    conv = ref_config.converters[0]
    assert conv.c_sm / conv.n_sm > 0
    assert conv.droop is not None and conv.droop.k > 0


def test_validate_reports_state_dim(ref_config):
    v = validate(ref_config)
    assert v.state_dim == 270
    assert v.n_nodes == 14


def test_serialize_roundtrip(ref_config):
    again = parse_config(serialize(ref_config))
    assert again == ref_config
    assert config_hash(again) == config_hash(ref_config)


def test_comment_keys_ignored(raw_doc):
    doc = copy.deepcopy(raw_doc)
    doc["_note"] = "anything"
    doc["lines"][0]["_why"] = 3
    parse_config(doc)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.pop("lines"), "lines"),
        (lambda d: d["lines"][0].update(to="99"), "lines[0].to"),
        (lambda d: d["lines"][0].update(length={"value": 1, "unit": "H"}), "lines[0].length"),
        (lambda d: d["converters"][0].update(bogus=1), "converters[0]"),
        (lambda d: d["converters"][0].update(mode="grid-forming"), "converters[0].mode"),
        (lambda d: d["converters"][0].update(n_sm=2.5), "converters[0].n_sm"),
        (lambda d: d["gains"].update({"99": {}}), "gains.99"),
        (lambda d: d["nodes"].append("1"), "nodes[14]"),
    ],
)
def test_parse_errors_carry_path(raw_doc, mutate, where):
    doc = copy.deepcopy(raw_doc)
    mutate(doc)
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert exc.value.path == where


def test_malformed_json():
    with pytest.raises(ConfigError, match="malformed JSON"):
        parse_config("{not json")


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda d: d["lines"][0]["l"].update(value=0.0), "non-positive inductance"),
        (lambda d: d["lines"][0]["c"].update(value=-1.0), "non-positive capacitance"),
        (lambda d: d["lines"][0].update({"to": d["lines"][0]["from"]}), "itself"),
        (lambda d: [c.update(mode="fixed-power", droop=None) for c in d["converters"]], "droop mode"),
    ],
)
def test_validation_errors(raw_doc, mutate, match):
    doc = copy.deepcopy(raw_doc)
    mutate(doc)
    with pytest.raises(ConfigError, match=match):
        validate(parse_config(doc))


def test_disconnected_grid_rejected(raw_doc):
    doc = copy.deepcopy(raw_doc)
    # cut every branch touching node 14
    doc["lines"] = [ln for ln in doc["lines"] if "14" not in (str(ln["from"]), str(ln["to"]))]
    with pytest.raises(ConfigError, match="disconnected"):
        validate(parse_config(doc))


def test_overrides_keep_units(raw_doc):
    doc = apply_overrides(raw_doc, ["converters.1.droop.k=50", "lines.0.length=10 km"])
    cfg = parse_config(doc)
    assert cfg.converters[0].droop.k == pytest.approx(50e3)
    assert cfg.lines[0].length == pytest.approx(10e3)
    # the source document is left untouched
    assert raw_doc["lines"][0]["length"]["value"] != 10


def test_override_errors(raw_doc):
    with pytest.raises(ConfigError):
        apply_overrides(raw_doc, ["no-equals-sign"])
    with pytest.raises(ConfigError, match="no converter"):
        apply_overrides(raw_doc, ["converters.99.p_set=1"])


def test_load_config_with_overrides(tmp_path, raw_doc):
    # node 4 falls back to the default entry, the other nodes keep their own gains
    own = raw_doc["gains"].pop("4")
    raw_doc["gains"]["default"] = own
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(raw_doc))
    cfg = load_config(path, ["gains.default.kp_i=2.5"])
    by_node = dict(zip(cfg.nodes, cfg.gains))
    assert by_node["4"].kp_i == 2.5
    assert by_node["5"].kp_i == pytest.approx(raw_doc["gains"]["5"]["kp_i"])


def test_load_slopes(ref_config):
    k = load_slopes(reference_path("case1.json"), ref_config.droop_axes)
    assert len(k) == 5
    assert k == pytest.approx([ref_config.converters[i].droop.k for i in ref_config.droop_indices])
    with pytest.raises(ConfigError, match="mismatch"):
        load_slopes(reference_path("case1.json"), ("k1", "k2"))
    with pytest.raises(ConfigError, match="non-negative"):
        load_slopes({"slopes": {"k1": -1.0}}, ("k1",))
