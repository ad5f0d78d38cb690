"""System description: parsing, validation and normalization to SI units.

A configuration document is JSON with top-level keys ``nodes``, ``lines``,
``converters``, ``gains`` and ``scenario``.  Physical quantities are written
as ``{"value": 20, "unit": "mF"}``; bare numbers are taken as SI.  Keys that
start with ``_`` are comments and are ignored everywhere.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import networkx as nx

from .units import UnitError, to_si

__all__ = [
    "ConfigError",
    "LineSpec",
    "DroopParams",
    "ConverterSpec",
    "ControllerGains",
    "ScenarioEvent",
    "SystemConfig",
    "ValidatedConfig",
    "parse_config",
    "load_config",
    "validate",
    "serialize",
    "config_hash",
    "apply_overrides",
    "reference_path",
    "load_slopes",
]


class ConfigError(ValueError):
    """Schema or physical-consistency violation in a system description."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class LineSpec:
    """DC cable between two nodes; per-length data in SI (per metre)."""

    from_node: str
    to_node: str
    length: float
    r_per_m: float
    l_per_m: float
    c_per_m: float

    @property
    def resistance(self) -> float:
        return self.r_per_m * self.length

    @property
    def inductance(self) -> float:
        return self.l_per_m * self.length

    @property
    def capacitance(self) -> float:
        return self.c_per_m * self.length


@dataclass(frozen=True)
class DroopParams:
    k: float  # W/V
    v_dc_ref: float  # V
    p0: float  # W


@dataclass(frozen=True)
class ConverterSpec:
    """One MMC station.

    ``v_dc_nom`` is the modulation base of the arm switching functions (the
    nominal pole-to-pole dc voltage).  The dc network carries pole-to-ground
    voltages, so a healthy pole sits near ``v_dc_nom / 2``.
    """

    node: str
    mode: str  # "droop" | "fixed-power"
    c_sm: float
    n_sm: int
    l_arm: float
    r_arm: float
    l0: float
    r0: float
    l_s: float
    c_g: float
    v_dc_nom: float
    pcc_voltage_dq: tuple[float, float]
    omega0: float
    p_set: float
    q_set: float
    droop: DroopParams | None = None

    @property
    def p_ref_offset(self) -> float:
        """P0 for droop stations, the power command otherwise."""
        return self.droop.p0 if self.droop is not None else self.p_set


@dataclass(frozen=True)
class ControllerGains:
    kp_i: float
    ki_i: float
    kp_pq: float
    ki_pq: float
    voltage_feedforward: bool = True
    decoupling: bool = True


@dataclass(frozen=True)
class ScenarioEvent:
    """Step change of a set-point at ``time``.

    ``target`` is ``"<node>.<field>"`` with field one of ``p_set``, ``q_set``,
    ``k``, ``p0``, ``v_dc_ref``.  A slope step keeps the operating point when
    ``compensate_p0`` is set.
    """

    time: float
    target: str
    value: float
    old: float | None = None
    compensate_p0: bool = True

    @property
    def node(self) -> str:
        return self.target.split(".", 1)[0]

    @property
    def quantity(self) -> str:
        return self.target.split(".", 1)[1]


@dataclass(frozen=True)
class SystemConfig:
    nodes: tuple[str, ...]
    lines: tuple[LineSpec, ...]
    converters: tuple[ConverterSpec, ...]
    gains: tuple[ControllerGains, ...]
    scenario: tuple[ScenarioEvent, ...] = ()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def droop_nodes(self) -> tuple[str, ...]:
        return tuple(c.node for c in self.converters if c.mode == "droop")

    @property
    def droop_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.converters) if c.mode == "droop")

    @property
    def droop_axes(self) -> tuple[str, ...]:
        return tuple(f"k{node}" for node in self.droop_nodes)

    @property
    def state_dim(self) -> int:
        return 15 * self.n_nodes + 3 * self.n_lines

    def node_index(self, node: str) -> int:
        return self.nodes.index(str(node))

    def replace_converter(self, node: str, **changes: Any) -> "SystemConfig":
        idx = self.node_index(node)
        convs = list(self.converters)
        convs[idx] = dataclasses.replace(convs[idx], **changes)
        return dataclasses.replace(self, converters=tuple(convs))


@dataclass(frozen=True)
class ValidatedConfig:
    config: SystemConfig
    state_dim: int
    droop_nodes: tuple[str, ...] = field(default=())

    def __getattr__(self, name: str) -> Any:
        return getattr(self.config, name)


# ---------------------------------------------------------------------------
# parsing


def _quantity(raw: Any, expected: str, path: str) -> float:
    if isinstance(raw, bool):
        raise ConfigError("expected a quantity, got a boolean", path)
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, Mapping):
        if "value" not in raw:
            raise ConfigError("quantity object needs 'value'", path)
        value = raw["value"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("quantity value must be a number", path)
        unit = raw.get("unit", "")
        if not unit:
            return float(value)
        try:
            return to_si(value, unit, expected)
        except UnitError as exc:
            raise ConfigError(str(exc), path) from None
    raise ConfigError(f"expected a quantity, got {type(raw).__name__}", path)


def _section(doc: Mapping[str, Any], key: str, kind: type, path: str = "") -> Any:
    if key not in doc:
        raise ConfigError("missing required key", f"{path}{key}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        names = kind.__name__ if isinstance(kind, type) else " or ".join(k.__name__ for k in kind)
        raise ConfigError(f"expected {names}", f"{path}{key}")
    return value


def _strip_comments(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _strip_comments(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, list):
        return [_strip_comments(v) for v in obj]
    return obj


_CONVERTER_FIELDS = {
    "c_sm": "F",
    "l_arm": "H",
    "r_arm": "ohm",
    "l0": "H",
    "r0": "ohm",
    "l_s": "H",
    "c_g": "F",
    "v_dc_nom": "V",
    "omega0": "rad/s",
    "p_set": "W",
    "q_set": "var",
}

_GAIN_FIELDS = ("kp_i", "ki_i", "kp_pq", "ki_pq")


def _check_keys(obj: Mapping[str, Any], allowed: Iterable[str], path: str) -> None:
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}", path)


def _parse_converter(raw: Mapping[str, Any], path: str, nodes: set[str]) -> ConverterSpec:
    if not isinstance(raw, Mapping):
        raise ConfigError("expected object", path)
    allowed = set(_CONVERTER_FIELDS) | {"node", "mode", "n_sm", "pcc_voltage_dq", "droop"}
    _check_keys(raw, allowed, path)
    node = str(_section(raw, "node", (str, int), path + "."))
    if node not in nodes:
        raise ConfigError(f"converter on undeclared node {node!r}", path + ".node")
    mode = raw.get("mode", "fixed-power")
    if mode not in ("droop", "fixed-power"):
        raise ConfigError(f"mode must be 'droop' or 'fixed-power', got {mode!r}", path + ".mode")
    values = {}
    for key, dim in _CONVERTER_FIELDS.items():
        if key not in raw:
            if key in ("l0", "r0", "q_set"):
                values[key] = 0.0
                continue
            raise ConfigError("missing required key", f"{path}.{key}")
        values[key] = _quantity(raw[key], dim, f"{path}.{key}")
    n_sm = raw.get("n_sm")
    if isinstance(n_sm, Mapping):
        n_sm = n_sm.get("value")
    if isinstance(n_sm, bool) or not isinstance(n_sm, (int, float)) or int(n_sm) != n_sm:
        raise ConfigError("n_sm must be an integer count", path + ".n_sm")
    pcc = raw.get("pcc_voltage_dq")
    if not isinstance(pcc, list) or len(pcc) != 2:
        raise ConfigError("expected a pair [v_d, v_q]", path + ".pcc_voltage_dq")
    pcc_dq = tuple(_quantity(v, "V", f"{path}.pcc_voltage_dq[{i}]") for i, v in enumerate(pcc))
    droop = None
    if raw.get("droop") is not None:
        d = raw["droop"]
        if not isinstance(d, Mapping):
            raise ConfigError("expected object", path + ".droop")
        _check_keys(d, ("k", "v_dc_ref", "p0"), path + ".droop")
        droop = DroopParams(
            k=_quantity(_section(d, "k", object, path + ".droop."), "W/V", path + ".droop.k"),
            v_dc_ref=_quantity(_section(d, "v_dc_ref", object, path + ".droop."), "V", path + ".droop.v_dc_ref"),
            p0=_quantity(d.get("p0", raw.get("p_set", 0.0)), "W", path + ".droop.p0"),
        )
    return ConverterSpec(
        node=node,
        mode=mode,
        n_sm=int(n_sm),
        pcc_voltage_dq=pcc_dq,  # type: ignore[arg-type]
        droop=droop,
        **values,
    )


def _parse_gains(raw: Any, path: str) -> ControllerGains:
    if not isinstance(raw, Mapping):
        raise ConfigError("expected object", path)
    _check_keys(raw, _GAIN_FIELDS + ("voltage_feedforward", "decoupling"), path)
    vals = {}
    for key in _GAIN_FIELDS:
        if key not in raw:
            raise ConfigError("missing required key", f"{path}.{key}")
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("gains are plain SI numbers", f"{path}.{key}")
        vals[key] = float(value)
    for key in ("voltage_feedforward", "decoupling"):
        flag = raw.get(key, True)
        if not isinstance(flag, bool):
            raise ConfigError("expected a boolean", f"{path}.{key}")
        vals[key] = flag
    return ControllerGains(**vals)


def _parse_event(raw: Any, path: str, nodes: set[str]) -> ScenarioEvent:
    if not isinstance(raw, Mapping):
        raise ConfigError("expected object", path)
    _check_keys(raw, ("time", "target", "value", "old", "compensate_p0"), path)
    target = str(_section(raw, "target", str, path + "."))
    if "." not in target:
        raise ConfigError("target must be '<node>.<field>'", path + ".target")
    node, qty = target.split(".", 1)
    if node not in nodes:
        raise ConfigError(f"event on undeclared node {node!r}", path + ".target")
    dims = {"p_set": "W", "q_set": "var", "k": "W/V", "p0": "W", "v_dc_ref": "V"}
    if qty not in dims:
        raise ConfigError(f"unsupported event quantity {qty!r}", path + ".target")
    old = raw.get("old")
    return ScenarioEvent(
        time=_quantity(_section(raw, "time", object, path + "."), "s", path + ".time"),
        target=target,
        value=_quantity(_section(raw, "value", object, path + "."), dims[qty], path + ".value"),
        old=None if old is None else _quantity(old, dims[qty], path + ".old"),
        compensate_p0=bool(raw.get("compensate_p0", True)),
    )


def parse_config(document: Mapping[str, Any] | str) -> SystemConfig:
    """Parse a configuration document (mapping or JSON text) into SI form."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise ConfigError("document must be a JSON object")
    doc = _strip_comments(document)
    _check_keys(doc, ("nodes", "lines", "converters", "gains", "scenario"), "")

    raw_nodes = _section(doc, "nodes", list)
    nodes: list[str] = []
    for i, n in enumerate(raw_nodes):
        if isinstance(n, bool) or not isinstance(n, (str, int)):
            raise ConfigError("node ids must be strings or integers", f"nodes[{i}]")
        if str(n) in nodes:
            raise ConfigError(f"duplicate node id {n!r}", f"nodes[{i}]")
        nodes.append(str(n))
    node_set = set(nodes)

    lines = []
    for i, raw in enumerate(_section(doc, "lines", list)):
        path = f"lines[{i}]"
        if not isinstance(raw, Mapping):
            raise ConfigError("expected object", path)
        _check_keys(raw, ("from", "to", "length", "r", "l", "c"), path)
        ends = []
        for key in ("from", "to"):
            end = str(_section(raw, key, (str, int), path + "."))
            if end not in node_set:
                raise ConfigError(f"line references undeclared node {end!r}", f"{path}.{key}")
            ends.append(end)
        lines.append(
            LineSpec(
                from_node=ends[0],
                to_node=ends[1],
                length=_quantity(_section(raw, "length", object, path + "."), "m", path + ".length"),
                r_per_m=_quantity(_section(raw, "r", object, path + "."), "ohm/m", path + ".r"),
                l_per_m=_quantity(_section(raw, "l", object, path + "."), "H/m", path + ".l"),
                c_per_m=_quantity(_section(raw, "c", object, path + "."), "F/m", path + ".c"),
            )
        )

    by_node: dict[str, ConverterSpec] = {}
    for i, raw in enumerate(_section(doc, "converters", list)):
        conv = _parse_converter(raw, f"converters[{i}]", node_set)
        if conv.node in by_node:
            raise ConfigError(f"second converter on node {conv.node!r}", f"converters[{i}]")
        by_node[conv.node] = conv
    missing = [n for n in nodes if n not in by_node]
    if missing:
        raise ConfigError(f"nodes without converter: {missing}", "converters")

    raw_gains = _section(doc, "gains", dict)
    for key in raw_gains:
        if key != "default" and key not in node_set:
            raise ConfigError(f"gains for undeclared node {key!r}", f"gains.{key}")
    gains = []
    for n in nodes:
        merged = dict(raw_gains.get("default", {}))
        merged.update(raw_gains.get(n, {}))
        gains.append(_parse_gains(merged, f"gains.{n}"))

    events = tuple(
        _parse_event(raw, f"scenario[{i}]", node_set)
        for i, raw in enumerate(doc.get("scenario", []) or [])
    )
    return SystemConfig(
        nodes=tuple(nodes),
        lines=tuple(lines),
        converters=tuple(by_node[n] for n in nodes),
        gains=tuple(gains),
        scenario=tuple(sorted(events, key=lambda e: e.time)),
    )


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> SystemConfig:
    doc = json.loads(Path(path).read_text())
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_config(doc)


def reference_path(name: str = "ref14.json") -> Path:
    """Path of a bundled dataset file (``ref14.json``, ``case1.json``, ...)."""
    return Path(str(resources.files("droopstab") / "data" / name))


def load_slopes(source: str | Path | Mapping[str, Any], axes: Iterable[str]) -> list[float]:
    """Droop slopes [W/V] of a case file, ordered like ``axes``.

    The file holds ``{"slopes": {"k1": {"value": 10, "unit": "MW/kV"}, ...}}``;
    every axis must be present and no others.
    """
    doc = json.loads(Path(source).read_text()) if not isinstance(source, Mapping) else source
    raw = _strip_comments(doc)
    slopes = raw.get("slopes") if isinstance(raw, Mapping) else None
    if not isinstance(slopes, Mapping):
        raise ConfigError("case file needs a 'slopes' object", "slopes")
    axes = list(axes)
    extra = sorted(set(slopes) - set(axes))
    missing = [a for a in axes if a not in slopes]
    if extra or missing:
        raise ConfigError(f"slope axes mismatch: missing {missing}, unknown {extra}", "slopes")
    out = [_quantity(slopes[a], "W/V", f"slopes.{a}") for a in axes]
    for a, v in zip(axes, out):
        if v < 0:
            raise ConfigError("droop slope must be non-negative", f"slopes.{a}")
    return out


# ---------------------------------------------------------------------------
# validation


def validate(config: SystemConfig) -> ValidatedConfig:
    path = "lines"
    for i, ln in enumerate(config.lines):
        p = f"{path}[{i}]"
        if ln.from_node == ln.to_node:
            raise ConfigError("line connects a node to itself", p)
        if ln.length <= 0:
            raise ConfigError("length must be positive", p + ".length")
        if ln.r_per_m < 0:
            raise ConfigError("resistance must be non-negative", p + ".r")
        if ln.l_per_m <= 0:
            raise ConfigError("non-positive inductance", p + ".l")
        if ln.c_per_m <= 0:
            raise ConfigError("non-positive capacitance", p + ".c")

    for i, c in enumerate(config.converters):
        p = f"converters[{i}]"
        for key in ("c_sm", "l_arm", "c_g", "l_s", "v_dc_nom"):
            if getattr(c, key) <= 0:
                kind = "inductance" if key.startswith("l") else "capacitance" if key.startswith("c") else "value"
                raise ConfigError(f"non-positive {kind} {key}", f"{p}.{key}")
        for key in ("r_arm", "r0", "l0"):
            if getattr(c, key) < 0:
                raise ConfigError(f"{key} must be non-negative", f"{p}.{key}")
        if c.n_sm < 1:
            raise ConfigError("n_sm must be at least 1", p + ".n_sm")
        if c.omega0 <= 0:
            raise ConfigError("omega0 must be positive", p + ".omega0")
        if (c.droop is not None) != (c.mode == "droop"):
            if c.droop is not None:
                raise ConfigError("droop block on fixed-power converter", p + ".droop")
            raise ConfigError("droop converter without droop block", p + ".droop")
        if c.droop is not None and c.droop.v_dc_ref <= 0:
            raise ConfigError("v_dc_ref must be positive", p + ".droop.v_dc_ref")

    for i, g in enumerate(config.gains):
        p = f"gains.{config.nodes[i]}"
        for key in _GAIN_FIELDS:
            if getattr(g, key) < 0:
                raise ConfigError(f"{key} must be non-negative", f"{p}.{key}")
        if g.ki_i <= 0 or g.ki_pq <= 0:
            raise ConfigError("integral gains must be positive", p)

    graph = nx.MultiGraph()
    graph.add_nodes_from(config.nodes)
    graph.add_edges_from((ln.from_node, ln.to_node) for ln in config.lines)
    if not nx.is_connected(graph):
        parts = [sorted(c) for c in nx.connected_components(graph)]
        raise ConfigError(f"dc grid is disconnected: components {parts}", "lines")
    if not config.droop_nodes:
        raise ConfigError("at least one converter must be in droop mode", "converters")

    return ValidatedConfig(config=config, state_dim=config.state_dim, droop_nodes=config.droop_nodes)


# ---------------------------------------------------------------------------
# serialization


def _q(value: float, unit: str) -> dict[str, Any]:
    return {"value": value, "unit": unit}


def serialize(config: SystemConfig) -> dict[str, Any]:
    """Normalized (SI) document that parses back to an equal config."""
    convs = []
    for c in config.converters:
        d: dict[str, Any] = {"node": c.node, "mode": c.mode, "n_sm": c.n_sm}
        for key, dim in _CONVERTER_FIELDS.items():
            d[key] = _q(getattr(c, key), dim)
        d["pcc_voltage_dq"] = [_q(v, "V") for v in c.pcc_voltage_dq]
        if c.droop is not None:
            d["droop"] = {
                "k": _q(c.droop.k, "W/V"),
                "v_dc_ref": _q(c.droop.v_dc_ref, "V"),
                "p0": _q(c.droop.p0, "W"),
            }
        convs.append(d)
    dims = {"p_set": "W", "q_set": "var", "k": "W/V", "p0": "W", "v_dc_ref": "V"}
    events = []
    for e in config.scenario:
        ev: dict[str, Any] = {
            "time": _q(e.time, "s"),
            "target": e.target,
            "value": _q(e.value, dims[e.quantity]),
            "compensate_p0": e.compensate_p0,
        }
        if e.old is not None:
            ev["old"] = _q(e.old, dims[e.quantity])
        events.append(ev)
    return {
        "nodes": list(config.nodes),
        "lines": [
            {
                "from": ln.from_node,
                "to": ln.to_node,
                "length": _q(ln.length, "m"),
                "r": _q(ln.r_per_m, "ohm/m"),
                "l": _q(ln.l_per_m, "H/m"),
                "c": _q(ln.c_per_m, "F/m"),
            }
            for ln in config.lines
        ],
        "converters": convs,
        "gains": {n: dataclasses.asdict(g) for n, g in zip(config.nodes, config.gains)},
        "scenario": events,
    }


def config_hash(config: SystemConfig) -> str:
    blob = json.dumps(serialize(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_override_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    parts = text.split(None, 1)
    if len(parts) == 2:
        try:
            return {"value": float(parts[0]), "unit": parts[1]}
        except ValueError:
            pass
    return text


def apply_overrides(document: Mapping[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``path=value`` edits to a raw document.

    Path segments are dotted; list items are addressed by index, except
    ``converters`` which are addressed by node id.  A bare number replacing a
    quantity keeps the quantity's unit; ``"50 MW/kV"`` sets both.
    """
    doc = copy.deepcopy(dict(document))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not path=value", "--set")
        path, text = item.split("=", 1)
        keys = path.strip().split(".")
        target: Any = doc
        for depth, key in enumerate(keys[:-1]):
            here = ".".join(keys[: depth + 1])
            if isinstance(target, list):
                if depth > 0 and keys[depth - 1] == "converters":
                    matches = [c for c in target if str(c.get("node")) == key]
                    if not matches:
                        raise ConfigError(f"no converter on node {key!r}", here)
                    target = matches[0]
                else:
                    try:
                        target = target[int(key)]
                    except (ValueError, IndexError):
                        raise ConfigError("bad list index", here) from None
            elif isinstance(target, Mapping):
                if key not in target:
                    target[key] = {}
                target = target[key]
            else:
                raise ConfigError("cannot descend into scalar", here)
        last = keys[-1]
        value = _parse_override_value(text)
        if isinstance(target, list):
            target[int(last)] = value
            continue
        current = target.get(last)
        if isinstance(current, Mapping) and "value" in current and isinstance(value, (int, float)):
            target[last] = {"value": value, "unit": current.get("unit", "")}
        else:
            target[last] = value
    return doc
