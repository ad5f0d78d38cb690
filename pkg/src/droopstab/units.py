"""Engineering-suffix quantities converted to SI base units."""

from __future__ import annotations

import math
import re

_PREFIXES = {
    "": 1.0,
    "G": 1e9,
    "M": 1e6,
    "k": 1e3,
    "m": 1e-3,
    "u": 1e-6,
    "μ": 1e-6,
    "µ": 1e-6,
    "n": 1e-9,
}

# base symbol -> canonical dimension symbol
_BASES = {
    "V": "V",
    "A": "A",
    "W": "W",
    "var": "var",
    "VAr": "var",
    "VA": "VA",
    "ohm": "ohm",
    "Ω": "ohm",
    "Ohm": "ohm",
    "H": "H",
    "F": "F",
    "m": "m",
    "s": "s",
    "Hz": "Hz",
    "rad": "rad",
    "1": "1",
}

_TOKEN = re.compile(r"^\s*([^\s]+?)\s*$")


class UnitError(ValueError):
    """Unknown or dimensionally incompatible unit string."""


def _parse_token(token: str) -> tuple[float, str]:
    m = _TOKEN.match(token)
    if not m:
        raise UnitError(f"empty unit token in {token!r}")
    token = m.group(1)
    if token in _BASES:
        return 1.0, _BASES[token]
    # longest prefix first so "m" in "mH" is a prefix but "m" alone is metre
    for prefix in sorted(_PREFIXES, key=len, reverse=True):
        if prefix and token.startswith(prefix) and token[len(prefix):] in _BASES:
            return _PREFIXES[prefix], _BASES[token[len(prefix):]]
    raise UnitError(f"unknown unit {token!r}")


def parse_unit(unit: str) -> tuple[float, str]:
    """Return ``(factor, dimension)`` for a unit like ``"mH/km"`` or ``"MW/kV"``.

    ``dimension`` is the canonical prefix-free form, e.g. ``"H/m"`` or ``"W/V"``.
    Only a single ``/`` is accepted.
    """
    parts = unit.split("/")
    if len(parts) > 2:
        raise UnitError(f"unit {unit!r} has more than one '/'")
    num_factor, num_dim = _parse_token(parts[0])
    if len(parts) == 1:
        return num_factor, num_dim
    den_factor, den_dim = _parse_token(parts[1])
    return num_factor / den_factor, f"{num_dim}/{den_dim}"


# dimensions accepted for each expected SI dimension, with extra conversion
_ALIASES = {
    "rad/s": {"Hz": 2.0 * math.pi, "rad/s": 1.0, "1/s": 1.0},
    "1": {"1": 1.0},
}


def to_si(value: float, unit: str, expected: str) -> float:
    """Convert ``value`` in ``unit`` to SI, checking it has dimension ``expected``."""
    factor, dim = parse_unit(unit)
    accepted = _ALIASES.get(expected, {expected: 1.0})
    if dim not in accepted:
        raise UnitError(f"unit {unit!r} has dimension {dim!r}, expected {expected!r}")
    return float(value) * factor * accepted[dim]
