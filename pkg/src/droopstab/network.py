"""DC grid of arbitrary topology from its edge-node incidence matrix.

Each cable is a T section: series ``R_T``/``L_T`` on both halves (currents
``i_alpha`` entering at the sending end, ``i_beta`` leaving at the receiving
end) and the shunt capacitance ``C_T`` at the midpoint.  Every bus reaches its
converter terminal through the smoothing reactor ``L_s``; the grounding
capacitor ``C_g`` sits at the terminal.  The bus voltage is eliminated, which
couples the line inductances through ``L_s`` and gives a descriptor system

    E dz/dt = -K^T v_dc + [-I; I] v_T - R z,      z = [i_alpha; i_beta]

with ``K = [-J1^T, J2^T]`` and ``E = blkdiag(L_T, L_T) + K^T L_s K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .config import SystemConfig

__all__ = ["Incidence", "NetworkModel", "build_incidence", "assemble_network", "network_state_names"]

#: condition-number ceiling for the descriptor mass matrix
E_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Incidence:
    J: np.ndarray
    J1: np.ndarray
    J2: np.ndarray

    @property
    def n_lines(self) -> int:
        return self.J.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.J.shape[1]


@dataclass(frozen=True)
class NetworkModel:
    A3: np.ndarray
    B3: np.ndarray
    E: np.ndarray
    incidence: Incidence
    state_names: tuple[str, ...]

    def derivative(self, x3: np.ndarray, i_dc: np.ndarray) -> np.ndarray:
        return self.A3 @ x3 + self.B3 @ i_dc


def build_incidence(nodes, lines) -> Incidence:
    """Signed line-to-node matrix, +1 at the sending node, -1 at the receiving node."""
    nodes = list(nodes)
    J = np.zeros((len(lines), len(nodes)))
    for row, ln in enumerate(lines):
        J[row, nodes.index(ln.from_node)] = 1.0
        J[row, nodes.index(ln.to_node)] = -1.0
    J1 = np.where(J > 0, J, 0.0)
    J2 = np.where(J < 0, -J, 0.0)
    return Incidence(J=J, J1=J1, J2=J2)


def network_state_names(config: SystemConfig) -> tuple[str, ...]:
    names = []
    for kind in ("i_alpha", "i_beta", "v_T"):
        names += [f"{kind}[{ln.from_node}-{ln.to_node}]" for ln in config.lines]
    names += [f"v_dc[{n}]" for n in config.nodes]
    return tuple(names)


def assemble_network(incidence: Incidence, config: SystemConfig) -> NetworkModel:
    """State matrices for ``x3 = [i_alpha, i_beta, v_T, v_dc]`` with input ``i_dc``.

    Line halves carry half the cable's series impedance each, so the full
    series R/L of the cable sits between its two ends.
    """
    m, n = incidence.J.shape
    r_t = np.array([ln.resistance / 2.0 for ln in config.lines])
    l_t = np.array([ln.inductance / 2.0 for ln in config.lines])
    c_t = np.array([ln.capacitance for ln in config.lines])
    l_s = np.array([c.l_s for c in config.converters])
    c_g = np.array([c.c_g for c in config.converters])

    K = np.hstack([-incidence.J1.T, incidence.J2.T])  # n x 2m, net line current into each bus
    E = np.diag(np.concatenate([l_t, l_t])) + K.T @ (l_s[:, None] * K)
    if m:
        cond = np.linalg.cond(E)
        if not np.isfinite(cond) or cond > E_COND_LIMIT:
            raise ValueError(f"descriptor matrix E is numerically singular (cond={cond:.3g})")
        factor = sla.cho_factor(E)
    N = 3 * m + n
    A3 = np.zeros((N, N))
    B3 = np.zeros((N, n))
    if m:
        # rows of E dz/dt: columns act on z, v_T and v_dc
        rhs = np.zeros((2 * m, N))
        rhs[:, : 2 * m] = -np.diag(np.concatenate([r_t, r_t]))
        rhs[:m, 2 * m : 3 * m] = -np.eye(m)
        rhs[m:, 2 * m : 3 * m] = np.eye(m)
        rhs[:, 3 * m :] = -K.T
        A3[: 2 * m] = sla.cho_solve(factor, rhs)
        A3[2 * m : 3 * m, :m] = np.diag(1.0 / c_t)
        A3[2 * m : 3 * m, m : 2 * m] = -np.diag(1.0 / c_t)
        A3[3 * m :, : 2 * m] = K / c_g[:, None]
    B3[3 * m :] = -np.diag(1.0 / c_g)
    return NetworkModel(A3=A3, B3=B3, E=E, incidence=incidence, state_names=network_state_names(config))
