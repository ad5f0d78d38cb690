"""Global small-signal matrix from per-unit blocks and selector matrices.

States are grouped by signal rather than by unit: all ``i_dc`` first, then
all ``i_d`` and so on, followed by the controller states in the same layout
and finally the network states.  With that ordering the selectors are plain
``[I, 0, ...]`` blocks.

:class:`GridSystem` also carries the nonlinear vector field whose Jacobian
the assembled matrix is; the droop slopes enter only through ``k_diag``, so
``A_ss(k) = A0 + sum_j k_j M_j`` holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import control, converter
from .config import SystemConfig
from .converter import MmcLinearization, MmcParams
from .network import NetworkModel, assemble_network, build_incidence

__all__ = [
    "SelectorSet",
    "StackedBlocks",
    "SmallSignalModel",
    "Setpoints",
    "GridSystem",
    "build_selectors",
    "stack_units",
    "assemble_global",
]


@dataclass(frozen=True)
class SelectorSet:
    G3: np.ndarray  # n x 10n, picks i_dc
    G_s1: np.ndarray  # 2n x 10n, picks (i_d, i_q)
    G_s2: np.ndarray  # n x (3m+n), picks v_dc
    G11: np.ndarray  # 3n x n, v_dc into the MMC input
    G12: np.ndarray  # 3n x 2n, vref into the MMC input
    G21: np.ndarray  # 4n x n, P_ref into the controller input
    G23: np.ndarray  # 4n x 2n, (i_d, i_q) into the controller input


@dataclass(frozen=True)
class StackedBlocks:
    A1: np.ndarray
    B1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    D2: np.ndarray
    A3: np.ndarray
    B3: np.ndarray

    @property
    def n_units(self) -> int:
        return self.B3.shape[1]


@dataclass(frozen=True)
class SmallSignalModel:
    A_ss: np.ndarray
    A0: np.ndarray
    M: tuple[np.ndarray, ...]
    k: np.ndarray  # expansion slopes, one per droop axis [W/V]
    axes: tuple[str, ...]
    state_names: tuple[str, ...]
    x_op: np.ndarray
    blocks: StackedBlocks = field(repr=False)
    selectors: SelectorSet = field(repr=False)
    droop_indices: tuple[int, ...] = ()

    @property
    def n_states(self) -> int:
        return self.A_ss.shape[0]

    def at(self, k: Sequence[float]) -> np.ndarray:
        """``A_ss`` for slopes ``k`` (one per droop axis) through the affine form."""
        out = self.A0.copy()
        for kj, Mj in zip(k, self.M):
            out += kj * Mj
        return out

    def reassemble(self, k: Sequence[float]) -> np.ndarray:
        """``A_ss`` for slopes ``k`` by re-running the block assembly."""
        k_diag = np.zeros(self.blocks.n_units)
        k_diag[list(self.droop_indices)] = k
        return assemble_global(self.blocks, self.selectors, np.diag(k_diag))


def build_selectors(n: int, m: int = 0) -> SelectorSet:
    if n < 1:
        raise ValueError("need at least one node")
    I = np.eye(n)
    Z = np.zeros((n, n))

    def row(blocks, width):
        out = np.zeros((n, width * n))
        for pos, b in blocks:
            out[:, pos * n : (pos + 1) * n] = b
        return out

    G3 = row([(0, I)], 10)
    G_s1 = np.vstack([row([(1, I)], 10), row([(2, I)], 10)])
    G_s2 = np.hstack([np.zeros((n, 3 * m)), I])
    G11 = np.vstack([I, Z, Z])
    G12 = np.block([[Z, Z], [I, Z], [Z, I]])
    G21 = np.vstack([I, Z, Z, Z])
    G23 = np.block([[Z, Z], [Z, Z], [I, Z], [Z, I]])
    return SelectorSet(G3=G3, G_s1=G_s1, G_s2=G_s2, G11=G11, G12=G12, G21=G21, G23=G23)


def _interleave(blocks: Sequence[np.ndarray], n: int) -> np.ndarray:
    rows, cols = blocks[0].shape
    out = np.zeros((rows * n, cols * n))
    r = np.arange(rows) * n
    c = np.arange(cols) * n
    for i, b in enumerate(blocks):
        out[np.ix_(r + i, c + i)] = b
    return out


def stack_units(
    mmcs: Sequence[MmcLinearization],
    controllers: Sequence[control.ControllerModel],
    network: NetworkModel,
) -> StackedBlocks:
    n = len(mmcs)
    if len(controllers) != n or network.B3.shape[1] != n:
        raise ValueError(
            f"unit count mismatch: {n} converters, {len(controllers)} controllers, "
            f"{network.B3.shape[1]} network nodes"
        )
    return StackedBlocks(
        A1=_interleave([u.A1 for u in mmcs], n),
        B1=_interleave([u.B1 for u in mmcs], n),
        A2=_interleave([c.A2 for c in controllers], n),
        B2=_interleave([c.B2 for c in controllers], n),
        C2=_interleave([c.C2 for c in controllers], n),
        D2=_interleave([c.D2 for c in controllers], n),
        A3=network.A3,
        B3=network.B3,
    )


def assemble_global(blocks: StackedBlocks, sel: SelectorSet, k_diag: np.ndarray) -> np.ndarray:
    """Nine-block closed-loop matrix for slope matrix ``k_diag``.

    The network voltage reaches the converter input as ``G11 G_s2 x3``.
    """
    b = blocks
    n = b.n_units
    n3 = b.A3.shape[0]
    if b.A1.shape != (10 * n, 10 * n) or b.A2.shape != (4 * n, 4 * n) or k_diag.shape != (n, n):
        raise ValueError(
            f"dimension mismatch at block (1,1)/(2,2): A1 {b.A1.shape}, A2 {b.A2.shape}, k {k_diag.shape}"
        )
    if sel.G_s2.shape != (n, n3):
        raise ValueError(f"dimension mismatch at block (1,3): G_s2 {sel.G_s2.shape} vs network {n3}")
    B1G12 = b.B1 @ sel.G12
    droop = sel.G21 @ k_diag @ sel.G_s2
    A11 = b.A1 + B1G12 @ b.D2 @ sel.G23 @ sel.G_s1
    A12 = B1G12 @ b.C2
    A13 = b.B1 @ sel.G11 @ sel.G_s2 + B1G12 @ b.D2 @ droop
    A21 = b.B2 @ sel.G23 @ sel.G_s1
    A23 = b.B2 @ droop
    A31 = b.B3 @ sel.G3
    return np.block(
        [
            [A11, A12, A13],
            [A21, b.A2, A23],
            [A31, np.zeros((n3, 4 * n)), b.A3],
        ]
    )


@dataclass(frozen=True)
class Setpoints:
    """Per-unit references: ``P_ref = p0 + k (v_dc - v_ref)``, ``Q_ref = q``."""

    p0: np.ndarray
    k: np.ndarray
    v_ref: np.ndarray
    q: np.ndarray

    @classmethod
    def from_config(cls, config: SystemConfig) -> "Setpoints":
        p0, k, v_ref = [], [], []
        for c in config.converters:
            if c.droop is not None:
                p0.append(c.droop.p0)
                k.append(c.droop.k)
                v_ref.append(c.droop.v_dc_ref)
            else:
                p0.append(c.p_set)
                k.append(0.0)
                v_ref.append(c.v_dc_nom / 2.0)
        return cls(np.array(p0), np.array(k), np.array(v_ref), np.array([c.q_set for c in config.converters]))

    def p_ref(self, v_dc: np.ndarray) -> np.ndarray:
        return self.p0 + self.k * (v_dc - self.v_ref)

    def with_slopes(self, idx: Sequence[int], k_new: Sequence[float], v_dc_star: np.ndarray) -> "Setpoints":
        """Change slopes on ``idx`` keeping ``P_ref(v_dc_star)`` fixed."""
        k = self.k.copy()
        p0 = self.p0.copy()
        for i, kn in zip(idx, k_new):
            p0[i] += (kn - k[i]) * (self.v_ref[i] - v_dc_star[i])
            k[i] = kn
        return replace(self, k=k, p0=p0)


class GridSystem:
    """Nonlinear closed-loop MTDC model and its linearization."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.n = n = config.n_nodes
        self.m = m = config.n_lines
        self.n_states = config.state_dim
        self.mmc = MmcParams.stack(config.converters)
        self.pcc = (
            np.array([c.pcc_voltage_dq[0] for c in config.converters]),
            np.array([c.pcc_voltage_dq[1] for c in config.converters]),
        )
        self.controllers = [control.controller_model(g, c) for g, c in zip(config.gains, config.converters)]
        self.network = assemble_network(build_incidence(config.nodes, config.lines), config)
        self.selectors = build_selectors(n, m)
        self.setpoints = Setpoints.from_config(config)
        self.droop_indices = config.droop_indices
        self.axes = config.droop_axes
        ctrl = self.controllers
        self._A2 = _interleave([c.A2 for c in ctrl], n)
        self._B2 = _interleave([c.B2 for c in ctrl], n)
        self._C2 = _interleave([c.C2 for c in ctrl], n)
        self._D2 = _interleave([c.D2 for c in ctrl], n)
        self._y0 = np.concatenate([[c.y0[0] for c in ctrl], [c.y0[1] for c in ctrl]])
        self.sl1 = slice(0, 10 * n)
        self.sl2 = slice(10 * n, 14 * n)
        self.sl3 = slice(14 * n, self.n_states)
        self.vdc_index = np.arange(14 * n + 3 * m, self.n_states)

    # -- naming and scaling -------------------------------------------------

    @property
    def state_names(self) -> tuple[str, ...]:
        nodes = self.config.nodes
        names = [f"{s}[{nd}]" for s in converter.STATE_NAMES for nd in nodes]
        names += [f"{s}[{nd}]" for s in control.STATE_NAMES for nd in nodes]
        return tuple(names) + self.network.state_names

    def state_scales(self) -> np.ndarray:
        """Typical magnitude of each state, for normalized error measures."""
        n, m = self.n, self.m
        convs = self.config.converters
        v_nom = self.mmc.v_nom
        s_base = max(1e8, max(abs(c.p_set) for c in convs))
        v_pcc = np.hypot(*self.pcc)
        i_ac = s_base / (1.5 * v_pcc)
        i_dc = s_base / v_nom
        g = self.config.gains
        x1 = np.concatenate([i_dc, i_ac, i_ac, i_ac, i_ac, v_nom, v_nom, v_nom, v_nom, v_nom])
        v_out = v_nom / 2.0
        ki_i = np.array([gi.ki_i for gi in g])
        ki_pq = np.array([gi.ki_pq for gi in g])
        x2 = np.concatenate([v_out / ki_i, v_out / ki_i, i_ac / ki_pq, i_ac / ki_pq])
        i_line = s_base / np.mean(v_nom)
        x3 = np.concatenate([np.full(2 * m, i_line), np.full(m, np.mean(v_nom) / 2.0), v_nom / 2.0])
        return np.concatenate([x1, x2, x3])

    # -- nonlinear model ----------------------------------------------------

    def split(self, X: np.ndarray):
        return X[self.sl1].reshape(10, self.n), X[self.sl2], X[self.sl3]

    def unit_inputs(self, X: np.ndarray, sp: Setpoints | None = None):
        """Controller input ``u2`` and converter input ``(v_dc, vref_d, vref_q)``."""
        sp = sp or self.setpoints
        n = self.n
        x1, x2, x3 = self.split(X)
        vdc = x3[3 * self.m :]
        u2 = np.concatenate([sp.p_ref(vdc), sp.q, x1[1], x1[2]])
        vref = self._C2 @ x2 + self._D2 @ u2 + self._y0
        return u2, (vdc, vref[:n], vref[n:])

    def rhs(self, X: np.ndarray, sp: Setpoints | None = None) -> np.ndarray:
        x1, x2, x3 = self.split(X)
        u2, u1 = self.unit_inputs(X, sp)
        out = np.empty_like(X)
        out[self.sl1] = converter.mmc_derivative(x1, u1, self.pcc, self.mmc).reshape(-1)
        out[self.sl2] = self._A2 @ x2 + self._B2 @ u2
        out[self.sl3] = self.network.A3 @ x3 + self.network.B3 @ x1[0]
        return out

    def setpoint_input(self, X: np.ndarray, units: Sequence[int], sp: Setpoints | None = None) -> np.ndarray:
        """Columns ``dF/dP_ref`` for the given units at state ``X``."""
        n = self.n
        b1 = _interleave([u.B1 for u in self.mmc_linearizations(X, sp)], n)
        out = np.zeros((self.n_states, len(units)))
        for col, unit in enumerate(units):
            e = np.zeros(4 * n)
            e[unit] = 1.0
            out[self.sl2, col] = self._B2 @ e
            out[self.sl1, col] = b1 @ np.concatenate([np.zeros(n), self._D2 @ e])
        return out

    # -- linearization ------------------------------------------------------

    def mmc_linearizations(self, X: np.ndarray, sp: Setpoints | None = None) -> list[MmcLinearization]:
        x1, _, _ = self.split(X)
        _, (vdc, vrd, vrq) = self.unit_inputs(X, sp)
        out = []
        for i in range(self.n):
            u = np.array([vdc[i], vrd[i], vrq[i]])
            out.append(converter.mmc_linearize(x1[:, i], u, (self.pcc[0][i], self.pcc[1][i]), self.mmc.unit(i)))
        return out

    def linearize(self, X: np.ndarray, sp: Setpoints | None = None) -> SmallSignalModel:
        sp = sp or self.setpoints
        blocks = stack_units(self.mmc_linearizations(X, sp), self.controllers, self.network)
        A_ss = assemble_global(blocks, self.selectors, np.diag(sp.k))
        A0 = assemble_global(blocks, self.selectors, np.zeros((self.n, self.n)))
        M = []
        for j in self.droop_indices:
            unit = np.zeros(self.n)
            unit[j] = 1.0
            M.append(assemble_global(blocks, self.selectors, np.diag(unit)) - A0)
        return SmallSignalModel(
            A_ss=A_ss,
            A0=A0,
            M=tuple(M),
            k=sp.k[list(self.droop_indices)].copy(),
            axes=self.axes,
            state_names=self.state_names,
            x_op=np.array(X, copy=True),
            blocks=blocks,
            selectors=self.selectors,
            droop_indices=self.droop_indices,
        )

    def jacobian(self, X: np.ndarray, sp: Setpoints | None = None) -> np.ndarray:
        sp = sp or self.setpoints
        blocks = stack_units(self.mmc_linearizations(X, sp), self.controllers, self.network)
        return assemble_global(blocks, self.selectors, np.diag(sp.k))
