"""Quadratic slope constraints, per-axis suprema and 2-D stability regions.

Each non-excluded mode (one per conjugate pair) gives

    a . dk + 1/2 dk^T H dk < delta,   a = Re dlambda/dk,  H = Re d2lambda/dk2,
                                      delta = -Re lambda

around the expansion slopes ``k*``.  Along one axis with the other
deviations held fixed, the left side minus ``delta`` is a scalar quadratic
``q(t) = alpha t^2 + beta t + gamma``; the supremum is the first positive
root over all constraints.

The loci oracle instead bisects on ``max Re lambda(A_ss(k))`` with the
state matrix re-assembled at every point.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .modal import SensitivityBundle

log = logging.getLogger(__name__)

__all__ = [
    "InfeasibleExpansionError",
    "NoSignChangeError",
    "SlopeConstraint",
    "ConstraintSet",
    "SupremumResult",
    "RegionGrid",
    "LociResult",
    "build_constraints",
    "first_positive_root",
    "estimate_supremum",
    "cross_validate",
    "loci_supremum",
    "max_real_part",
    "scan_region",
    "region_agreement",
]


class InfeasibleExpansionError(ValueError):
    """The starting slopes already violate a constraint (unstable expansion)."""


class NoSignChangeError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeConstraint:
    mode: int
    eigenvalue: complex
    a: np.ndarray
    H: np.ndarray
    delta: float

    def lhs(self, dk: np.ndarray) -> np.ndarray:
        dk = np.asarray(dk, dtype=float)
        return dk @ self.a + 0.5 * np.einsum("...j,jl,...l->...", dk, self.H, dk)

    def holds(self, dk: np.ndarray) -> np.ndarray:
        return self.lhs(dk) < self.delta


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple[SlopeConstraint, ...]
    k_star: np.ndarray
    axes: tuple[str, ...]
    excluded: dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.constraints)

    @property
    def a(self) -> np.ndarray:
        return np.array([c.a for c in self.constraints]).reshape(len(self), len(self.k_star))

    @property
    def H(self) -> np.ndarray:
        nd = len(self.k_star)
        return np.array([c.H for c in self.constraints]).reshape(len(self), nd, nd)

    @property
    def delta(self) -> np.ndarray:
        return np.array([c.delta for c in self.constraints])

    def lhs(self, dk: np.ndarray) -> np.ndarray:
        """Left sides for deviations ``dk`` of shape ``(..., n_droop)``; result ``(..., n_constraints)``."""
        dk = np.asarray(dk, dtype=float)
        lin = dk @ self.a.T
        quad = 0.5 * np.einsum("...j,cjl,...l->...c", dk, self.H, dk)
        return lin + quad

    def slack(self, k: np.ndarray) -> np.ndarray:
        """Smallest ``delta - lhs`` over constraints at absolute slopes ``k``; positive means stable."""
        k = np.asarray(k, dtype=float)
        return np.min(self.delta - self.lhs(k - self.k_star), axis=-1)

    def stable(self, k: np.ndarray) -> np.ndarray:
        return self.slack(k) > 0

    def with_constraints(self, extra: Sequence[SlopeConstraint]) -> "ConstraintSet":
        return ConstraintSet(tuple(self.constraints) + tuple(extra), self.k_star, self.axes, dict(self.excluded))


def build_constraints(bundle: SensitivityBundle, k_star: Sequence[float] | None = None) -> ConstraintSet:
    """One constraint per real mode and per conjugate pair, excluded modes skipped."""
    sol = bundle.solution
    if k_star is None:
        if bundle.k is None:
            raise ValueError("expansion slopes unknown; pass k_star")
        k_star = bundle.k
    out = []
    for i in range(sol.n):
        if i in bundle.excluded:
            continue
        p = sol.partner[i]
        if p >= 0 and sol.values[i].imag < 0:
            continue  # keep the upper member of the pair
        H = np.real(bundle.second[i])
        out.append(
            SlopeConstraint(
                mode=i,
                eigenvalue=complex(sol.values[i]),
                a=np.real(bundle.first[i]).copy(),
                H=0.5 * (H + H.T),
                delta=float(bundle.margins[i]),
            )
        )
    return ConstraintSet(tuple(out), np.asarray(k_star, dtype=float), tuple(bundle.axes), dict(bundle.excluded))


def first_positive_root(alpha: float, beta: float, gamma: float) -> float:
    """First ``t > 0`` with ``alpha t^2 + beta t + gamma = 0``, given ``gamma < 0``.

    Returns ``inf`` when the quadratic stays negative for all ``t >= 0``.
    """
    if alpha == 0.0:
        return -gamma / beta if beta > 0 else np.inf
    disc = beta * beta - 4.0 * alpha * gamma
    if disc < 0:
        return np.inf  # only possible for alpha < 0: q < 0 everywhere
    sq = np.sqrt(disc)
    q = -0.5 * (beta + np.copysign(sq, beta))
    roots = []
    if q != 0.0:
        roots += [q / alpha, gamma / q]
    else:
        roots += [np.sqrt(-gamma / alpha)] if -gamma / alpha > 0 else []
    pos = [r for r in roots if r > 0]
    return min(pos) if pos else np.inf


@dataclass(frozen=True)
class SupremumResult:
    axis: int
    axis_name: str
    k_sup: float
    binding_mode: int | None
    init_deviations: np.ndarray
    bounded: bool
    start: float  # slope value the search starts from

    @property
    def delta_k(self) -> float:
        return self.k_sup - self.start

    def as_dict(self, unit: float = 1.0) -> dict:
        return {
            "axis": self.axis_name,
            "k_sup": self.k_sup / unit,
            "bounded": self.bounded,
            "binding_mode": self.binding_mode,
            "start": self.start / unit,
            "init_deviations": (self.init_deviations / unit).tolist(),
        }


def estimate_supremum(
    cs: ConstraintSet,
    axis: int,
    init_deviations: Sequence[float] | None = None,
    cap: float | None = None,
    tol: float = 1e-12,
) -> SupremumResult:
    """Largest slope on ``axis`` keeping every constraint, other deviations fixed.

    ``init_deviations`` are measured from the expansion slopes; its ``axis``
    component sets where the search starts (zero for self-validation).
    """
    nd = len(cs.k_star)
    d0 = np.zeros(nd) if init_deviations is None else np.asarray(init_deviations, dtype=float).copy()
    if d0.shape != (nd,):
        raise ValueError(f"expected {nd} deviations, got {d0.shape}")
    start = float(cs.k_star[axis] + d0[axis])
    if cap is None:
        cap = 100.0 * max(1.0, float(np.max(np.abs(cs.k_star))))
    best, binding = np.inf, None
    for c in cs.constraints:
        g0 = float(c.lhs(d0)) - c.delta
        scale = max(abs(c.delta), abs(float(c.lhs(d0))), 1e-300)
        if g0 >= -tol * scale:
            raise InfeasibleExpansionError(
                f"constraint of mode {c.mode} (lambda={c.eigenvalue:.6g}) is violated at the starting slopes;"
                " the expansion point is not stable"
            )
        alpha = 0.5 * c.H[axis, axis]
        beta = c.a[axis] + float(c.H[axis] @ d0)
        t = first_positive_root(alpha, beta, g0)
        if t < best:
            best, binding = t, c.mode
    axis_name = cs.axes[axis] if axis < len(cs.axes) else f"k[{axis}]"
    if not np.isfinite(best):
        return SupremumResult(axis, axis_name, start + cap, None, d0, False, start)
    return SupremumResult(axis, axis_name, start + best, binding, d0, True, start)


def cross_validate(cs: ConstraintSet, target_slopes: Sequence[float], axes: Sequence[int] | None = None) -> list[SupremumResult]:
    """Suprema at ``target_slopes`` computed from constraints expanded elsewhere."""
    d0 = np.asarray(target_slopes, dtype=float) - cs.k_star
    axes = range(len(cs.k_star)) if axes is None else axes
    return [estimate_supremum(cs, i, d0) for i in axes]


# ---------------------------------------------------------------------------
# eigenvalue-loci oracle


def max_real_part(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


@dataclass(frozen=True)
class LociResult:
    axis: int
    k_sup: float
    f_at_sup: float
    bracket: tuple[float, float]
    iterations: int
    table_k: np.ndarray  # sampled slopes
    table_eigs: np.ndarray  # eigenvalues per sample, rows sorted by (Re, Im)
    crossings: int


def loci_supremum(
    A_of_k: Callable[[np.ndarray], np.ndarray],
    k_base: Sequence[float],
    axis: int,
    bracket: tuple[float, float],
    f_tol: float = 1e-6,
    k_tol: float = 1e-3,
    samples: int = 41,
    max_iter: int = 200,
) -> LociResult:
    """Smallest slope in ``bracket`` where ``max Re lambda`` turns non-negative.

    ``A_of_k`` must build the state matrix from the full slope vector (the
    other entries are taken from ``k_base``).  Also returns the sampled locus
    table used to locate the first crossing.
    """
    k_base = np.asarray(k_base, dtype=float)
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise ValueError("bracket must satisfy lo < hi")

    def point(kv):
        k = k_base.copy()
        k[axis] = kv
        return k

    ks = np.linspace(lo, hi, samples)
    eigs = []
    fvals = []
    for kv in ks:
        lam = np.linalg.eigvals(A_of_k(point(kv)))
        lam = lam[np.lexsort((lam.imag, lam.real))]
        eigs.append(lam)
        fvals.append(lam.real.max())
    fvals = np.array(fvals)
    unstable = fvals >= 0
    changes = np.flatnonzero(unstable[1:] != unstable[:-1])
    if unstable[0]:
        raise NoSignChangeError(f"max Re(lambda) = {fvals[0]:.3g} >= 0 already at the lower bracket end {lo:g}")
    if changes.size == 0:
        raise NoSignChangeError(
            f"no sign change of max Re(lambda) on [{lo:g}, {hi:g}] (max over samples {fvals.max():.3g})"
        )
    if changes.size > 1:
        warnings.warn(
            f"{changes.size} stability changes along axis {axis}; returning the smallest crossing",
            RuntimeWarning,
            stacklevel=2,
        )
    a, b = ks[changes[0]], ks[changes[0] + 1]
    f = lambda kv: max_real_part(A_of_k(point(kv)))  # noqa: E731
    fb = fvals[changes[0] + 1]
    it = 0
    while b - a > k_tol and it < max_iter:
        mid = 0.5 * (a + b)
        fm = f(mid)
        it += 1
        if fm >= 0:
            b, fb = mid, fm
            if fm < f_tol:
                break
        else:
            a = mid
            if -fm < f_tol and b - a <= 1e3 * k_tol:
                # already on the boundary; the stable side is fine to report
                break
    return LociResult(
        axis=axis,
        k_sup=b,
        f_at_sup=fb,
        bracket=(lo, hi),
        iterations=it,
        table_k=ks,
        table_eigs=np.array(eigs),
        crossings=int(changes.size),
    )


# ---------------------------------------------------------------------------
# 2-D region scan


@dataclass(frozen=True)
class RegionGrid:
    axes: tuple[int, int]
    values_i: np.ndarray
    values_j: np.ndarray
    stable: np.ndarray  # shape (len(values_i), len(values_j))
    method: str
    margin: np.ndarray | None = None  # slack (taylor) or -max Re (loci)

    def __post_init__(self):
        if self.stable.shape != (self.values_i.size, self.values_j.size):
            raise ValueError("grid shape does not match axis resolutions")

    def rows(self, unit: float = 1.0):
        for a, ki in enumerate(self.values_i):
            for b, kj in enumerate(self.values_j):
                yield ki / unit, kj / unit, bool(self.stable[a, b]), self.method


def _grid_points(k_base, axes, ranges, resolution):
    i, j = axes
    res = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    vi = np.linspace(ranges[0][0], ranges[0][1], res[0])
    vj = np.linspace(ranges[1][0], ranges[1][1], res[1])
    K = np.broadcast_to(np.asarray(k_base, dtype=float), (res[0], res[1], len(k_base))).copy()
    K[..., i] = vi[:, None]
    K[..., j] = vj[None, :]
    return vi, vj, K


def scan_region(
    source: ConstraintSet | Callable[[np.ndarray], np.ndarray],
    axes: tuple[int, int],
    ranges: tuple[tuple[float, float], tuple[float, float]],
    resolution: int | tuple[int, int],
    k_base: Sequence[float] | None = None,
) -> RegionGrid:
    """Classify a grid over two slope axes.

    ``source`` is a constraint set (taylor) or a function returning the state
    matrix for a full slope vector (loci).  Slopes off the two axes stay at
    ``k_base`` (default: the constraint set's expansion slopes).
    """
    if isinstance(source, ConstraintSet):
        base = source.k_star if k_base is None else k_base
        vi, vj, K = _grid_points(base, axes, ranges, resolution)
        slack = source.slack(K)
        return RegionGrid(tuple(axes), vi, vj, slack > 0, "taylor", slack)
    if k_base is None:
        raise ValueError("k_base is required for the loci scan")
    vi, vj, K = _grid_points(k_base, axes, ranges, resolution)
    marg = np.empty(K.shape[:2])
    for a in range(K.shape[0]):
        for b in range(K.shape[1]):
            marg[a, b] = -max_real_part(source(K[a, b]))
    return RegionGrid(tuple(axes), vi, vj, marg > 0, "loci", marg)


def region_agreement(taylor: RegionGrid, loci: RegionGrid) -> dict:
    """Fraction of matching cells and whether every mismatch touches the loci boundary.

    A cell is on the boundary when it or one of its eight neighbours has the
    opposite loci classification.
    """
    if taylor.stable.shape != loci.stable.shape:
        raise ValueError("grids differ in shape")
    s = loci.stable
    boundary = np.zeros_like(s)
    R, C = s.shape
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            shifted = np.full_like(s, False)
            src = s[max(0, da) : R + min(0, da), max(0, db) : C + min(0, db)]
            tgt_a = slice(max(0, -da), R + min(0, -da))
            tgt_b = slice(max(0, -db), C + min(0, -db))
            shifted[tgt_a, tgt_b] = src != s[tgt_a, tgt_b]
            boundary |= shifted
    mismatch = taylor.stable != s
    return {
        "cells": int(s.size),
        "agreement": float(1.0 - mismatch.mean()),
        "mismatches": int(mismatch.sum()),
        "mismatches_off_boundary": int((mismatch & ~boundary).sum()),
        "adjacent": bool(not np.any(mismatch & ~boundary)),
    }
