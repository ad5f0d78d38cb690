"""Eigensolution with biorthonormal left/right vectors and slope sensitivities.

Left eigenvectors are stored as columns ``Z[:, i]`` with ``Z[:, i] @ A =
lambda_i Z[:, i]`` (plain transpose, no conjugation) and ``Z[:, i] @ W[:, i]
= 1``.  Right eigenvectors have unit 2-norm.

For a matrix affine in the slopes, ``A(k) = A0 + sum_j k_j M_j``:

    d lambda_i / dk_j          = z_i^T M_j w_i
    d w_i / dk_j               = sum_{c != i} (z_c^T M_j w_i) / (lambda_i - lambda_c) w_c
    d2 lambda_i / dk_j dk_l    = z_i^T M_l dw_i/dk_j + z_i^T M_j dw_i/dk_l

All three come from the modal coupling matrices ``P_j = Z^T M_j W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

__all__ = [
    "DegenerateModeError",
    "EigenSolution",
    "SensitivityBundle",
    "eig_full",
    "margins",
    "coupling_matrices",
    "first_order_sensitivity",
    "eigvec_derivative",
    "second_order_sensitivity",
    "sensitivity_bundle",
    "match_eigenvalues",
    "fd_eigen_derivatives",
    "DEGENERACY_GAP",
    "balanced_norm",
]

#: relative eigenvalue gap (to ||A||_2) below which a mode is excluded
DEGENERACY_GAP = 1e-6
_NORMALIZATION_FLOOR = 1e-13


class DegenerateModeError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSolution:
    values: np.ndarray
    W: np.ndarray  # right eigenvectors as columns
    Z: np.ndarray  # left eigenvectors as columns, Z[:, i] @ W[:, i] = 1
    partner: np.ndarray  # index of the conjugate partner, -1 for real modes
    gaps: np.ndarray
    norm: float  # 2-norm of the balanced matrix, see balanced_norm
    ill_normalized: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.values.size

    def residual(self, A: np.ndarray) -> float:
        """Largest ``||A w_i - lambda_i w_i||_2`` relative to ``||A||_2``."""
        R = A @ self.W - self.W * self.values[None, :]
        return float(np.max(np.linalg.norm(R, axis=0)) / self.norm)

    def biorthogonality(self) -> float:
        """Largest deviation of ``Z^T W`` from the identity."""
        G = self.Z.T @ self.W
        return float(np.max(np.abs(G - np.eye(self.n))))

    def degenerate(self, rel_gap: float = DEGENERACY_GAP) -> np.ndarray:
        return self.gaps < rel_gap * self.norm

    def real_modes(self) -> np.ndarray:
        return np.flatnonzero(self.partner < 0)


def _pairing(values: np.ndarray, tol: float) -> np.ndarray:
    partner = np.full(values.size, -1)
    is_complex = np.abs(values.imag) > tol * np.maximum(1.0, np.abs(values))
    used = np.zeros(values.size, bool)
    for i in np.flatnonzero(is_complex):
        if used[i]:
            continue
        cand = np.flatnonzero(is_complex & ~used)
        cand = cand[cand != i]
        if cand.size == 0:
            raise ValueError(f"eigenvalue {values[i]} has no conjugate partner")
        j = cand[np.argmin(np.abs(values[cand] - np.conj(values[i])))]
        if abs(values[j] - np.conj(values[i])) > 1e3 * tol * max(1.0, abs(values[i])):
            raise ValueError(f"eigenvalue {values[i]} has no conjugate partner")
        partner[i], partner[j] = j, i
        used[i] = used[j] = True
    return partner


def _gaps(values: np.ndarray) -> np.ndarray:
    d = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1) if values.size > 1 else np.full(values.size, np.inf)


def balanced_norm(A: np.ndarray) -> float:
    """2-norm of ``A`` after diagonal balancing.

    Eigenvalues are invariant under the balancing similarity, while the raw
    2-norm depends on the units chosen for each state; the balanced norm is
    the scale used for relative eigenvalue gaps and residuals.
    """
    B, _ = sla.matrix_balance(np.asarray(A, dtype=float), permute=False)
    return float(np.linalg.norm(B, 2))


def eig_full(A: np.ndarray, scale: np.ndarray | None = None) -> EigenSolution:
    """All eigenpairs of a real matrix, sorted by (Re, Im).

    ``scale`` is an optional diagonal similarity (typical state magnitudes);
    the decomposition is computed on ``D^-1 A D`` and mapped back, which
    helps when states carry very different units.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    N = A.shape[0]
    d = np.ones(N) if scale is None else np.asarray(scale, dtype=float)
    As = A * d[None, :] / d[:, None]
    try:
        lam, vl, vr = sla.eig(As, left=True, right=True)
    except sla.LinAlgError as exc:
        raise RuntimeError(f"eigensolver did not converge: {exc}") from None
    order = np.lexsort((lam.imag, lam.real))
    lam, vl, vr = lam[order], vl[:, order], vr[:, order]
    W = vr * d[:, None]
    Z = np.conj(vl) / d[:, None]
    W = W / np.linalg.norm(W, axis=0)[None, :]
    s = np.einsum("ij,ij->j", Z, W)
    zn = np.linalg.norm(Z, axis=0)
    bad = tuple(int(i) for i in np.flatnonzero(np.abs(s) < _NORMALIZATION_FLOOR * zn))
    s_safe = np.where(np.abs(s) < _NORMALIZATION_FLOOR * zn, 1.0, s)
    Z = Z / s_safe[None, :]
    return EigenSolution(
        values=lam,
        W=W,
        Z=Z,
        partner=_pairing(lam, 1e-10),
        gaps=_gaps(lam),
        norm=balanced_norm(A),
        ill_normalized=bad,
    )


def margins(solution: EigenSolution | np.ndarray) -> np.ndarray:
    """Stability margins ``-Re(lambda)``."""
    values = solution.values if isinstance(solution, EigenSolution) else np.asarray(solution)
    return -np.real(values)


def coupling_matrices(solution: EigenSolution, M: Sequence[np.ndarray]) -> np.ndarray:
    """Stack of ``Z^T M_j W``, shape ``(n_droop, N, N)``."""
    return np.stack([solution.Z.T @ (np.asarray(Mj) @ solution.W) for Mj in M]) if len(M) else np.zeros((0, solution.n, solution.n))


def first_order_sensitivity(solution: EigenSolution, M: Sequence[np.ndarray]) -> np.ndarray:
    """``d lambda_i / d k_j`` for all modes, shape ``(N, n_droop)``."""
    out = np.empty((solution.n, len(M)), dtype=complex)
    for j, Mj in enumerate(M):
        out[:, j] = np.einsum("ij,ij->j", solution.Z, np.asarray(Mj) @ solution.W)
    return out


def _check_mode(solution: EigenSolution, i: int, rel_gap: float) -> None:
    if solution.gaps[i] < rel_gap * solution.norm:
        others = np.flatnonzero(np.abs(solution.values - solution.values[i]) < rel_gap * solution.norm)
        raise DegenerateModeError(
            f"mode {i} is clustered with eigenvalues {[complex(solution.values[c]) for c in others]}"
            f" (gap {solution.gaps[i]:.3g} below {rel_gap:g}*||A||)"
        )


def eigvec_derivative(
    solution: EigenSolution, Mj: np.ndarray, i: int, rel_gap: float = DEGENERACY_GAP
) -> np.ndarray:
    """Modal-expansion derivative of ``w_i`` (no component along ``w_i``)."""
    _check_mode(solution, i, rel_gap)
    coeff = solution.Z.T @ (np.asarray(Mj) @ solution.W[:, i])
    diff = solution.values[i] - solution.values
    diff[i] = 1.0
    coeff = coeff / diff
    coeff[i] = 0.0
    return solution.W @ coeff


def second_order_sensitivity(
    solution: EigenSolution,
    M: Sequence[np.ndarray],
    rel_gap: float = DEGENERACY_GAP,
    coupling: np.ndarray | None = None,
    M2: np.ndarray | None = None,
) -> np.ndarray:
    """``d2 lambda_i / dk_j dk_l``, shape ``(N, n_droop, n_droop)``.

    ``M2[j, l] = d2A / dk_j dk_l`` adds its diagonal modal term for state
    matrices that are not affine in ``k``.  Excluded (clustered) modes get NaN.
    """
    P = coupling_matrices(solution, M) if coupling is None else coupling
    nd, N = P.shape[0], solution.n
    diff = solution.values[:, None] - solution.values[None, :]  # lambda_i - lambda_c
    np.fill_diagonal(diff, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / diff  # infinite only between clustered modes, which are masked below
    # S[j, l, i] = sum_c P_l[i, c] P_j[c, i] / (lambda_i - lambda_c)
    with np.errstate(invalid="ignore"):
        S = np.einsum("lic,jci,ic->ijl", P, P, inv, optimize=True) if nd else np.zeros((N, 0, 0))
    out = S + np.swapaxes(S, 1, 2)
    if M2 is not None:
        out = out + np.einsum("ai,jlab,bi->ijl", solution.Z, np.asarray(M2), solution.W, optimize=True)
    out[solution.degenerate(rel_gap)] = np.nan
    return out


@dataclass(frozen=True)
class SensitivityBundle:
    solution: EigenSolution
    first: np.ndarray  # (N, n_droop)
    second: np.ndarray  # (N, n_droop, n_droop)
    margins: np.ndarray
    excluded: dict[int, str] = field(default_factory=dict)
    axes: tuple[str, ...] = ()
    k: np.ndarray | None = None  # expansion slopes

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.solution.n, bool)
        mask[list(self.excluded)] = False
        return mask


def sensitivity_bundle(
    A: np.ndarray,
    M: Sequence[np.ndarray],
    axes: Sequence[str] = (),
    k: Sequence[float] | None = None,
    rel_gap: float = DEGENERACY_GAP,
    scale: np.ndarray | None = None,
    M2: np.ndarray | None = None,
) -> SensitivityBundle:
    """Eigenvalues, margins and first/second slope sensitivities of ``A``.

    ``M`` holds ``dA/dk_j``; ``M2`` optionally ``d2A/dk_j dk_l`` (zero for the
    grid model, whose state matrix is affine in the slopes).
    """
    sol = eig_full(A, scale=scale)
    P = coupling_matrices(sol, M)
    first = np.stack([np.diagonal(Pj) for Pj in P], axis=1) if len(M) else np.zeros((sol.n, 0), complex)
    second = second_order_sensitivity(sol, M, rel_gap, coupling=P, M2=M2)
    excluded: dict[int, str] = {}
    for i in np.flatnonzero(sol.degenerate(rel_gap)):
        excluded[int(i)] = f"eigenvalue gap {sol.gaps[i]:.3g} below {rel_gap:g}*||A||"
    for i in sol.ill_normalized:
        excluded[int(i)] = "left/right eigenvectors nearly orthogonal (defective mode)"
    first = first.copy()
    for i in excluded:
        first[i] = np.nan
        second[i] = np.nan
    return SensitivityBundle(
        solution=sol,
        first=first,
        second=second,
        margins=margins(sol),
        excluded=excluded,
        axes=tuple(axes),
        k=None if k is None else np.asarray(k, dtype=float),
    )


# ---------------------------------------------------------------------------
# finite-difference oracle


def match_eigenvalues(ref: np.ndarray, new: np.ndarray, ref_vecs=None, new_vecs=None) -> np.ndarray:
    """Permutation ``p`` so that ``new[p[i]]`` tracks ``ref[i]``.

    Minimum-cost assignment on eigenvalue distance; when vectors are given a
    small overlap term breaks ties between near-equal candidates.
    """
    cost = np.abs(ref[:, None] - new[None, :])
    if ref_vecs is not None and new_vecs is not None:
        ov = np.abs(ref_vecs.conj().T @ new_vecs)
        cost = cost + 1e-9 * (1.0 + np.abs(ref)[:, None]) * (1.0 - ov)
    rows, cols = linear_sum_assignment(cost)
    p = np.empty(ref.size, dtype=int)
    p[rows] = cols
    return p


def fd_eigen_derivatives(
    A_of_k: Callable[[np.ndarray], np.ndarray],
    k0: Sequence[float],
    axis: int,
    step: float | None = None,
    values0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Central first and second differences of every eigenvalue along ``axis``.

    Returns ``(d1, d2, h)`` aligned with ``values0`` (the eigenvalues at
    ``k0``, in the order of :func:`eig_full` if not supplied).
    """
    k0 = np.asarray(k0, dtype=float)
    h = step if step is not None else np.cbrt(np.finfo(float).eps) * max(1.0, abs(k0[axis]))
    lam0 = eig_full(A_of_k(k0)).values if values0 is None else values0
    out = {}
    for s in (-1, 1):
        k = k0.copy()
        k[axis] += s * h
        lam = np.linalg.eigvals(A_of_k(k))
        out[s] = lam[match_eigenvalues(lam0, lam)]
    d1 = (out[1] - out[-1]) / (2 * h)
    d2 = (out[1] - 2 * lam0 + out[-1]) / h**2
    return d1, d2, h
