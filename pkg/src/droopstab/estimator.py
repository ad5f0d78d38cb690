"""Scikit-learn style front end for the second-order slope stability region."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import SystemConfig, load_config
from .modal import DEGENERACY_GAP
from .pipeline import SlopeStudy
from .region import SupremumResult, build_constraints, cross_validate, estimate_supremum

__all__ = ["DroopStabilityRegion", "check_slopes"]


def check_slopes(K, n_axes: int | None = None) -> np.ndarray:
    """Slope samples as a finite, non-negative ``(n_samples, n_axes)`` float array.

    A single slope vector is promoted to one row.
    """
    arr = np.asarray(K, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = check_array(arr, dtype=float, ensure_all_finite=True)
    if n_axes is not None and arr.shape[1] != n_axes:
        raise ValueError(f"expected {n_axes} slopes per sample, got {arr.shape[1]}")
    if np.any(arr < 0):
        raise ValueError("droop slopes must be non-negative")
    return arr


class DroopStabilityRegion(ClassifierMixin, BaseEstimator):
    """Stability classifier over droop-slope vectors.

    ``fit`` expands the spectrum of the linearized grid at the given slopes
    (one row; default: the slopes of the configuration) and stores the
    quadratic constraints.  ``predict`` returns 1 for slope vectors that
    satisfy every constraint and 0 otherwise; ``decision_function`` returns
    the smallest constraint slack in 1/s.

    Slopes are in W/V.
    """

    def __init__(self, config=None, rel_gap: float = DEGENERACY_GAP):
        self.config = config
        self.rel_gap = rel_gap

    def _study(self) -> SlopeStudy:
        cfg = self.config
        if cfg is None:
            from .config import reference_path

            cfg = reference_path()
        if isinstance(cfg, (str, Path)):
            cfg = load_config(cfg)
        if not isinstance(cfg, SystemConfig):
            raise TypeError("config must be a SystemConfig or a path")
        return SlopeStudy(cfg, rel_gap=self.rel_gap)

    def fit(self, X=None, y=None):
        study = self._study()
        n_axes = len(study.axes)
        k_star = study.k_nominal if X is None else check_slopes(X, n_axes)
        if k_star.ndim == 2:
            if k_star.shape[0] != 1:
                raise ValueError("fit takes exactly one expansion slope vector")
            k_star = k_star[0]
        self.study_ = study
        self.axes_ = study.axes
        self.n_features_in_ = n_axes
        self.k_star_ = np.asarray(k_star, dtype=float)
        self.bundle_ = study.sensitivities(self.k_star_)
        self.constraints_ = build_constraints(self.bundle_)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "constraints_")
        K = check_slopes(X, self.n_features_in_)
        return self.constraints_.slack(K)

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)

    def supremum(self, axis: int | str, at=None) -> SupremumResult:
        """Largest slope on ``axis`` with the other slopes at ``at`` (default: the expansion slopes)."""
        check_is_fitted(self, "constraints_")
        i = self.axes_.index(axis) if isinstance(axis, str) else int(axis)
        d0 = None if at is None else check_slopes(at, self.n_features_in_)[0] - self.k_star_
        return estimate_supremum(self.constraints_, i, d0)

    def suprema(self, at=None) -> list[SupremumResult]:
        check_is_fitted(self, "constraints_")
        if at is None:
            return [estimate_supremum(self.constraints_, i) for i in range(self.n_features_in_)]
        return cross_validate(self.constraints_, check_slopes(at, self.n_features_in_)[0])

