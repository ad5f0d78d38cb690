"""Averaged MMC model in rotating coordinates.

The arm-switching-function equations of one phase leg are split into dc,
fundamental and second-harmonic parts and balanced harmonic by harmonic;
third and higher harmonics are dropped.  Fundamental quantities rotate at
``omega0``; circulating (second-harmonic) quantities rotate at ``2*omega0``
with negative phase sequence, i.e. for phase angle ``th_j = omega0*t - phi_j``

    x_j = x_d cos(th_j) - x_q sin(th_j)              (fundamental)
    c_j = c_d cos(2 th_j) - c_q sin(2 th_j)          (second harmonic)

State order::

    [i_dc, i_d, i_q, i2_d, i2_q, v_dc_int, v1_d, v1_q, v2_d, v2_q]

``v_dc_int`` is the dc part of the arm capacitor voltage (the full arm sum,
about twice the pole voltage).  Inputs are ``[v_dc, vref_d, vref_q]`` where
``v_dc`` is the pole-to-ground terminal voltage.

With the modulation ``S_p = 1/2 + vref/V_nom`` the converter emf on the ac
side is close to ``-vref``; the controller in :mod:`droopstab.control`
accounts for that sign.

All functions broadcast: each state component may be a scalar or an array
over several converters, with parameters of matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ConverterSpec

__all__ = [
    "STATE_NAMES",
    "INPUT_NAMES",
    "MmcParams",
    "MmcLinearization",
    "switching_components",
    "mmc_derivative",
    "mmc_linearize",
    "mmc_steady_guess",
    "arm_quantities",
]

STATE_NAMES = ("i_dc", "i_d", "i_q", "i2_d", "i2_q", "v_dc_int", "v1_d", "v1_q", "v2_d", "v2_q")
INPUT_NAMES = ("v_dc", "vref_d", "vref_q")


@dataclass(frozen=True)
class MmcParams:
    """Electrical data of one or more converters, as floats or arrays."""

    c_arm: np.ndarray | float  # C_SM / N
    l_arm: np.ndarray | float
    r_arm: np.ndarray | float
    l0: np.ndarray | float
    r0: np.ndarray | float
    v_nom: np.ndarray | float
    omega0: np.ndarray | float

    @classmethod
    def from_spec(cls, spec: ConverterSpec) -> "MmcParams":
        return cls(
            c_arm=spec.c_sm / spec.n_sm,
            l_arm=spec.l_arm,
            r_arm=spec.r_arm,
            l0=spec.l0,
            r0=spec.r0,
            v_nom=spec.v_dc_nom,
            omega0=spec.omega0,
        )

    @classmethod
    def stack(cls, specs: Sequence[ConverterSpec]) -> "MmcParams":
        return cls(
            c_arm=np.array([s.c_sm / s.n_sm for s in specs]),
            l_arm=np.array([s.l_arm for s in specs]),
            r_arm=np.array([s.r_arm for s in specs]),
            l0=np.array([s.l0 for s in specs]),
            r0=np.array([s.r0 for s in specs]),
            v_nom=np.array([s.v_dc_nom for s in specs]),
            omega0=np.array([s.omega0 for s in specs]),
        )

    def unit(self, i: int) -> "MmcParams":
        return MmcParams(*(np.asarray(getattr(self, f))[i] for f in self.__dataclass_fields__))

    @property
    def l_ac(self):
        return self.l_arm / 2.0 + self.l0

    @property
    def r_ac(self):
        return self.r_arm / 2.0 + self.r0


@dataclass(frozen=True)
class MmcLinearization:
    A1: np.ndarray
    B1: np.ndarray
    x: np.ndarray
    u: np.ndarray


def switching_components(vref_d, vref_q, v_dc_nom):
    """dc and fundamental (d, q) parts of the upper-arm switching function.

    The lower arm has the same dc part and the negated fundamental, so the
    two always sum to one.
    """
    return 0.5, vref_d / v_dc_nom, vref_q / v_dc_nom


def mmc_derivative(x, u, pcc_dq, p: MmcParams) -> np.ndarray:
    """Time derivative of the 10-state model; ``x`` has shape ``(10, ...)``."""
    I, id_, iq, cd, cq, V, v1d, v1q, v2d, v2q = x
    vdc, vrd, vrq = u
    vpd, vpq = pcc_dq
    _, md, mq = switching_components(vrd, vrq, p.v_nom)
    L, R, w = p.l_arm, p.r_arm, p.omega0
    lac, rac = p.l_ac, p.r_ac
    ca2 = 2.0 * p.c_arm

    dI = (2.0 * vdc - V - (md * v1d + mq * v1q) - (2.0 / 3.0) * R * I) / (2.0 * L / 3.0)
    did = (-0.5 * v1d - V * md - 0.5 * (md * v2d + mq * v2q) - rac * id_ - vpd) / lac + w * iq
    diq = (-0.5 * v1q - V * mq - 0.5 * (md * v2q - mq * v2d) - rac * iq - vpq) / lac - w * id_
    dcd = (-v2d - (md * v1d - mq * v1q) - 2.0 * R * cd) / (2.0 * L) + 2.0 * w * cq
    dcq = (-v2q - (md * v1q + mq * v1d) - 2.0 * R * cq) / (2.0 * L) - 2.0 * w * cd
    dV = (I / 3.0 + 0.5 * (md * id_ + mq * iq)) / ca2
    dv1d = (0.5 * id_ + (2.0 / 3.0) * I * md + (md * cd + mq * cq)) / ca2 + w * v1q
    dv1q = (0.5 * iq + (2.0 / 3.0) * I * mq + (md * cq - mq * cd)) / ca2 - w * v1d
    dv2d = (cd + 0.5 * (md * id_ - mq * iq)) / ca2 + 2.0 * w * v2q
    dv2q = (cq + 0.5 * (md * iq + mq * id_)) / ca2 - 2.0 * w * v2d
    return np.array([dI, did, diq, dcd, dcq, dV, dv1d, dv1q, dv2d, dv2q])


def mmc_linearize(x, u, pcc_dq, p: MmcParams) -> MmcLinearization:
    """Analytic Jacobians of :func:`mmc_derivative` for a single converter."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    I, id_, iq, cd, cq, V, v1d, v1q, v2d, v2q = x
    _, md, mq = switching_components(u[1], u[2], p.v_nom)
    L, R, w = float(p.l_arm), float(p.r_arm), float(p.omega0)
    lac, rac = float(p.l_ac), float(p.r_ac)
    ca2 = 2.0 * float(p.c_arm)
    vn = float(p.v_nom)

    A = np.zeros((10, 10))
    # jacobian w.r.t. (md, mq); chain rule to vref below
    Dm = np.zeros((10, 2))

    l3 = 2.0 * L / 3.0
    A[0, 0] = -(2.0 / 3.0) * R / l3
    A[0, 5] = -1.0 / l3
    A[0, 6] = -md / l3
    A[0, 7] = -mq / l3
    Dm[0] = [-v1d / l3, -v1q / l3]

    A[1, 1] = -rac / lac
    A[1, 2] = w
    A[1, 5] = -md / lac
    A[1, 6] = -0.5 / lac
    A[1, 8] = -0.5 * md / lac
    A[1, 9] = -0.5 * mq / lac
    Dm[1] = [(-V - 0.5 * v2d) / lac, -0.5 * v2q / lac]

    A[2, 1] = -w
    A[2, 2] = -rac / lac
    A[2, 5] = -mq / lac
    A[2, 7] = -0.5 / lac
    A[2, 8] = 0.5 * mq / lac
    A[2, 9] = -0.5 * md / lac
    Dm[2] = [-0.5 * v2q / lac, (-V + 0.5 * v2d) / lac]

    l2 = 2.0 * L
    A[3, 3] = -2.0 * R / l2
    A[3, 4] = 2.0 * w
    A[3, 6] = -md / l2
    A[3, 7] = mq / l2
    A[3, 8] = -1.0 / l2
    Dm[3] = [-v1d / l2, v1q / l2]

    A[4, 3] = -2.0 * w
    A[4, 4] = -2.0 * R / l2
    A[4, 6] = -mq / l2
    A[4, 7] = -md / l2
    A[4, 9] = -1.0 / l2
    Dm[4] = [-v1q / l2, -v1d / l2]

    A[5, 0] = 1.0 / (3.0 * ca2)
    A[5, 1] = 0.5 * md / ca2
    A[5, 2] = 0.5 * mq / ca2
    Dm[5] = [0.5 * id_ / ca2, 0.5 * iq / ca2]

    A[6, 0] = (2.0 / 3.0) * md / ca2
    A[6, 1] = 0.5 / ca2
    A[6, 3] = md / ca2
    A[6, 4] = mq / ca2
    A[6, 7] = w
    Dm[6] = [((2.0 / 3.0) * I + cd) / ca2, cq / ca2]

    A[7, 0] = (2.0 / 3.0) * mq / ca2
    A[7, 2] = 0.5 / ca2
    A[7, 3] = -mq / ca2
    A[7, 4] = md / ca2
    A[7, 6] = -w
    Dm[7] = [cq / ca2, ((2.0 / 3.0) * I - cd) / ca2]

    A[8, 1] = 0.5 * md / ca2
    A[8, 2] = -0.5 * mq / ca2
    A[8, 3] = 1.0 / ca2
    A[8, 9] = 2.0 * w
    Dm[8] = [0.5 * id_ / ca2, -0.5 * iq / ca2]

    A[9, 1] = 0.5 * mq / ca2
    A[9, 2] = 0.5 * md / ca2
    A[9, 4] = 1.0 / ca2
    A[9, 8] = -2.0 * w
    Dm[9] = [0.5 * iq / ca2, 0.5 * id_ / ca2]

    B = np.zeros((10, 3))
    B[0, 0] = 2.0 / l3
    B[:, 1:] = Dm / vn
    return MmcLinearization(A1=A, B1=B, x=x.copy(), u=u.copy())


def mmc_steady_guess(p_ac: float, q_ac: float, v_pole: float, pcc_dq, p: MmcParams) -> tuple[np.ndarray, np.ndarray]:
    """Rough steady state ignoring capacitor ripple and circulating current.

    Used only to seed the Newton solve.
    """
    vpd, vpq = pcc_dq
    mag2 = vpd**2 + vpq**2
    id_ = (2.0 / 3.0) * (p_ac * vpd + q_ac * vpq) / mag2
    iq = (2.0 / 3.0) * (p_ac * vpq - q_ac * vpd) / mag2
    emf = complex(vpd, vpq) + complex(p.r_ac, p.omega0 * p.l_ac) * complex(id_, iq)
    V = 2.0 * v_pole
    vref = -emf * p.v_nom / V
    i_dc = p_ac / (2.0 * v_pole)
    x = np.array([i_dc, id_, iq, 0.0, 0.0, V, 0.0, 0.0, 0.0, 0.0])
    u = np.array([v_pole, vref.real, vref.imag])
    return x, u


def arm_quantities(x, u, p: MmcParams, theta) -> dict[str, np.ndarray]:
    """Reconstruct phase-domain arm quantities from the rotating-frame state.

    ``theta`` is ``omega0*t`` (array allowed); returns arrays with a leading
    phase axis of length 3 for arm currents ``i_p, i_n``, arm voltages
    ``v_p, v_n``, switching functions ``s_p, s_n`` and phase current ``i``.
    """
    I, id_, iq, cd, cq, V, v1d, v1q, v2d, v2q = x
    _, md, mq = switching_components(u[1], u[2], p.v_nom)
    theta = np.asarray(theta, dtype=float)
    th = theta[None, ...] - (2.0 * np.pi / 3.0) * np.arange(3).reshape((3,) + (1,) * theta.ndim)
    c1, s1 = np.cos(th), np.sin(th)
    c2, s2 = np.cos(2 * th), np.sin(2 * th)
    i_ph = id_ * c1 - iq * s1
    circ = cd * c2 - cq * s2
    v1 = v1d * c1 - v1q * s1
    v2 = v2d * c2 - v2q * s2
    m = md * c1 - mq * s1
    return {
        "i": i_ph,
        "i_p": I / 3.0 + 0.5 * i_ph + circ,
        "i_n": I / 3.0 - 0.5 * i_ph + circ,
        "v_p": V + v1 + v2,
        "v_n": V - v1 + v2,
        "s_p": 0.5 + m,
        "s_n": 0.5 - m,
    }
