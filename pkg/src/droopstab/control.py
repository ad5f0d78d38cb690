"""Cascaded dq power/current controller and the P-V droop law.

The controller realizes the usual two-loop scheme:

* outer PI loops on ``P_ref - P`` and ``Q_ref - Q`` give current references
  (``P`` drives ``i_d``; ``Q`` drives ``-i_q``, correct for a d-aligned PCC
  voltage);
* inner PI loops on the current errors, plus optional PCC-voltage
  feedforward and ``omega0*L`` cross-coupling decoupling, give the wanted
  converter emf ``e_dq``.

The modulator puts the emf at ``-vref`` (see :mod:`droopstab.converter`), so
the controller outputs ``vref = -e``.  With the PCC voltage fixed, the power
measurement is linear in the currents and the realization below is exact,
not a linearization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import ControllerGains, ConverterSpec, DroopParams, SystemConfig

__all__ = [
    "DroopParams",
    "ControllerModel",
    "pcc_power",
    "droop_reference",
    "retune_droop",
    "controller_model",
    "droop_gain_matrix",
    "STATE_NAMES",
]

STATE_NAMES = ("xi_d", "xi_q", "xP", "xQ")


@dataclass(frozen=True)
class ControllerModel:
    """``dx/dt = A2 x + B2 u``, ``vref = C2 x + D2 u + y0``.

    state ``[xi_d, xi_q, xP, xQ]``, input ``[P_ref, Q_ref, i_d, i_q]``,
    output ``[vref_d, vref_q]``.  ``y0`` is the constant feedforward part.
    """

    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    D2: np.ndarray
    y0: np.ndarray


def pcc_power(v_d, v_q, i_d, i_q):
    p = 1.5 * (v_d * i_d + v_q * i_q)
    q = 1.5 * (v_q * i_d - v_d * i_q)
    return p, q


def droop_reference(droop: DroopParams, v_dc):
    return -droop.k * (droop.v_dc_ref - v_dc) + droop.p0


def retune_droop(droop: DroopParams, k_new: float, v_dc_star: float) -> DroopParams:
    """New slope with ``p0`` shifted so the reference at ``v_dc_star`` is unchanged."""
    p0 = droop.p0 + (k_new - droop.k) * (droop.v_dc_ref - v_dc_star)
    return replace(droop, k=k_new, p0=p0)


def controller_model(gains: ControllerGains, spec: ConverterSpec) -> ControllerModel:
    vd, vq = spec.pcc_voltage_dq
    w_l = spec.omega0 * (spec.l_arm / 2.0 + spec.l0)
    kp_i, ki_i, kp_pq, ki_pq = gains.kp_i, gains.ki_i, gains.kp_pq, gains.ki_pq
    ff = 1.0 if gains.voltage_feedforward else 0.0
    dec = 1.0 if gains.decoupling else 0.0

    dP = np.array([0.0, 0.0, 1.5 * vd, 1.5 * vq])
    dQ = np.array([0.0, 0.0, 1.5 * vq, -1.5 * vd])
    e = np.eye(4)

    # current references as functions of (x, u)
    id_ref_x = ki_pq * e[2]
    id_ref_u = kp_pq * (e[0] - dP)
    iq_ref_x = -ki_pq * e[3]
    iq_ref_u = -kp_pq * (e[1] - dQ)

    A2 = np.vstack([id_ref_x, iq_ref_x, np.zeros(4), np.zeros(4)])
    B2 = np.vstack([id_ref_u - e[2], iq_ref_u - e[3], e[0] - dP, e[1] - dQ])

    ed_x = kp_i * id_ref_x + ki_i * e[0]
    eq_x = kp_i * iq_ref_x + ki_i * e[1]
    ed_u = kp_i * (id_ref_u - e[2]) - dec * w_l * e[3]
    eq_u = kp_i * (iq_ref_u - e[3]) + dec * w_l * e[2]

    C2 = -np.vstack([ed_x, eq_x])
    D2 = -np.vstack([ed_u, eq_u])
    y0 = -ff * np.array([vd, vq])
    return ControllerModel(A2=A2, B2=B2, C2=C2, D2=D2, y0=y0)


def droop_gain_matrix(config: SystemConfig | Sequence[ConverterSpec]) -> np.ndarray:
    convs = config.converters if isinstance(config, SystemConfig) else config
    return np.diag([c.droop.k if c.droop is not None else 0.0 for c in convs])
