"""Operating point, time-domain simulation and the phase-domain MMC reference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from . import control, converter
from .assembly import GridSystem, Setpoints
from .config import ScenarioEvent, SystemConfig

log = logging.getLogger(__name__)

__all__ = [
    "ConvergenceError",
    "OperatingPoint",
    "Trajectory",
    "initial_guess",
    "solve_equilibrium",
    "simulate",
    "simulate_linear",
    "asf_phase_reference",
    "harmonic_components",
]

RESIDUAL_TOL = 1e-8
VOLTAGE_BAND = 0.2


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


@dataclass(frozen=True)
class OperatingPoint:
    x: np.ndarray
    setpoints: Setpoints
    residual_norm: float
    iterations: int = 0
    method: str = "newton"

    def v_dc(self, grid: GridSystem) -> np.ndarray:
        return self.x[grid.vdc_index]


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # states x samples
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    diverged: bool = False
    kind: str = "nonlinear"

    def __post_init__(self):
        if self.x.shape[1] != self.t.size:
            raise ValueError("sample count differs from time grid length")

    def channel_table(self) -> tuple[list[str], np.ndarray]:
        names = ["t"] + list(self.channels)
        return names, np.column_stack([self.t] + [self.channels[k] for k in self.channels])


def residual_weights(grid: GridSystem, X: np.ndarray, sp: Setpoints, scale: np.ndarray) -> np.ndarray:
    """Size of the terms that make up each row of the vector field at ``X``."""
    return np.abs(grid.jacobian(X, sp)) @ scale + np.abs(grid.rhs(np.zeros_like(X), sp))


def equation_residual(grid: GridSystem, X: np.ndarray, sp: Setpoints, scale: np.ndarray) -> float:
    """``max_i |F_i| / w_i``: each row's imbalance relative to its own terms."""
    w = residual_weights(grid, X, sp, scale)
    return float(np.max(np.abs(grid.rhs(X, sp)) / w))


def initial_guess(grid: GridSystem, sp: Setpoints | None = None) -> np.ndarray:
    """Seed from per-unit power set-points at reference dc voltage."""
    sp = sp or grid.setpoints
    n, m = grid.n, grid.m
    x1 = np.zeros((10, n))
    x2 = np.zeros((4, n))
    v_pole = sp.v_ref.copy()
    for i, (g, c) in enumerate(zip(grid.config.gains, grid.config.converters)):
        p = grid.mmc.unit(i)
        xi, ui = converter.mmc_steady_guess(sp.p0[i], sp.q[i], v_pole[i], c.pcc_voltage_dq, p)
        x1[:, i] = xi
        vd, vq = c.pcc_voltage_dq
        wl = c.omega0 * float(p.l_ac)
        ff = 1.0 if g.voltage_feedforward else 0.0
        dec = 1.0 if g.decoupling else 0.0
        x2[0, i] = (-ui[1] - ff * vd + dec * wl * xi[2]) / g.ki_i
        x2[1, i] = (-ui[2] - ff * vq - dec * wl * xi[1]) / g.ki_i
        x2[2, i] = xi[1] / g.ki_pq
        x2[3, i] = -xi[2] / g.ki_pq
    x3 = np.concatenate([np.zeros(2 * m), np.full(m, v_pole.mean()), v_pole])
    return np.concatenate([x1.reshape(-1), x2.reshape(-1), x3])


def _newton(grid: GridSystem, X: np.ndarray, sp: Setpoints, scale: np.ndarray, max_iter: int):
    def measure(Y, w):
        r = np.abs(grid.rhs(Y, sp)) / w
        return float(np.max(r)) if np.all(np.isfinite(r)) else np.inf

    for it in range(1, max_iter + 1):
        J = grid.jacobian(X, sp)
        F = grid.rhs(X, sp)
        w = np.abs(J) @ scale + np.abs(grid.rhs(np.zeros_like(X), sp))
        res = measure(X, w)
        # column/row scaling keeps the solve well conditioned
        Js = J * scale[None, :] / scale[:, None]
        try:
            step = -scale * np.linalg.solve(Js, F / scale)
        except np.linalg.LinAlgError:
            return X, np.inf, it
        lam = 1.0
        while True:
            X_new = X + lam * step
            res_new = measure(X_new, w)
            if res_new < res or lam < 1e-4:
                break
            lam *= 0.5
        X = X_new
        if np.max(np.abs(lam * step / scale)) < 1e-13:
            break
    return X, equation_residual(grid, X, sp, scale), it


def solve_equilibrium(
    system: GridSystem | SystemConfig,
    setpoints: Setpoints | None = None,
    x0: np.ndarray | None = None,
    max_iter: int = 50,
    march_horizon: float = 5.0,
) -> OperatingPoint:
    """Newton on the full nonlinear vector field, with time-march fallback.

    The residual is :func:`equation_residual`, the largest row imbalance
    relative to the magnitude of that row's terms (state scales from
    :meth:`GridSystem.state_scales`).
    """
    grid = system if isinstance(system, GridSystem) else GridSystem(system)
    sp = setpoints or grid.setpoints
    scale = grid.state_scales()
    X0 = initial_guess(grid, sp) if x0 is None else np.asarray(x0, dtype=float)
    X, res, it = _newton(grid, X0, sp, scale, max_iter)
    method = "newton"
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        log.info("Newton stalled at residual %.3g; time-marching", res)
        traj = march_to_quiescence(grid, X0, sp, horizon=march_horizon)
        X, res, it2 = _newton(grid, traj.x[:, -1], sp, scale, max_iter)
        it += it2
        method = "march+newton"
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise ConvergenceError(f"equilibrium not found: final residual {res:.3g}", res)
    v = X[grid.vdc_index]
    v_nom = grid.mmc.v_nom / 2.0
    if np.any(np.abs(v - v_nom) > VOLTAGE_BAND * v_nom):
        raise ConvergenceError(
            f"equilibrium outside voltage band: v_dc/v_nom in [{(v / v_nom).min():.3f}, {(v / v_nom).max():.3f}]",
            res,
        )
    return OperatingPoint(x=X, setpoints=sp, residual_norm=res, iterations=it, method=method)


# ---------------------------------------------------------------------------
# time integration


class _Trapezoid:
    """Fixed-step trapezoidal rule with a modified-Newton corrector."""

    def __init__(self, f, jac, h: float, scale: np.ndarray, tol: float = 1e-10, max_iter: int = 12):
        self.f, self.jac, self.h = f, jac, h
        self.scale = scale
        self.tol = tol
        self.max_iter = max_iter
        self._lu = None

    def refactor(self, x):
        n = x.size
        self._lu = sla.lu_factor(np.eye(n) - 0.5 * self.h * self.jac(x))

    def step(self, x: np.ndarray, fx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._lu is None:
            self.refactor(x)
        h = self.h
        y = x + h * fx
        base = x + 0.5 * h * fx
        for attempt in range(2):
            prev = np.inf
            for _ in range(self.max_iter):
                fy = self.f(y)
                g = y - base - 0.5 * h * fy
                dy = sla.lu_solve(self._lu, -g)
                y = y + dy
                err = np.max(np.abs(dy / self.scale))
                if err < self.tol:
                    return y, self.f(y)
                if err > 0.5 * prev and err > 1e3 * self.tol:
                    break
                prev = err
            if not np.all(np.isfinite(y)):
                break
            # slow convergence: fresh Jacobian at the predictor and retry
            self.refactor(y)
            y = x + h * fx
        raise ConvergenceError("trapezoidal corrector did not converge (step-size too large for stiffness?)")


def _channels(grid: GridSystem, X: np.ndarray, sp_list: Sequence[Setpoints]) -> dict[str, np.ndarray]:
    n = grid.n
    x1 = X[grid.sl1].reshape(10, n, -1)
    vd, vq = grid.pcc
    P, Q = control.pcc_power(vd[:, None], vq[:, None], x1[1], x1[2])
    out = {}
    v = X[grid.vdc_index]
    for i, node in enumerate(grid.config.nodes):
        out[f"v_dc[{node}]"] = v[i]
    for i, node in enumerate(grid.config.nodes):
        out[f"P[{node}]"] = P[i]
    for i, node in enumerate(grid.config.nodes):
        out[f"Q[{node}]"] = Q[i]
    for i, node in enumerate(grid.config.nodes):
        out[f"P_ref[{node}]"] = np.array([sp.p_ref(v[:, s])[i] for s, sp in enumerate(sp_list)])
    return out


def _apply_event(grid: GridSystem, sp: Setpoints, ev: ScenarioEvent, v_star: np.ndarray) -> Setpoints:
    i = grid.config.node_index(ev.node)
    p0, k, v_ref, q = sp.p0.copy(), sp.k.copy(), sp.v_ref.copy(), sp.q.copy()
    if ev.quantity == "p_set":
        if grid.config.converters[i].mode == "droop":
            p0[i] += ev.value - grid.config.converters[i].p_set
        else:
            p0[i] = ev.value
    elif ev.quantity == "p0":
        p0[i] = ev.value
    elif ev.quantity == "q_set":
        q[i] = ev.value
    elif ev.quantity == "v_dc_ref":
        v_ref[i] = ev.value
    elif ev.quantity == "k":
        if grid.config.converters[i].mode != "droop":
            raise ValueError(f"slope step on fixed-power converter {ev.node}")
        if ev.compensate_p0:
            p0[i] += (ev.value - k[i]) * (v_ref[i] - v_star[i])
        k[i] = ev.value
    return Setpoints(p0=p0, k=k, v_ref=v_ref, q=q)


def march_to_quiescence(
    grid: GridSystem,
    x0: np.ndarray,
    sp: Setpoints,
    horizon: float = 5.0,
    h: float = 50e-6,
    threshold: float = 1e-3,
    window: float = 0.2,
) -> Trajectory:
    """Integrate until the scaled derivative stays below ``threshold`` for ``window`` s."""
    scale = grid.state_scales()
    integ = _Trapezoid(lambda x: grid.rhs(x, sp), lambda x: grid.jacobian(x, sp), h, scale)
    x = np.array(x0, dtype=float)
    fx = grid.rhs(x, sp)
    t, quiet, n_steps = 0.0, 0.0, int(round(horizon / h))
    refresh = max(1, int(round(0.01 / h)))
    for step in range(n_steps):
        if step % refresh == 0:
            integ.refactor(x)
        x, fx = integ.step(x, fx)
        t += h
        quiet = quiet + h if np.max(np.abs(fx / scale)) < threshold else 0.0
        if quiet >= window:
            break
    return Trajectory(t=np.array([0.0, t]), x=np.column_stack([x0, x]), kind="march")


def simulate(
    system: GridSystem,
    op: OperatingPoint,
    scenario: Sequence[ScenarioEvent] | None = None,
    t_end: float = 3.0,
    h: float = 50e-6,
    save_dt: float = 1e-3,
    x0: np.ndarray | None = None,
    guard: float = 20.0,
    tol: float = 1e-10,
) -> Trajectory:
    """Integrate the nonlinear grid from ``op`` (or ``x0``) applying ``scenario``.

    A run whose scaled deviation from ``op`` exceeds ``guard`` is cut short and
    returned with ``diverged=True``.
    """
    grid = system
    scenario = sorted(scenario if scenario is not None else grid.config.scenario, key=lambda e: e.time)
    scale = grid.state_scales()
    v_star = op.x[grid.vdc_index]
    sp = op.setpoints
    x = np.array(op.x if x0 is None else x0, dtype=float)

    def make(sp_now):
        return _Trapezoid(lambda y: grid.rhs(y, sp_now), lambda y: grid.jacobian(y, sp_now), h, scale, tol=tol)

    integ = make(sp)
    fx = grid.rhs(x, sp)
    n_steps = int(round(t_end / h))
    every = max(1, int(round(save_dt / h)))
    ts, xs, sps = [0.0], [x.copy()], [sp]
    pending = list(scenario)
    diverged = False
    refresh = max(1, int(round(0.05 / h)))
    for step in range(1, n_steps + 1):
        t = step * h
        while pending and pending[0].time <= t - 0.5 * h:
            sp = _apply_event(grid, sp, pending.pop(0), v_star)
            integ = make(sp)
            fx = grid.rhs(x, sp)
        if step % refresh == 0:
            integ.refactor(x)
        try:
            x, fx = integ.step(x, fx)
        except ConvergenceError:
            if np.max(np.abs((x - op.x) / scale)) > 0.1 * guard:
                diverged = True
                break
            raise
        if not np.all(np.isfinite(x)) or np.max(np.abs((x - op.x) / scale)) > guard:
            diverged = True
            ts.append(t)
            xs.append(np.where(np.isfinite(x), x, np.nan))
            sps.append(sp)
            break
        if step % every == 0:
            ts.append(t)
            xs.append(x.copy())
            sps.append(sp)
    X = np.column_stack(xs)
    return Trajectory(t=np.array(ts), x=X, channels=_channels(grid, X, sps), diverged=diverged)


def simulate_linear(
    system: GridSystem,
    op: OperatingPoint,
    scenario: Sequence[ScenarioEvent] | None = None,
    t_end: float = 3.0,
    h: float = 50e-6,
    save_dt: float = 1e-3,
    guard: float = 20.0,
) -> Trajectory:
    """Same scheme applied to the small-signal model around ``op``.

    Set-point steps enter through constant input columns; slope steps switch
    the state matrix (``P0`` compensation keeps the operating point).
    """
    grid = system
    scenario = sorted(scenario if scenario is not None else grid.config.scenario, key=lambda e: e.time)
    scale = grid.state_scales()
    v_star = op.x[grid.vdc_index]
    sp0 = op.setpoints
    n = grid.n
    model = grid.linearize(op.x, sp0)
    N = grid.n_states
    # input columns for P_ref and Q_ref of every unit
    Bp = grid.setpoint_input(op.x, range(n), sp0)
    Bq = grid.setpoint_input(op.x, [n + i for i in range(n)], sp0)

    def discrete(A):
        lhs = np.eye(N) - 0.5 * h * A
        lu = sla.lu_factor(lhs)
        return sla.lu_solve(lu, np.eye(N) + 0.5 * h * A), lu

    def forcing(sp):
        # deviation of P_ref/Q_ref from the operating point, at fixed v_dc
        dp = sp.p_ref(v_star) - sp0.p_ref(v_star)
        dq = sp.q - sp0.q
        return Bp @ dp + Bq @ dq

    sp = sp0
    A = model.A_ss
    Phi, lu = discrete(A)
    b = forcing(sp)
    dx = np.zeros(N)
    n_steps = int(round(t_end / h))
    every = max(1, int(round(save_dt / h)))
    ts, xs, sps = [0.0], [op.x.copy()], [sp]
    pending = list(scenario)
    diverged = False
    for step in range(1, n_steps + 1):
        t = step * h
        while pending and pending[0].time <= t - 0.5 * h:
            sp = _apply_event(grid, sp, pending.pop(0), v_star)
            A = model.at(sp.k[list(grid.droop_indices)]) if grid.droop_indices else model.A0
            Phi, lu = discrete(A)
            b = forcing(sp)
        dx = Phi @ dx + sla.lu_solve(lu, h * b)
        if not np.all(np.isfinite(dx)) or np.max(np.abs(dx / scale)) > guard:
            diverged = True
            ts.append(t)
            xs.append(op.x + dx)
            sps.append(sp)
            break
        if step % every == 0:
            ts.append(t)
            xs.append(op.x + dx)
            sps.append(sp)
    X = np.column_stack(xs)
    return Trajectory(t=np.array(ts), x=X, channels=_channels(grid, X, sps), diverged=diverged, kind="linear")


# ---------------------------------------------------------------------------
# phase-domain arm-switching-function reference


def harmonic_components(t: np.ndarray, y: np.ndarray, omega0: float, phase_shift: float) -> tuple[float, complex, complex]:
    """dc value and fundamental / second-harmonic phasors over whole cycles.

    Phasors follow ``y = Re[Y1 e^{j th}] + Re[Y2 e^{j 2 th}]`` with
    ``th = omega0 t - phase_shift``; ``t`` must be uniform and span an integer
    number of periods (endpoint excluded).
    """
    th = omega0 * t - phase_shift
    dc = float(np.mean(y))
    y1 = 2.0 * np.mean(y * np.exp(-1j * th))
    y2 = 2.0 * np.mean(y * np.exp(-2j * th))
    return dc, complex(y1), complex(y2)


def asf_phase_reference(
    config: SystemConfig,
    unit: int | str,
    v_dc: float,
    vref_dq: tuple[float, float],
    t_end: float = 0.2,
    x_init: np.ndarray | None = None,
    rtol: float = 1e-9,
    samples_per_cycle: int = 2000,
) -> dict:
    """Integrate the six-arm phase-domain equations with fixed terminal voltage.

    The switching functions are driven by the constant ``vref_dq`` rotated at
    ``omega0``.  Returns the per-phase trajectory of the last cycle and the
    harmonic coefficients mapped to the 10 rotating-frame states.
    """
    idx = config.node_index(unit) if isinstance(unit, str) else int(unit)
    spec = config.converters[idx]
    p = converter.MmcParams.from_spec(spec)
    w = spec.omega0
    L, R, L0, R0 = spec.l_arm, spec.r_arm, spec.l0, spec.r0
    c_arm = spec.c_sm / spec.n_sm
    vpd, vpq = spec.pcc_voltage_dq
    _, md, mq = converter.switching_components(vref_dq[0], vref_dq[1], spec.v_dc_nom)
    shifts = (2.0 * np.pi / 3.0) * np.arange(3)
    mass = np.array([[L + L0, -L0], [-L0, L + L0]])
    mass_inv = np.linalg.inv(mass)

    def rhs(t, y):
        y = y.reshape(4, 3)  # i_p, i_n, v_p, v_n per phase
        ip, in_, vp, vn = y
        th = w * t - shifts
        m = md * np.cos(th) - mq * np.sin(th)
        vpcc = vpd * np.cos(th) - vpq * np.sin(th)
        sp, sn = 0.5 + m, 0.5 - m
        i_ph = ip - in_
        r_up = v_dc - sp * vp - R * ip - vpcc - R0 * i_ph
        r_lo = v_dc - sn * vn - R * in_ + vpcc + R0 * i_ph
        di = mass_inv @ np.vstack([r_up, r_lo])
        dvp = sp * ip / c_arm
        dvn = sn * in_ / c_arm
        return np.concatenate([di[0], di[1], dvp, dvn])

    u = np.array([v_dc, vref_dq[0], vref_dq[1]])
    if x_init is None:
        # dq steady state for these inputs: the model is affine in x at fixed u
        lin = converter.mmc_linearize(np.zeros(10), u, (vpd, vpq), p)
        f0 = converter.mmc_derivative(np.zeros(10), u, (vpd, vpq), p)
        x_init = np.linalg.solve(lin.A1, -f0)
    arms = converter.arm_quantities(x_init, u, p, 0.0)
    y0 = np.concatenate([arms["i_p"].ravel(), arms["i_n"].ravel(), arms["v_p"].ravel(), arms["v_n"].ravel()])
    period = 2.0 * np.pi / w
    n_cyc = max(1, int(np.floor(t_end / period)))
    t_end = n_cyc * period
    t_eval = t_end - period + period * np.arange(samples_per_cycle) / samples_per_cycle
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="Radau", rtol=rtol, atol=1e-9 * spec.v_dc_nom, t_eval=t_eval)
    if not sol.success:
        raise ConvergenceError(f"phase-domain integration failed: {sol.message}")
    Y = sol.y.reshape(4, 3, -1)
    ip, in_, vp, vn = Y
    th = w * sol.t[None, :] - shifts[:, None]
    m = md * np.cos(th) - mq * np.sin(th)
    comps = np.zeros((3, 10))
    for j in range(3):
        dc_s, _, c2 = harmonic_components(sol.t, ip[j] + in_[j], w, shifts[j])
        _, i1, _ = harmonic_components(sol.t, ip[j] - in_[j], w, shifts[j])
        dc_v, _, v2 = harmonic_components(sol.t, vp[j] + vn[j], w, shifts[j])
        _, v1, _ = harmonic_components(sol.t, vp[j] - vn[j], w, shifts[j])
        comps[j] = [
            1.5 * dc_s,
            i1.real,
            i1.imag,
            0.5 * c2.real,
            0.5 * c2.imag,
            0.5 * dc_v,
            0.5 * v1.real,
            0.5 * v1.imag,
            0.5 * v2.real,
            0.5 * v2.imag,
        ]
    return {
        "t": sol.t,
        "i_p": ip,
        "i_n": in_,
        "v_p": vp,
        "v_n": vn,
        "s_p": 0.5 + m,
        "s_n": 0.5 - m,
        "components_per_phase": comps,
        "components": comps.mean(axis=0),
        "dq_state": np.asarray(x_init, dtype=float),
    }


def asf_matched_reference(
    config: SystemConfig,
    unit: int | str,
    x_dq: np.ndarray,
    u: np.ndarray,
    t_end: float = 0.3,
    rel_tol: float = 1e-3,
    max_iter: int = 6,
    **kw,
) -> dict:
    """Phase-domain run with the modulation trimmed to the dq fundamental current.

    In closed loop the current controller sets the modulation so that the ac
    current follows its reference; here the same role is played by a
    quasi-Newton update of ``vref`` using the steady-state dq sensitivity
    ``d(i_d, i_q)/d(vref)``.  ``x_dq`` and ``u = (v_dc, vref_d, vref_q)`` are the
    unit's rotating-frame operating point.
    """
    idx = config.node_index(unit) if isinstance(unit, str) else int(unit)
    spec = config.converters[idx]
    p = converter.MmcParams.from_spec(spec)
    x_dq = np.asarray(x_dq, dtype=float)
    u = np.asarray(u, dtype=float)
    lin = converter.mmc_linearize(x_dq, u, spec.pcc_voltage_dq, p)
    J = -np.linalg.solve(lin.A1, lin.B1)[1:3, 1:]
    target = x_dq[1:3]
    vref = u[1:].copy()
    for it in range(max_iter):
        out = asf_phase_reference(config, idx, u[0], tuple(vref), t_end=t_end, **kw)
        err = out["components"][1:3] - target
        if np.max(np.abs(err)) <= rel_tol * np.max(np.abs(target)):
            break
        vref = vref - np.linalg.solve(J, err)
    else:
        raise ConvergenceError("modulation trim did not converge", float(np.max(np.abs(err))))
    out["vref_dq"] = vref
    out["trim_iterations"] = it + 1
    return out
