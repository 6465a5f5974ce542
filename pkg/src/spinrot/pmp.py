"""Hamiltonian-lift dynamics for the two-offset time-optimal problem.

The lift of the resonant spin, ``l0``, rotates about x at rate ``w_x``; the lift
of the detuned spin, ``l1``, rotates about ``(w_x, 0, delta1)``::

    d/dt l0 = (w_x, 0, 0) x l0
    d/dt l1 = (w_x, 0, delta1) x l1

The switching function is ``l_x = l0_x + l1_x`` and regular arcs use
``w_x = omega0 * sign(l_x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .so3 import rodrigues

SINGULAR_GUARD = 1e-12


class SingularSetError(ValueError):
    """The lift sits on the singular set (``l1_y = 0`` or ``A = 0``)."""


@dataclass(frozen=True)
class LiftState:
    l0: tuple[float, float, float]
    l1: tuple[float, float, float]
    delta1: float

    def __post_init__(self):
        object.__setattr__(self, "l0", tuple(float(v) for v in self.l0))
        object.__setattr__(self, "l1", tuple(float(v) for v in self.l1))
        if not self.delta1 > 0:
            raise ValueError("delta1 must be > 0")

    @property
    def lx(self) -> float:
        """Switching function ``l0_x + l1_x``."""
        return self.l0[0] + self.l1[0]

    def hamiltonian(self, omega_x: float) -> float:
        return omega_x * self.lx + self.delta1 * self.l1[2]


@dataclass(frozen=True)
class SwitchParam:
    """Bang parameters: ``A`` (``None`` encodes an infinite value) and ``Omega``."""

    A: float | None
    Omega: float

    @classmethod
    def from_state(cls, state: LiftState, control_sign: int, omega0: float) -> "SwitchParam":
        l1x, l1y, l1z = state.l1
        omega = math.hypot(omega0, state.delta1)
        if abs(l1y) < SINGULAR_GUARD * max(np.linalg.norm(state.l1), 1e-300):
            raise SingularSetError("singular-set input: l1_y vanishes")
        w = control_sign * omega0
        return cls((l1x * state.delta1 - l1z * w) / (l1y * omega), omega)


def lift_evolve(state: LiftState, control_sign: int, omega0: float, t: float) -> LiftState:
    """Rigidly rotate both lifts for time ``t`` under ``w_x = control_sign * omega0``."""
    if control_sign not in (1, -1):
        raise ValueError("control_sign must be +1 or -1")
    if t < 0:
        raise ValueError("t must be >= 0")
    w = control_sign * omega0
    # d/dt l = c x l = hat(-c) l, so l(t) = exp(t hat(-c)) l(0)
    r0 = rodrigues(np.array([-w, 0.0, 0.0]), t)
    r1 = rodrigues(np.array([-w, 0.0, -state.delta1]), t)
    return LiftState(r0 @ np.asarray(state.l0), r1 @ np.asarray(state.l1), state.delta1)


def l1y_closed_form(state: LiftState, control_sign: int, omega0: float, t) -> np.ndarray:
    """``l1_y(t) = l1_y cos(W t) + (l1_x delta1 - l1_z w_x) / W sin(W t)``."""
    l1x, l1y, l1z = state.l1
    w = control_sign * omega0
    omega = math.hypot(omega0, state.delta1)
    t = np.asarray(t, dtype=float)
    return l1y * np.cos(omega * t) + (l1x * state.delta1 - l1z * w) / omega * np.sin(omega * t)


def switching_function_closed_form(state: LiftState, control_sign: int, omega0: float, t) -> np.ndarray:
    """Closed form of ``l_x(t)`` while the control is held at ``control_sign * omega0``."""
    l1x, l1y, l1z = state.l1
    d1 = state.delta1
    w = control_sign * omega0
    omega = math.hypot(omega0, d1)
    t = np.asarray(t, dtype=float)
    b = (l1x * d1 - l1z * w) / omega
    return state.lx - d1 / omega * (l1y * np.sin(omega * t) + b * (1 - np.cos(omega * t)))


def lift_rhs(y: np.ndarray, omega_x: float, delta1: float) -> np.ndarray:
    """Right-hand side of the lift ODE for ``y = (l0, l1)`` stacked (used by oracles)."""
    l0, l1 = y[:3], y[3:]
    return np.concatenate((np.cross([omega_x, 0.0, 0.0], l0), np.cross([omega_x, 0.0, delta1], l1)))


def _check_param(p: SwitchParam) -> None:
    if p.A is None or not math.isfinite(p.A) or p.A == 0:
        raise SingularSetError("singular-set input: A must be finite and nonzero")
    if not p.Omega > 0:
        raise ValueError("Omega must be > 0")


def next_bang_duration(p: SwitchParam, k_max: int = 4) -> float:
    """Smallest ``t > 0`` with ``sin(W t) + A (1 - cos(W t)) = 0``.

    Roots come in two families, ``(2/W) k pi`` and ``(2/W)(k pi - arctan(1/A))``
    with the principal arctan.  For ``A < 0`` the second family is already
    positive at ``k = 0``, so that index is included; the result always equals
    ``(2/W)(pi/2 + arctan(A))`` and is shorter than the period ``2 pi / W``.
    """
    _check_param(p)
    at = math.atan(1.0 / p.A)
    cands = [2.0 / p.Omega * k * math.pi for k in range(1, k_max + 1)]
    cands += [2.0 / p.Omega * (k * math.pi - at) for k in range(0, k_max + 1)]
    positive = [c for c in cands if c > 1e-15]
    return min(positive)


def singular_crossing_times(p: SwitchParam, k_max: int = 4) -> list[float]:
    """Times ``(1/W)(k pi - arctan(1/A))`` at which ``l1_y`` vanishes (positive ones only).

    ``k = 0`` is kept when it yields a positive time (``A < 0``).
    """
    _check_param(p)
    at = math.atan(1.0 / p.A)
    times = [(k * math.pi - at) / p.Omega for k in range(0, k_max + 1)]
    return [t for t in times if t > 0]


def is_singular_arc(state: LiftState, omega_s: float, tol: float = 1e-9) -> bool:
    """Check ``l_x = 0``, ``l1_y = 0`` and ``-delta1^2 l1_x + omega_s delta1 l1_z = 0``."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    l1 = np.asarray(state.l1)
    n1 = max(float(np.linalg.norm(l1)), 1.0)
    scale = max(float(np.linalg.norm(state.l0)), n1)
    d1 = state.delta1
    return (abs(state.lx) < tol * scale
            and abs(l1[1]) < tol * scale
            and abs(-d1 * d1 * l1[0] + omega_s * d1 * l1[2]) < tol * d1 * n1)


def singular_exit_lx(l1x_at_switch: float, delta1: float, omega0: float, omega_s: float, t,
                     control_sign: int = 1):
    """Switching function after leaving a singular arc onto a bang ``control_sign * omega0``.

    ``l_x(t) = -(delta1^2 / W^2) l1_x (1 - w_x / omega_s)(1 - cos(W t))``; it keeps one
    sign on ``(0, 2 pi / W)`` and only returns to zero at multiples of ``2 pi / W``.
    """
    if not abs(omega_s) < omega0:
        raise ValueError("|omega_s| must be < omega0")
    omega2 = omega0**2 + delta1**2
    w = control_sign * omega0
    t = np.asarray(t, dtype=float)
    out = -(delta1**2 / omega2) * l1x_at_switch * (1 - w / omega_s) * (1 - np.cos(np.sqrt(omega2) * t))
    return out if out.ndim else float(out)


def next_switch(state: LiftState, omega0: float) -> tuple[int, float]:
    """At a switching point (``l_x = 0``) return the next bang's sign and duration.

    Just after the switch ``l_x ~ -delta1 l1_y t``, which fixes the sign.
    """
    sign = -1 if state.l1[1] > 0 else 1
    return sign, next_bang_duration(SwitchParam.from_state(state, sign, omega0))


def regular_extremal(state: LiftState, omega0: float, n_bangs: int) -> tuple[list[int], list[float], LiftState]:
    """Follow a regular extremal from a switching point through ``n_bangs`` bangs."""
    signs, durations = [], []
    for _ in range(n_bangs):
        sign, dur = next_switch(state, omega0)
        state = lift_evolve(state, sign, omega0, dur)
        signs.append(sign)
        durations.append(dur)
    return signs, durations, state
