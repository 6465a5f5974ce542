"""Closed-form pulse designers for selective and robust x-rotations.

All designers re-simulate their output with :func:`propagate`; nothing is
returned on the strength of the constraint algebra alone.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .propagation import (ControlField, profile_derivative, propagate_derivative_offset,
                          propagate_matrices)
from .so3 import matrix_to_quat, rodrigues, x_rotation

TWO_PI = 2.0 * math.pi
VERIFY_TOL = 1e-9


class DesignError(ValueError):
    """A designer's preconditions fail or no admissible design exists."""


@dataclass(frozen=True)
class SelectiveDesign:
    """Constant sub-maximal pulse rotating resonance by ``phi`` and ``delta1`` by ``2 pi``."""

    omega_s: float
    t_s: float
    delta1: float
    phi: float
    omega0: float

    @property
    def field(self) -> ControlField:
        return ControlField(self.omega0, ((self.omega_s, self.t_s),))


@dataclass(frozen=True)
class RobustFamilyParams:
    """Parameters of the one- and two-switch robust families.

    ``first_sign`` overrides the default sign of the first bang (+1 for one
    switch, -1 for two switches).
    """

    switches: int
    n: int
    k: int
    phi: float
    omega0: float = 1.0
    alpha: float = 1.0
    first_sign: int | None = None

    def __post_init__(self):
        if self.switches not in (1, 2):
            raise DesignError("switches must be 1 or 2")
        if self.n < 1 or self.k < 1:
            raise DesignError("n and k must be positive integers")
        if not (0 < self.phi < TWO_PI):
            raise DesignError("phi must lie in (0, 2 pi)")
        if not self.omega0 > 0:
            raise DesignError("omega0 must be > 0")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DesignError("alpha must be positive and finite")
        if self.first_sign not in (None, 1, -1):
            raise DesignError("first_sign must be +1 or -1")


@dataclass
class DesignReport:
    field: ControlField
    total_time: float
    identity_offsets: list[float]
    curvature_at_zero: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "field": self.field.to_dict(),
            "total_time": self.total_time,
            "identity_offsets": list(self.identity_offsets),
            "curvature_at_zero": self.curvature_at_zero,
            "notes": list(self.notes),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "DesignReport":
        return cls(ControlField.from_dict(data["field"]), float(data["total_time"]),
                   [float(d) for d in data["identity_offsets"]], float(data["curvature_at_zero"]),
                   list(data.get("notes", [])))


def _check_phi(phi: float) -> None:
    if not (0 < phi < TWO_PI):
        raise DesignError(f"phi must lie in (0, 2 pi) (got {phi})")


def delta0(phi: float, omega0: float = 1.0) -> float:
    """Smallest offset sent to the identity by the full-amplitude pulse of angle ``phi``."""
    _check_phi(phi)
    if not omega0 > 0:
        raise DesignError("omega0 must be > 0")
    return omega0 / phi * math.sqrt(4 * math.pi**2 - phi**2)


def _max_dev(u: np.ndarray, target: np.ndarray) -> float:
    return float(np.max(np.abs(u - target)))


def design_selective(phi: float, delta1: float, omega0: float = 1.0) -> SelectiveDesign:
    """Singular (constant) pulse: ``T_S = sqrt(4 pi^2 - phi^2) / delta1``, ``omega_S = phi / T_S``."""
    _check_phi(phi)
    if not delta1 > 0:
        raise DesignError("delta1 must be > 0")
    d0 = delta0(phi, omega0)
    if delta1 > d0 * (1 + 1e-12):
        raise DesignError(f"no admissible singular pulse: delta1 = {delta1:g} exceeds "
                          f"delta0 = {d0:.12g} (amplitude would exceed omega0)")
    t_s = math.sqrt(4 * math.pi**2 - phi**2) / delta1
    omega_s = min(phi / t_s, omega0)
    design = SelectiveDesign(omega_s, t_s, delta1, phi, omega0)
    u = propagate_matrices(design.field, [0.0, delta1])
    err = max(_max_dev(u[0], x_rotation(phi).matrix), _max_dev(u[1], np.eye(3)))
    if err > 1e-10:
        raise DesignError(f"selective design failed verification (deviation {err:.2e})")
    return design


def curvature_at_resonance(t1: float, t3: float, omega0: float = 1.0) -> float:
    """Closed-form ``d^2F/d delta^2`` at 0 for the two-switch pi-pulse family.

    ``16 (3 - 2 cos(w0 t1) - 2 cos(w0 t3) + 2 cos(w0 (t1 + t3))) / w0^2``; the
    ``1/w0^2`` factor comes from ``F`` depending on ``delta`` only via ``delta/w0``.
    """
    if t1 < 0 or t3 < 0:
        raise DesignError("t1 and t3 must be >= 0")
    a, b = omega0 * t1, omega0 * t3
    return 16.0 * (3 - 2 * math.cos(a) - 2 * math.cos(b) + 2 * math.cos(a + b)) / omega0**2


def symmetric_bang_solutions(t: float, omega0: float = 1.0, atol: float = 1e-12) -> list[float]:
    """Real asymmetries ``a`` (``t1 = t - a``, ``t3 = t + a``) with zero curvature at resonance.

    Solves ``w0 a = +-arccos((3 + 2 cos(2 w0 t)) / (4 cos(w0 t))) + 2 m pi`` and keeps
    the values with ``|a| <= t`` so both outer bangs have non-negative length.  The
    argument never lies inside ``(-1, 1)``; real solutions exist only where it is
    exactly ``+-1`` (``cos(w0 t) = +-1/2``).
    """
    c = math.cos(omega0 * t)
    if abs(c) < 1e-15:
        raise DesignError("cos(omega0 t) must be nonzero")
    arg = (3 + 2 * math.cos(2 * omega0 * t)) / (4 * c)
    if abs(arg) > 1 + atol:
        return []
    base = math.acos(max(-1.0, min(1.0, arg)))
    m_max = int(math.ceil(abs(omega0 * t) / TWO_PI)) + 1
    sols = set()
    for m in range(-m_max, m_max + 1):
        for s in (1, -1):
            a = (s * base + TWO_PI * m) / omega0
            if abs(a) <= t + 1e-12:
                sols.add(round(a, 12) + 0.0)
    return sorted(sols)


def identity_offsets(field: ControlField, delta_max: float, grid: int = 4000) -> list[float]:
    """Offsets in ``(0, delta_max]`` whose propagator is (numerically) the identity.

    The trace of the propagator is scanned on ``grid`` points; every interior local
    maximum is refined by bisection on the sign of ``d tr U / d delta`` (computed
    analytically) to ``1e-10`` and kept if the refined trace reaches ``3 - 1e-6``.
    ``delta = 0`` itself is never reported.
    """
    if not delta_max > 0:
        raise ValueError("delta_max must be > 0")
    deltas = np.linspace(0.0, delta_max, max(int(grid), 3))
    tr = np.trace(propagate_matrices(field, deltas), axis1=1, axis2=2)

    def slope(d: float) -> float:
        _, du = propagate_derivative_offset(field, [d])
        return float(np.trace(du[0]))

    found = []
    for i in range(1, len(deltas) - 1):
        if not (tr[i] >= tr[i - 1] and tr[i] >= tr[i + 1]) or tr[i] < 2.0:
            continue
        lo, hi = deltas[i - 1], deltas[i + 1]
        if slope(lo) > 0 and slope(hi) < 0:
            while hi - lo > 1e-10:
                mid = 0.5 * (lo + hi)
                if slope(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
        else:
            root = deltas[i]
        if root <= 0 or np.trace(propagate_matrices(field, [root])[0]) < 3 - 1e-6:
            continue
        if not found or root - found[-1] > 1e-8:
            found.append(float(root))
    return found


def _default_scan(field: ControlField, hint: float | None) -> tuple[float, int]:
    delta_max = max(10.0 * field.omega0, 1.5 * hint if hint else 0.0)
    per_period = 40
    grid = int(math.ceil(delta_max * field.total_duration * per_period / TWO_PI)) + 1
    return delta_max, max(grid, 2000)


def _verified_identity_offsets(field: ControlField, hint: float | None = None) -> list[float]:
    dmax, grid = _default_scan(field, hint)
    offs = identity_offsets(field, dmax, grid)
    if not offs:
        return []
    u = propagate_matrices(field, offs)
    return [d for d, m in zip(offs, u) if _max_dev(m, np.eye(3)) < VERIFY_TOL]


def _verify_resonance(field: ControlField, phi: float) -> None:
    err = _max_dev(propagate_matrices(field, [0.0])[0], x_rotation(phi).matrix)
    if err > 1e-10:
        raise DesignError(f"design misses the resonant target by {err:.2e}")


def design_robust_one_switch(params: RobustFamilyParams) -> DesignReport:
    """Two bangs with ``t1 = t2 + phi/w0`` and ``t2 = (phi / 2 w0)(n/k - 1)``.

    The bang-bang identity constraints predict ``delta1`` from
    ``(t1 - t2) sqrt(w0^2 + delta1^2) = 2 k pi``.  That prediction is kept only if
    propagation confirms it: for ``n + k`` odd both bangs are odd multiples of a
    half-turn about non-collinear axes and their product is not the identity.
    """
    if params.switches != 1:
        raise DesignError("design_robust_one_switch needs switches = 1")
    n, k, phi, w0 = params.n, params.k, params.phi, params.omega0
    if n < k:
        raise DesignError("degenerate family: n must be >= k")
    sign = params.first_sign or 1
    t2 = phi / (2 * w0) * (n / k - 1)
    t1 = t2 + phi / w0
    notes = []
    if n == k:
        notes.append("n = k: second bang vanishes, plain constant pulse")
    fld = ControlField.bangs([sign, -sign], [t1, t2], w0)
    if sign < 0:
        # net rotation -phi; only the default sign reaches exp(phi EPS_X)
        notes.append("first_sign = -1 rotates resonance by -phi")
    else:
        _verify_resonance(fld, phi)
    omega = TWO_PI * k / (t1 - t2)
    predicted = math.sqrt(omega**2 - w0**2) if omega > w0 else None
    found = _verified_identity_offsets(fld, predicted)
    if predicted is not None:
        dev = _max_dev(propagate_matrices(fld, [predicted])[0], np.eye(3))
        if dev < VERIFY_TOL:
            if not any(abs(d - predicted) < 1e-8 for d in found):
                found = sorted(found + [predicted])
        else:
            notes.append(f"predicted identity offset {predicted:.12g} not confirmed by "
                         f"propagation (max deviation {dev:.3g}); n + k odd")
    curv = profile_derivative(fld, x_rotation(phi), 0.0, order=2)
    return DesignReport(fld, fld.total_duration, found, curv, notes)


def design_robust_two_switch(params: RobustFamilyParams) -> DesignReport:
    """Bangs ``(-w0, +w0, -w0)`` with ``t1 + t3 = (phi/w0)(n/k - 1)``, ``t1 = alpha t3``
    and ``t2 = t1 + t3 + phi/w0``.
    """
    if params.switches != 2:
        raise DesignError("design_robust_two_switch needs switches = 2")
    n, k, phi, w0, alpha = params.n, params.k, params.phi, params.omega0, params.alpha
    if n <= k:
        raise DesignError("degenerate family: n must be > k (t1 + t3 would be <= 0)")
    sign = params.first_sign or -1
    outer = phi / w0 * (n / k - 1)
    t3 = outer / (1 + alpha)
    t1 = alpha * t3
    t2 = outer + phi / w0
    fld = ControlField.bangs([sign, -sign, sign], [t1, t2, t3], w0)
    notes = []
    if sign > 0:
        notes.append("first_sign = +1 rotates resonance by -phi")
    else:
        _verify_resonance(fld, phi)
    # identity: t2 W = 2 n pi and (t1 + t3) W = 2 (n - k) pi with W = 2 pi k w0 / phi
    omega = TWO_PI * k * w0 / phi
    predicted = math.sqrt(omega**2 - w0**2) if omega > w0 else None
    found = _verified_identity_offsets(fld, predicted)
    if predicted is not None:
        dev = _max_dev(propagate_matrices(fld, [predicted])[0], np.eye(3))
        if dev < VERIFY_TOL and not any(abs(d - predicted) < 1e-8 for d in found):
            found = sorted(found + [predicted])
    if abs(phi - math.pi) < 1e-12 and sign < 0:
        curv = curvature_at_resonance(t1, t3, w0)
    else:
        curv = profile_derivative(fld, x_rotation(phi), 0.0, order=2)
        notes.append("curvature from finite differences (closed form holds for phi = pi)")
    return DesignReport(fld, fld.total_duration, found, curv, notes)


def design_robust(params: RobustFamilyParams) -> DesignReport:
    if params.switches == 1:
        return design_robust_one_switch(params)
    return design_robust_two_switch(params)


@dataclass(frozen=True)
class RegularCandidate:
    total_time: float
    signs: tuple[int, ...]
    durations: tuple[float, ...]

    def to_field(self, omega0: float) -> ControlField:
        return ControlField.bangs(self.signs, self.durations, omega0)


def regular_candidates(phi: float, omega0: float, delta1: float, max_switches: int = 3,
                       index_max: int = 8, tol: float = VERIFY_TOL) -> list[RegularCandidate]:
    """All verified bang sequences with at most ``max_switches`` switchings.

    Every identity-constraint family for one, two and three switchings (including
    the collinear-axis branches) fixes each bang angle ``t_j sqrt(w0^2 + delta1^2)``
    to an integer multiple ``p_j pi``; the collinear two-switch branch leaves only
    ``t1 + t3`` fixed and is represented by its symmetric split.  With ``k, n <= index_max``
    the multiples satisfy ``1 <= p_j <= 2 index_max``.  Each sign pattern and
    multiple tuple whose resonant net angle is ``phi`` mod ``2 pi`` is propagated and
    kept only if both targets hold within ``tol``.
    """
    _check_phi(phi)
    if not delta1 > 0:
        raise DesignError("delta1 must be > 0")
    if not 0 <= max_switches <= 3:
        raise DesignError("max_switches must be between 0 and 3")
    omega = math.hypot(omega0, delta1)
    unit = math.pi / omega
    pmax = 2 * index_max
    powers = {}
    for s in (1, -1):
        base = rodrigues(np.array([s * omega0, 0.0, delta1]), unit)
        mats = [np.eye(3)]
        for _ in range(pmax):
            mats.append(base @ mats[-1])
        powers[s] = np.stack(mats)
    target0 = x_rotation(phi).matrix
    out = []
    for nb in range(1, max_switches + 2):
        grid = np.array(list(itertools.product(range(1, pmax + 1), repeat=nb)), dtype=int)
        for first in (1, -1):
            signs = np.array([first * (-1) ** j for j in range(nb)])
            net = omega0 * unit * (grid @ signs)
            resid = np.angle(np.exp(1j * (net - phi)))
            rows = grid[np.abs(resid) < 1e-7]
            if rows.size == 0:
                continue
            u = np.broadcast_to(np.eye(3), (len(rows), 3, 3)).copy()
            for j in range(nb):
                u = powers[int(signs[j])][rows[:, j]] @ u
            ok = np.max(np.abs(u - np.eye(3)), axis=(1, 2)) < tol
            for row in rows[ok]:
                durs = tuple(float(p * unit) for p in row)
                cand = RegularCandidate(float(row.sum() * unit), tuple(int(s) for s in signs), durs)
                u0 = propagate_matrices(cand.to_field(omega0), [0.0])[0]
                if _max_dev(u0, target0) < tol:
                    out.append(cand)
    out.sort(key=lambda c: (c.total_time, len(c.signs)))
    return out


def min_time_regular_candidates(phi: float, omega0: float, delta1: float, max_switches: int = 3,
                                index_max: int = 8) -> float | None:
    """Shortest verified regular (bang-bang) duration, or ``None`` if none exists in bounds."""
    cands = regular_candidates(phi, omega0, delta1, max_switches, index_max)
    return cands[0].total_time if cands else None


def _rotvec(m: np.ndarray) -> np.ndarray:
    q = matrix_to_quat(m)
    s = float(np.linalg.norm(q[1:]))
    if s < 1e-15:
        return 2.0 * q[1:]
    return 2.0 * math.atan2(s, q[0]) * q[1:] / s


def _pair_residual(t: np.ndarray, phi: float, omega0: float, delta1: float) -> np.ndarray:
    fld = ControlField.bangs([1, -1], [max(t[0], 1e-300), t[1]], omega0) if t[1] > 0 else \
        ControlField.bangs([1], [max(t[0], 1e-300)], omega0)
    u = propagate_matrices(fld, [delta1])[0]
    return _rotvec(x_rotation(phi).matrix.T @ u)


@dataclass
class PairSolveFailure:
    t1: float
    t2: float
    residual: float


class PairSolveError(DesignError):
    def __init__(self, message: str, best: PairSolveFailure):
        super().__init__(message)
        self.best = best


def _damped_newton(x0, fun, tol=1e-12, max_iter=200):
    x = np.array(x0, dtype=float)
    r = fun(x)
    lam = 1e-3
    h = 1e-7
    for _ in range(max_iter):
        if np.linalg.norm(r) < tol:
            break
        jac = np.column_stack([(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(2)])
        g = jac.T @ r
        a = jac.T @ jac
        improved = False
        for _ in range(30):
            step = np.linalg.solve(a + lam * np.diag(np.diag(a) + 1e-12), -g)
            xn = np.maximum(x + step, 0.0)
            rn = fun(xn)
            if np.linalg.norm(rn) < np.linalg.norm(r):
                x, r = xn, rn
                lam = max(lam / 3, 1e-12)
                improved = True
                break
            lam *= 4
        if not improved:
            break
    return x, float(np.linalg.norm(r))


def design_locally_robust_pair(phi: float, omega0: float, delta1: float, tol: float = VERIFY_TOL,
                               ratio_max: int = 16) -> tuple[DesignReport, float]:
    """Two-bang field (``+w0`` first) with ``U(+-delta1) = exp(phi EPS_X)``, plus the
    smallest ``delta2 > delta1`` that the same field sends to the identity.

    ``(t1, t2)`` is found by damped Gauss-Newton on the rotation-vector error at
    ``delta1`` from 8 fixed seeds in ``(0, 4 pi]^2``.  ``delta2`` then solves
    ``(t1 - t2) W = 2 k pi`` and ``(t1 + t2) W = 2 n pi`` with ``W = sqrt(w0^2 + delta2^2)``,
    which requires ``(t1 + t2)/(t1 - t2)`` to be a ratio ``n/k`` of small integers.

    Raises :class:`PairSolveError` (carrying the best point found) when no seed
    converges.
    """
    _check_phi(phi)
    d0 = delta0(phi, omega0)
    if not 0 < delta1 < d0:
        raise DesignError(f"delta1 must lie in (0, delta0 = {d0:.12g})")
    seeds = [(a, b) for a in (np.pi / 2, 2 * np.pi, 3.5 * np.pi, 4 * np.pi)
             for b in (np.pi / 4, 2.5 * np.pi)]
    fun = lambda t: _pair_residual(t, phi, omega0, delta1)  # noqa: E731
    best = None
    for seed in seeds:
        x, res = _damped_newton(seed, fun)
        if best is None or res < best[1]:
            best = (x, res)
        if res < tol:
            break
    x, res = best
    t1, t2 = float(x[0]), float(x[1])
    if res >= tol:
        raise PairSolveError(
            f"no two-bang solution reaches the rotation target at delta1 = {delta1:g}: "
            f"best residual {res:.3e} at t1 = {t1:.6g}, t2 = {t2:.6g} after {len(seeds)} seeds",
            PairSolveFailure(t1, t2, res))
    fld = ControlField.bangs([1, -1], [t1, t2], omega0)
    u = propagate_matrices(fld, [-delta1, delta1])
    target = x_rotation(phi).matrix
    if max(_max_dev(u[0], target), _max_dev(u[1], target)) > tol:
        raise DesignError("pair design failed verification at +-delta1")
    if t2 <= 1e-12:
        ratio = Fraction(1)
    else:
        ratio = Fraction((t1 + t2) / (t1 - t2)).limit_denominator(ratio_max)
        if abs(float(ratio) - (t1 + t2) / (t1 - t2)) > 1e-8:
            raise DesignError("(t1 + t2)/(t1 - t2) is not a small-integer ratio; no identity offset")
    n, k = ratio.numerator, ratio.denominator
    delta2 = None
    for m in range(1, 64):
        omega2 = TWO_PI * k * m / (t1 - t2)
        if omega2 > omega0:
            cand = math.sqrt(omega2**2 - omega0**2)
            if cand > delta1 and abs((t1 + t2) * omega2 - TWO_PI * n * m) < 1e-8:
                delta2 = cand
                break
    if delta2 is None:
        raise DesignError("no identity offset found above delta1")
    u2 = propagate_matrices(fld, [-delta2, delta2])
    if max(_max_dev(u2[0], np.eye(3)), _max_dev(u2[1], np.eye(3))) > tol:
        raise DesignError("pair design is not the identity at +-delta2")
    curv = profile_derivative(fld, x_rotation(phi), 0.0, order=2)
    return DesignReport(fld, fld.total_duration, [delta2], curv), delta2


def heuristic_time_bound(phi: float, delta1: float, delta2: float) -> float:
    """``sqrt(4 pi^2 - phi^2) (1/delta1 + 1/(delta2 - delta1))``."""
    _check_phi(phi)
    if not 0 < delta1 < delta2:
        raise DesignError("need 0 < delta1 < delta2")
    return math.sqrt(4 * math.pi**2 - phi**2) * (1 / delta1 + 1 / (delta2 - delta1))


def landscape_guides(delta2: float, phi: float, k_or_n: int, which: str = "low"):
    """Guide curves for the five-offset landscape.

    ``low``: ``T = sqrt(4 k^2 pi^2 - phi^2) / delta2`` (a float).
    ``high``: ``T = |(4 n +- 1) pi / delta2|`` (a sorted pair).
    """
    if not delta2 > 0:
        raise DesignError("delta2 must be > 0")
    if which == "low":
        rad = 4 * k_or_n**2 * math.pi**2 - phi**2
        if rad < 0:
            raise DesignError("2 k pi < phi: guide curve is imaginary")
        return math.sqrt(rad) / delta2
    if which == "high":
        return tuple(sorted(abs((4 * k_or_n + s) * math.pi / delta2) for s in (1, -1)))
    raise DesignError("which must be 'low' or 'high'")


def fig_b1_guide(delta2: float, n: int, omega0: float = 1.0) -> float:
    """Duration on the identity curve ``T sqrt(w0^2 + delta2^2) = 2 n pi``."""
    return TWO_PI * n / math.hypot(omega0, delta2)


__all__ = [
    "DesignError", "PairSolveError", "SelectiveDesign", "RobustFamilyParams", "DesignReport",
    "RegularCandidate", "delta0", "design_selective", "design_robust", "design_robust_one_switch",
    "design_robust_two_switch", "curvature_at_resonance", "symmetric_bang_solutions",
    "identity_offsets", "regular_candidates", "min_time_regular_candidates",
    "design_locally_robust_pair", "heuristic_time_bound", "landscape_guides", "fig_b1_guide",
]
