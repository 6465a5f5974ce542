"""GRAPE: projected gradient descent on the ensemble cost, and (T, delta) landscape scans.

The control is ``steps`` equal-duration amplitudes bounded by ``bound``.  Cost
and gradient are exact: each segment exponential and its derivative with respect
to the amplitude come in closed form, and forward/backward propagator products
are formed with a log-depth prefix scan.
"""
from __future__ import annotations

import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .propagation import ControlField, SpinEnsemble
from .so3 import Rotation, rodrigues_batch, rot_exp_derivative_batch, x_rotation



class GrapeError(RuntimeError):
    """Non-finite cost or gradient during optimisation."""


@dataclass(frozen=True)
class GrapeConfig:
    steps: int = 64
    max_iters: int = 1000
    step_size: float = 0.5
    tol: float = 1e-14
    seed: int = 0
    bound: float = 1.0
    restarts: int = 5
    cost_floor: float = 1e-12
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.steps < 8:
            raise ValueError("steps must be >= 8")
        if self.max_iters < 0 or self.restarts < 1:
            raise ValueError("max_iters must be >= 0 and restarts >= 1")
        for name in ("step_size", "tol", "bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class GrapeResult:
    field: ControlField
    cost: float
    iterations: int
    history: list[float] = field(repr=False, default_factory=list)

    def __iter__(self):
        # unpacks as (field, final_cost)
        yield self.field
        yield self.cost


def _prefix_products(seg: np.ndarray) -> np.ndarray:
    """``out[:, j] = seg[:, j] @ ... @ seg[:, 0]`` via a Hillis-Steele scan."""
    out = seg.copy()
    m = seg.shape[1]
    shift = 1
    while shift < m:
        out[:, shift:] = out[:, shift:] @ out[:, :-shift]
        shift *= 2
    return out


def _suffix_products(seg: np.ndarray) -> np.ndarray:
    """``out[:, j] = seg[:, M-1] @ ... @ seg[:, j]``."""
    out = seg.copy()
    m = seg.shape[1]
    shift = 1
    while shift < m:
        out[:, :-shift] = out[:, shift:] @ out[:, :-shift]
        shift *= 2
    return out


def _generators(amplitudes: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    c = np.zeros((offsets.size, amplitudes.size, 3))
    c[:, :, 0] = amplitudes
    c[:, :, 2] = offsets[:, None]
    return c


def cost_only(amplitudes, durations, offsets, targets) -> float:
    amplitudes = np.asarray(amplitudes, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    seg = rodrigues_batch(_generators(amplitudes, offsets), np.broadcast_to(durations, (offsets.size, amplitudes.size)))
    u = _prefix_products(seg)[:, -1]
    diff = u - targets
    return float(np.sum(diff * diff) / (3 * offsets.size))


def cost_and_gradient(amplitudes, durations, offsets, targets) -> tuple[float, np.ndarray]:
    """Ensemble cost ``C`` and its exact gradient with respect to each amplitude."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    n_off, m = offsets.size, amplitudes.size
    c = _generators(amplitudes, offsets)
    t = np.broadcast_to(np.asarray(durations, dtype=float), (n_off, m))
    seg = rodrigues_batch(c, t)
    dc = np.zeros_like(c)
    dc[..., 0] = 1.0
    dseg = rot_exp_derivative_batch(c, t, dc)
    fwd = _prefix_products(seg)
    bwd = _suffix_products(seg)
    u = fwd[:, -1]
    diff = u - targets
    cost = float(np.sum(diff * diff) / (3 * n_off))
    eye = np.broadcast_to(np.eye(3), (n_off, 1, 3, 3))
    before = np.concatenate([eye, fwd[:, :-1]], axis=1)   # F_{j-1}
    after = np.concatenate([bwd[:, 1:], eye], axis=1)     # B_{j+1}
    # tr(T^T B D F) = sum((B^T T F^T) * D)
    g = np.swapaxes(after, -1, -2) @ targets[:, None] @ np.swapaxes(before, -1, -2)
    dtr = np.einsum("kjab,kjab->kj", g, dseg)
    grad = -2.0 * dtr.sum(axis=0) / (3 * n_off)
    return cost, grad


def _initial_amplitudes(config: GrapeConfig, restart: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, restart])
    return rng.uniform(-0.5 * config.bound, 0.5 * config.bound, config.steps)


def _descend(x: np.ndarray, dt: float, offsets, targets, config: GrapeConfig) -> tuple[np.ndarray, float, int, list[float]]:
    """Projected gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein length from the previous iterate pair;
    backtracking halves it until sufficient decrease, so the history is monotone.
    """
    b = config.bound
    cost, grad = cost_and_gradient(x, dt, offsets, targets)
    history = [cost]
    gmax = float(np.max(np.abs(grad)))
    step = config.step_size * b / gmax if gmax > 0 else config.step_size
    it = 0
    while it < config.max_iters and cost > config.cost_floor:
        if not (math.isfinite(cost) and np.all(np.isfinite(grad))):
            raise GrapeError(f"non-finite cost/gradient at iteration {it}: cost={cost}")
        pg = x - np.clip(x - grad, -b, b)
        if float(np.max(np.abs(pg))) < 1e-15:
            break
        accepted = False
        while step > 1e-16:
            xn = np.clip(x - step * grad, -b, b)
            cn = cost_only(xn, dt, offsets, targets)
            if cn <= cost - 1e-4 * float(grad @ (x - xn)):
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            break
        cn, gn = cost_and_gradient(xn, dt, offsets, targets)
        s, y = xn - x, gn - grad
        sy = float(s @ y)
        improvement = cost - cn
        x, cost, grad = xn, cn, gn
        history.append(cost)
        step = min(max(float(s @ s) / sy, 1e-10), 1e6) if sy > 0 else 2.0 * step
        if improvement < config.tol:
            break
    if not math.isfinite(cost):
        raise GrapeError(f"non-finite cost after {it} iterations")
    return x, cost, it, history


def grape_optimize(ensemble: SpinEnsemble, total_time: float, config: GrapeConfig = GrapeConfig(),
                   initial: Sequence[float] | None = None) -> GrapeResult:
    """Minimise the ensemble cost over ``config.steps`` bounded amplitudes.

    Runs ``config.restarts`` seeded random starts (or one start from ``initial``)
    and returns the best.  The recorded cost history of every run is
    non-increasing.
    """
    if not total_time > 0:
        raise ValueError("total_time must be > 0")
    dt = total_time / config.steps
    offsets, targets = ensemble.offsets, ensemble.targets
    if initial is None:
        initial = config.initial
    starts = ([np.clip(np.asarray(initial, dtype=float), -config.bound, config.bound)]
              if initial is not None else
              [_initial_amplitudes(config, r) for r in range(config.restarts)])
    best = None
    total_iters = 0
    for x0 in starts:
        if x0.size != config.steps:
            raise ValueError("initial amplitudes must have config.steps entries")
        x, cost, iters, hist = _descend(x0.copy(), dt, offsets, targets, config)
        total_iters += iters
        if best is None or cost < best[1]:
            best = (x, cost, hist)
        if cost <= config.cost_floor:
            break
    x, cost, hist = best
    return GrapeResult(ControlField.uniform(x, total_time, config.bound), cost, total_iters, hist)


def analytic_gradient(ensemble: SpinEnsemble, fld: ControlField) -> np.ndarray:
    return cost_and_gradient(fld.amplitudes, fld.durations, ensemble.offsets, ensemble.targets)[1]


def gradient_check(ensemble: SpinEnsemble, fld: ControlField, segment_index: int,
                   step: float | None = None) -> float:
    """Relative error between the analytic ``dC/d w_j`` and a central difference."""
    amps = fld.amplitudes
    if not 0 <= segment_index < amps.size:
        raise IndexError("segment_index out of range")
    h = 1e-6 * fld.omega0 if step is None else step
    durs, offs, tgts = fld.durations, ensemble.offsets, ensemble.targets
    analytic = cost_and_gradient(amps, durs, offs, tgts)[1][segment_index]
    e = np.zeros_like(amps)
    e[segment_index] = h
    fd = (cost_only(amps + e, durs, offs, tgts) - cost_only(amps - e, durs, offs, tgts)) / (2 * h)
    scale = max(abs(analytic), abs(fd))
    return 0.0 if scale == 0 else abs(analytic - fd) / scale


# --- landscape scans -------------------------------------------------------

def _two_offset(delta: float, phi: float) -> SpinEnsemble:
    return SpinEnsemble(((0.0, x_rotation(phi)), (delta, Rotation.identity())))


def _two_offset_phi(phi: float, delta1: float) -> SpinEnsemble:
    return SpinEnsemble(((0.0, x_rotation(phi)), (delta1, Rotation.identity())))


def _four_offset(delta2: float, phi: float, delta1: float) -> SpinEnsemble:
    x, i = x_rotation(phi), Rotation.identity()
    return SpinEnsemble(((-delta2, i), (-delta1, x), (delta1, x), (delta2, i)))


def _five_offset(delta2: float, phi: float, delta1: float) -> SpinEnsemble:
    x, i = x_rotation(phi), Rotation.identity()
    return SpinEnsemble(((-delta2, i), (-delta1, i), (0.0, x), (delta1, i), (delta2, i)))


def ensemble_template(mode: str, phi: float = math.pi, delta1: float | None = None) -> Callable[[float], SpinEnsemble]:
    """Factory mapping the scanned second-axis value to an ensemble.

    ``fig3a``: ``{(0, X_phi), (delta, I)}``; ``fig3b``: the second axis is ``phi``
    with ``delta1`` fixed (default ``sqrt 3``); ``appB1``: ``{(+-delta2, I), (+-delta1, X_phi)}``
    (default ``delta1 = 0.5``); ``appB2``: ``{(+-delta2, I), (+-delta1, I), (0, X_phi)}``
    (default ``delta1 = sqrt 3``).
    """
    if mode == "fig3a":
        return partial(_two_offset, phi=phi)
    if mode == "fig3b":
        return partial(_two_offset_phi, delta1=math.sqrt(3) if delta1 is None else delta1)
    if mode == "appB1":
        return partial(_four_offset, phi=phi, delta1=0.5 if delta1 is None else delta1)
    if mode == "appB2":
        return partial(_five_offset, phi=phi, delta1=math.sqrt(3) if delta1 is None else delta1)
    raise ValueError(f"unknown landscape mode {mode!r}")


@dataclass
class LandscapeGrid:
    T_values: np.ndarray
    delta_values: np.ndarray
    costs: np.ndarray
    iterations: np.ndarray = field(repr=False, default=None)
    failures: list[str] = field(default_factory=list)
    axis_name: str = "delta"

    @property
    def success_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.costs)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["T", self.axis_name, "cost"])
            for i, t in enumerate(self.T_values):
                for j, d in enumerate(self.delta_values):
                    writer.writerow([f"{t:.10g}", f"{d:.10g}", f"{self.costs[i, j]:.10g}"])


def _run_cell(args):
    i, j, t, value, template, config = args
    try:
        res = grape_optimize(template(value), t, config)
        return i, j, res.cost, res.iterations, None
    except Exception as exc:  # per-cell failures become NaN markers
        return i, j, float("nan"), 0, f"{type(exc).__name__}: {exc}"


def default_workers() -> int:
    env = os.environ.get("SPIN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def landscape_scan(template: Callable[[float], SpinEnsemble], T_grid, delta_grid,
                   config: GrapeConfig = GrapeConfig(), workers: int | None = None,
                   progress="stderr", axis_name: str = "delta") -> LandscapeGrid:
    """Run :func:`grape_optimize` at every ``(T, delta)`` cell and keep the best cost.

    Cells are independent; results land in pre-assigned slots so the output does
    not depend on scheduling.  One progress line per cell goes to ``progress``
    (standard error by default, ``None`` to silence).
    """
    if progress == "stderr":
        progress = sys.stderr
    T_grid = np.asarray(T_grid, dtype=float)
    delta_grid = np.asarray(delta_grid, dtype=float)
    if T_grid.size == 0 or delta_grid.size == 0:
        raise ValueError("grids must be non-empty")
    tasks = [(i, j, float(t), float(d), template, config)
             for i, t in enumerate(T_grid) for j, d in enumerate(delta_grid)]
    costs = np.full((T_grid.size, delta_grid.size), np.nan)
    iters = np.zeros_like(costs, dtype=int)
    failures = []
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1:
        results = map(_run_cell, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (8 * workers)))
    try:
        for i, j, cost, it, err in results:
            costs[i, j] = cost
            iters[i, j] = it
            if progress is not None:
                print(f"cell {i},{j} T={T_grid[i]:.6g} {axis_name}={delta_grid[j]:.6g} "
                      f"cost={cost:.6g} iters={it}", file=progress)
            if err is not None:
                failures.append(f"cell {i},{j}: {err}")
    finally:
        if workers != 1:
            pool.shutdown()
    return LandscapeGrid(T_grid, delta_grid, costs, iters, failures, axis_name)


__all__ = [
    "GrapeConfig", "GrapeResult", "GrapeError", "LandscapeGrid", "grape_optimize",
    "gradient_check", "analytic_gradient", "cost_and_gradient", "cost_only",
    "landscape_scan", "ensemble_template", "default_workers",
]
