"""Exact propagation of piecewise-constant x-controls across offsets.

Every segment is a constant generator ``w_j * EPS_X + delta * EPS_Z`` whose
exponential is taken in closed form, so propagators carry no stepping error.
Segment ``j`` multiplies on the left of the product of segments ``1..j-1``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .so3 import Rotation, fidelity, rodrigues_batch, rot_exp_derivative_batch

AMPLITUDE_TOL = 1e-12


class FieldError(ValueError):
    """Raised for malformed or inadmissible control fields."""


@dataclass(frozen=True)
class ControlField:
    """Piecewise-constant single-input pulse ``w_x(t)`` with ``|w_x| <= omega0``."""

    omega0: float
    segments: tuple[tuple[float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(d)) for a, d in self.segments)
        object.__setattr__(self, "segments", segs)
        if not (self.omega0 > 0 and math.isfinite(self.omega0)):
            raise FieldError(f"omega0 must be positive and finite (got {self.omega0})")
        if not segs:
            raise FieldError("a control field needs at least one segment")
        for i, (amp, dur) in enumerate(segs):
            if not (math.isfinite(amp) and math.isfinite(dur)):
                raise FieldError(f"segment {i}: non-finite amplitude or duration")
            if dur <= 0:
                raise FieldError(f"segment {i}: duration must be > 0 (got {dur})")
            if abs(amp) > self.omega0 * (1 + AMPLITUDE_TOL) + AMPLITUDE_TOL:
                raise FieldError(f"segment {i}: |amplitude| {abs(amp)} exceeds bound {self.omega0}")

    @classmethod
    def constant(cls, amplitude: float, duration: float, omega0: float | None = None) -> "ControlField":
        bound = abs(amplitude) if omega0 is None else omega0
        return cls(bound if bound > 0 else 1.0, ((amplitude, duration),))

    @classmethod
    def bangs(cls, signs: Sequence[int], durations: Sequence[float], omega0: float) -> "ControlField":
        """Bang-bang field with amplitudes ``sign * omega0``; zero durations are dropped."""
        segs = [(s * omega0, d) for s, d in zip(signs, durations) if d > 0]
        return cls(omega0, tuple(segs))

    @classmethod
    def uniform(cls, amplitudes: Sequence[float], total_duration: float, omega0: float) -> "ControlField":
        amps = np.asarray(amplitudes, dtype=float)
        dt = total_duration / len(amps)
        return cls(omega0, tuple((float(a), dt) for a in amps))

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for a, _ in self.segments])

    @property
    def durations(self) -> np.ndarray:
        return np.array([d for _, d in self.segments])

    @property
    def total_duration(self) -> float:
        return float(sum(d for _, d in self.segments))

    def then(self, other: "ControlField") -> "ControlField":
        """Concatenate: ``self`` first, then ``other``."""
        return ControlField(max(self.omega0, other.omega0), self.segments + other.segments)

    def split(self, time: float) -> tuple["ControlField", "ControlField"]:
        """Cut the field at an interior ``time`` into (before, after)."""
        if not 0 < time < self.total_duration:
            raise FieldError("split time must be strictly inside the field")
        before, after = [], []
        elapsed = 0.0
        for amp, dur in self.segments:
            if elapsed + dur <= time:
                before.append((amp, dur))
            elif elapsed >= time:
                after.append((amp, dur))
            else:
                before.append((amp, time - elapsed))
                after.append((amp, elapsed + dur - time))
            elapsed += dur
        return ControlField(self.omega0, tuple(before)), ControlField(self.omega0, tuple(after))

    def to_dict(self) -> dict:
        return {"omega0": self.omega0,
                "segments": [{"amplitude": a, "duration": d} for a, d in self.segments]}

    @classmethod
    def from_dict(cls, data: dict) -> "ControlField":
        if not isinstance(data, dict) or "omega0" not in data or "segments" not in data:
            raise FieldError("field JSON needs 'omega0' and 'segments'")
        segs = []
        for i, seg in enumerate(data["segments"]):
            try:
                segs.append((float(seg["amplitude"]), float(seg["duration"])))
            except (KeyError, TypeError, ValueError):
                raise FieldError(f"segment {i}: expected {{'amplitude': <real>, 'duration': <real>}}") from None
        return cls(float(data["omega0"]), tuple(segs))

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ControlField":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FieldError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class SpinEnsemble:
    """Offsets paired with their target rotations."""

    entries: tuple[tuple[float, Rotation], ...]

    def __post_init__(self):
        entries = tuple((float(d), r) for d, r in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("an ensemble needs at least one entry")
        offsets = [d for d, _ in entries]
        if len(set(offsets)) != len(offsets):
            raise ValueError("ensemble offsets must be pairwise distinct")

    @property
    def offsets(self) -> np.ndarray:
        return np.array([d for d, _ in self.entries])

    @property
    def targets(self) -> np.ndarray:
        return np.stack([r.matrix for _, r in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FidelityProfile:
    """Sampled ``delta -> F(delta)`` for one target rotation."""

    target: Rotation
    offsets: np.ndarray
    values: np.ndarray
    derivative_estimates: dict[int, float] = field(default_factory=dict)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.offsets.tolist(), self.values.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["delta", "F"])
            for d, f in zip(self.offsets, self.values):
                writer.writerow([f"{d:.15g}", f"{f:.15g}"])


def segment_propagators(field: ControlField, offsets) -> np.ndarray:
    """Per-segment exponentials, shape ``(len(offsets), n_segments, 3, 3)``."""
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    amps = field.amplitudes
    durs = field.durations
    c = np.zeros((offsets.size, amps.size, 3))
    c[:, :, 0] = amps[None, :]
    c[:, :, 2] = offsets[:, None]
    return rodrigues_batch(c, np.broadcast_to(durs, c.shape[:-1]))


def propagate_matrices(field: ControlField, offsets) -> np.ndarray:
    """Propagator matrices for every offset, shape ``(len(offsets), 3, 3)``."""
    seg = segment_propagators(field, offsets)
    u = np.broadcast_to(np.eye(3), (seg.shape[0], 3, 3)).copy()
    for j in range(seg.shape[1]):
        u = seg[:, j] @ u
    return u


def propagate(field: ControlField, offset: float) -> Rotation:
    """Time-ordered product of the exact segment exponentials at one offset."""
    return Rotation.from_matrix(propagate_matrices(field, [offset])[0], check=False)


def propagate_derivative_offset(field: ControlField, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(U, dU/d delta)`` for each offset, computed analytically."""
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    seg = segment_propagators(field, offsets)
    n_off, n_seg = seg.shape[:2]
    amps, durs = field.amplitudes, field.durations
    c = np.zeros((n_off, n_seg, 3))
    c[:, :, 0] = amps
    c[:, :, 2] = offsets[:, None]
    dc = np.zeros_like(c)
    dc[:, :, 2] = 1.0
    dseg = rot_exp_derivative_batch(c, np.broadcast_to(durs, (n_off, n_seg)), dc)
    u = np.broadcast_to(np.eye(3), (n_off, 3, 3)).copy()
    du = np.zeros((n_off, 3, 3))
    for j in range(n_seg):
        du = dseg[:, j] @ u + seg[:, j] @ du
        u = seg[:, j] @ u
    return u, du


def _fidelity_values(u: np.ndarray, target: np.ndarray) -> np.ndarray:
    vals = 6.0 - 2.0 * np.einsum("ij,kij->k", target, u)
    return np.clip(vals, 0.0, 8.0)


def fidelity_profile(field: ControlField, target: Rotation, offsets: Iterable[float]) -> FidelityProfile:
    grid = np.asarray(list(offsets), dtype=float)
    if grid.size == 0:
        raise ValueError("offset grid must be non-empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("offset grid must be strictly increasing")
    vals = _fidelity_values(propagate_matrices(field, grid), target.matrix)
    return FidelityProfile(target, grid, vals)


class CancellationWarning(RuntimeWarning):
    """Finite-difference estimate is below the roundoff floor of its step."""


def default_step(order: int, omega0: float = 1.0) -> float:
    return 1e-4 * max(1.0, omega0) if order == 1 else 1e-3


def profile_derivative(field: ControlField, target: Rotation, at_offset: float = 0.0,
                       order: int = 1, step: float | None = None) -> float:
    """Central finite-difference estimate of ``d^n F / d delta^n`` at ``at_offset``.

    A :class:`CancellationWarning` is emitted when ``|estimate| < 64 eps / step**2``,
    i.e. when the result is indistinguishable from roundoff.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    h = default_step(order, field.omega0) if step is None else float(step)
    if not h > 0:
        raise ValueError("step must be > 0")
    if order == 1:
        pts = np.array([at_offset - h, at_offset + h])
        fm, fp = _fidelity_values(propagate_matrices(field, pts), target.matrix)
        est = (fp - fm) / (2 * h)
    else:
        pts = np.array([at_offset - h, at_offset, at_offset + h])
        fm, f0, fp = _fidelity_values(propagate_matrices(field, pts), target.matrix)
        est = (fp - 2 * f0 + fm) / h**2
    if abs(est) < 64 * np.finfo(float).eps / h**2:
        warnings.warn(f"order-{order} derivative estimate {est:.3e} is at the roundoff floor "
                      f"for step {h:g}", CancellationWarning, stacklevel=2)
    return float(est)


def ensemble_cost(field: ControlField, ensemble: SpinEnsemble) -> float:
    """``C = (1 / 3N) sum_n ||U(delta_n) - target_n||^2``, in ``[0, 8/3]``."""
    u = propagate_matrices(field, ensemble.offsets)
    diff = u - ensemble.targets
    return float(np.sum(diff * diff) / (3 * len(ensemble)))


def bang_bang_discretize(amplitude: float, total_duration: float, steps: int, offset: float) -> Rotation:
    """Split-operator approximation ``(exp(tau w EPS_X) exp(tau delta EPS_Z))^M``.

    First-order accurate in ``1/M``; kept as a convergence harness against
    :func:`propagate`.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tau = total_duration / steps
    ex = rodrigues_batch(np.array([amplitude, 0.0, 0.0]), tau)
    ez = rodrigues_batch(np.array([0.0, 0.0, offset]), tau)
    block = ex @ ez
    return Rotation.from_matrix(np.linalg.matrix_power(block, steps), check=False)


def load_field(path) -> ControlField:
    return ControlField.from_json(Path(path).read_text())


def save_field(field: ControlField, path) -> None:
    Path(path).write_text(field.to_json(indent=2))


__all__ = [
    "ControlField", "SpinEnsemble", "FidelityProfile", "FieldError", "CancellationWarning",
    "propagate", "propagate_matrices", "propagate_derivative_offset", "segment_propagators",
    "fidelity_profile", "profile_derivative", "ensemble_cost", "bang_bang_discretize",
    "default_step", "load_field", "save_field", "fidelity",
]
