"""Command-line entry point: ``spinrot <subcommand> ...``.

Exit codes: 0 success, 2 usage or precondition error, 3 I/O error, 4 landscape
with fewer than 90% of cells successful.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys

import numpy as np

from .design import DesignError, RobustFamilyParams, design_robust, design_selective
from .grape import GrapeConfig, GrapeError, default_workers, ensemble_template, grape_optimize, landscape_scan
from .pmp import SingularSetError, SwitchParam, next_bang_duration, singular_crossing_times
from .propagation import FieldError, fidelity_profile, load_field, propagate_matrices, save_field
from .so3 import x_rotation

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PARTIAL = 0, 2, 3, 4
_PI_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/([0-9.]+))?$")


class UsageError(Exception):
    pass


def parse_real(text: str) -> float:
    """Parse a real number, also accepting ``pi`` literals such as ``pi/2``, ``2pi``, ``-3*pi/4``."""
    s = text.strip().lower().replace(" ", "")
    m = _PI_RE.match(s)
    if m:
        coef = m.group(1)
        if coef in ("", "+"):
            c = 1.0
        elif coef == "-":
            c = -1.0
        else:
            c = float(coef)
        val = c * math.pi
        if m.group(2):
            val /= float(m.group(2))
        return val
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a real number: {text!r}") from None


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text + "\n")
        return
    with open(path, "w") as fh:
        fh.write(text)


def _grid(lo: float, hi: float, steps: int, name: str) -> np.ndarray:
    if steps < 1 or hi < lo or (steps > 1 and hi == lo):
        raise UsageError(f"zero-area {name} grid: [{lo}, {hi}] with {steps} steps")
    return np.linspace(lo, hi, steps)


def _threads(args) -> int:
    if os.environ.get("SPIN_THREADS"):
        return default_workers()
    return args.threads if args.threads else default_workers()


def cmd_design_selective(args) -> int:
    d = design_selective(args.phi, args.delta1, args.omega0)
    u = propagate_matrices(d.field, [0.0, args.delta1])
    r0 = float(np.max(np.abs(u[0] - x_rotation(args.phi).matrix)))
    r1 = float(np.max(np.abs(u[1] - np.eye(3))))
    report = {"omega_s": d.omega_s, "t_s": d.t_s, "delta1": d.delta1, "phi": d.phi,
              "omega0": d.omega0, "field": d.field.to_dict(),
              "residuals": {"resonance": r0, "offset": r1}}
    _write_text(args.out, json.dumps(report, indent=2))
    print(f"omega_S = {d.omega_s:.12g}  T_S = {d.t_s:.12g}  residuals: {r0:.2e} (X_phi), {r1:.2e} (I)")
    return EXIT_OK


def cmd_design_robust(args) -> int:
    params = RobustFamilyParams(args.switches, args.n, args.k, args.phi, args.omega0, args.alpha)
    rep = design_robust(params)
    _write_text(args.out, rep.to_json(indent=2))
    durs = ", ".join(f"{t:.12g}" for t in rep.field.durations)
    print(f"total_time = {rep.total_time:.12g}  durations = [{durs}]  "
          f"curvature_at_zero = {rep.curvature_at_zero:.6g}")
    for note in rep.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_profile(args) -> int:
    fld = load_field(args.field)
    deltas = _grid(args.delta_min, args.delta_max, args.delta_steps, "delta")
    prof = fidelity_profile(fld, x_rotation(args.target_phi), deltas)
    prof.write_csv(args.out)
    print(f"wrote {len(deltas)} rows to {args.out}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    ts = _grid(args.t_min, args.t_max, args.t_steps, "T")
    if args.mode == "fig3b":
        ys = _grid(args.phi_min, args.phi_max, args.phi_steps, "phi")
        axis = "phi"
    else:
        ys = _grid(args.delta_min, args.delta_max, args.delta_steps, "delta")
        axis = "delta"
    if ts[0] <= 0 or ys[0] <= 0:
        raise UsageError("grid values must be positive")
    tmpl = ensemble_template(args.mode, args.phi, args.delta1)
    cfg = GrapeConfig(steps=args.steps, max_iters=args.max_iters, seed=args.seed,
                      restarts=args.restarts, bound=args.omega0)
    grid = landscape_scan(tmpl, ts, ys, cfg, workers=_threads(args), axis_name=axis)
    grid.write_csv(args.out)
    for line in grid.failures:
        print(f"failed {line}", file=sys.stderr)
    frac = grid.success_fraction
    print(f"{grid.costs.size} cells, {frac:.1%} succeeded, min cost {np.nanmin(grid.costs) if frac else float('nan'):.3g}")
    return EXIT_OK if frac >= 0.9 else EXIT_PARTIAL


def cmd_grape(args) -> int:
    tmpl = ensemble_template(args.mode, args.phi, args.delta1)
    value = args.phi if args.mode == "fig3b" else args.delta
    cfg = GrapeConfig(steps=args.steps, max_iters=args.max_iters, seed=args.seed,
                      restarts=args.restarts, bound=args.omega0)
    res = grape_optimize(tmpl(value), args.T, cfg)
    if args.out:
        save_field(res.field, args.out)
    print(f"cost = {res.cost:.6g}  iterations = {res.iterations}")
    return EXIT_OK


def cmd_pmp_bang(args) -> int:
    p = SwitchParam(args.A, args.Omega)
    out = {"bang_duration": next_bang_duration(p, args.k_max),
           "singular_crossings": singular_crossing_times(p, args.k_max)}
    print(json.dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    real = parse_real
    parser = argparse.ArgumentParser(prog="spinrot", description="Time-optimal selective and robust spin rotations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design-selective", help="singular selective pulse")
    p.add_argument("--phi", type=real, required=True)
    p.add_argument("--delta1", type=real, required=True)
    p.add_argument("--omega0", type=real, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_design_selective)

    p = sub.add_parser("design-robust", help="bang-bang robust pulse families")
    p.add_argument("--switches", type=int, choices=(1, 2), required=True)
    p.add_argument("--phi", type=real, default=math.pi)
    p.add_argument("--omega0", type=real, default=1.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=real, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_design_robust)

    p = sub.add_parser("profile", help="fidelity profile F(delta) of a field")
    p.add_argument("--field", required=True)
    p.add_argument("--target-phi", type=real, required=True)
    p.add_argument("--delta-min", type=real, required=True)
    p.add_argument("--delta-max", type=real, required=True)
    p.add_argument("--delta-steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("landscape", help="(T, delta) GRAPE cost landscape")
    p.add_argument("--mode", choices=("fig3a", "fig3b", "appB1", "appB2"), required=True)
    p.add_argument("--phi", type=real, default=math.pi)
    p.add_argument("--delta1", type=real, default=None)
    p.add_argument("--t-min", type=real, required=True)
    p.add_argument("--t-max", type=real, required=True)
    p.add_argument("--t-steps", type=int, required=True)
    p.add_argument("--delta-min", type=real, default=0.5)
    p.add_argument("--delta-max", type=real, default=3.0)
    p.add_argument("--delta-steps", type=int, default=20)
    p.add_argument("--phi-min", type=real, default=0.1)
    p.add_argument("--phi-max", type=real, default=math.pi)
    p.add_argument("--phi-steps", type=int, default=20)
    _grape_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None, help="worker cap (SPIN_THREADS overrides)")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("grape", help="single GRAPE optimisation")
    p.add_argument("--mode", choices=("fig3a", "fig3b", "appB1", "appB2"), default="fig3a")
    p.add_argument("--phi", type=real, default=math.pi)
    p.add_argument("--delta", type=real, default=1.0)
    p.add_argument("--delta1", type=real, default=None)
    p.add_argument("--T", type=real, required=True)
    _grape_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grape)

    p = sub.add_parser("pmp-bang", help="next bang duration and singular crossings")
    p.add_argument("--A", type=real, required=True)
    p.add_argument("--Omega", type=real, required=True)
    p.add_argument("--k-max", type=int, default=4)
    p.set_defaults(func=cmd_pmp_bang)
    return parser


def _grape_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--omega0", type=parse_real, default=1.0)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (DesignError, FieldError, SingularSetError, UsageError, GrapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
