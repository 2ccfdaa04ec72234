"""Command-line entry point: ``memfem {run,convergence,check}``.

A JSON config file (``--config``) may set any of the keys below; flags given
on the command line take precedence.

    {
      "mode": "convergence", "problem": "mms2", "order": 1,
      "M": 8, "Ms": [4, 8, 16], "T": 0.5, "dt": null, "dt_rule": "h",
      "tol": 1e-10, "max_iter": 50, "out": "results", "jobs": 1,
      "step_check": "warn",
      "overrides": {"kappa": [1.0, 1.0], "K": [0.9, 0.5], "L_estimate": 17.0}
    }
"""

from __future__ import annotations

import argparse
import functools
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mms, study
from .checks import run_checks
from .stepper import PicardConvergenceError, PicardOptions, StepSizeError

MODES = ("run", "convergence", "check")
PROBLEMS = ("mms2",)
EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    mode: str = "run"
    problem: str = "mms2"
    order: int = 1
    M: int = 8
    Ms: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    T: float = mms.T_DEFAULT
    dt: float | None = None
    dt_rule: str | None = "h"
    tol: float = 1e-10
    max_iter: int = 50
    out: str | None = None
    jobs: int = 1
    step_check: str = "warn"
    overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.problem not in PROBLEMS:
            raise UsageError(f"unknown problem {self.problem!r}; available: {', '.join(PROBLEMS)}")
        if self.order not in (1, 2):
            raise UsageError(f"order must be 1 or 2, got {self.order}")
        for M in [self.M, *self.Ms]:
            if not isinstance(M, int) or isinstance(M, bool) or M < 2 or M % 2:
                raise UsageError(f"M must be an even integer >= 2 so the membrane is resolved, got {M!r}")
        if self.mode == "convergence" and any(b <= a for a, b in zip(self.Ms, self.Ms[1:])):
            raise UsageError("Ms must be strictly increasing")
        if self.dt is not None and self.dt_rule is not None:
            raise UsageError("give either dt or dt_rule, not both")
        if self.dt is None and self.dt_rule != "h":
            raise UsageError(f"unsupported dt rule {self.dt_rule!r}")
        if self.dt is not None and not self.dt > 0:
            raise UsageError("dt must be positive")
        if self.mode == "convergence" and self.dt is not None:
            raise UsageError("convergence sweeps use dt = h; drop --dt")
        if not self.T >= 0:
            raise UsageError("T must be non-negative")
        if not self.tol > 0 or self.max_iter < 1 or self.jobs < 1:
            raise UsageError("tol, max_iter and jobs must be positive")
        if self.step_check not in ("error", "warn", "off"):
            raise UsageError(f"unknown step_check {self.step_check!r}")
        unknown = set(self.overrides) - {"kappa", "K", "L_estimate"}
        if unknown:
            raise UsageError(f"unknown override keys: {sorted(unknown)}")

    def config_factory(self):
        o = self.overrides
        return functools.partial(
            mms.make_config,
            kappa=tuple(o.get("kappa", (1.0, 1.0))),
            K=tuple(o["K"]) if "K" in o else None,
            L_estimate=float(o.get("L_estimate", mms.L_ESTIMATE)),
            step_check=self.step_check,
        )

    def picard(self) -> PicardOptions:
        return PicardOptions(tol_rel=self.tol, max_iter=self.max_iter)


def _parse_Ms(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memfem", description="Mixed FEM solver for membrane reaction-diffusion systems.")
    p.add_argument("mode_pos", nargs="?", choices=MODES, metavar="MODE", help="run, convergence or check")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--M", type=int)
    p.add_argument("--Ms", type=_parse_Ms)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--dt-rule", dest="dt_rule", choices=("h",))
    p.add_argument("--tol", type=float, help="relative Picard tolerance")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel mesh levels in a sweep")
    p.add_argument("--step-check", dest="step_check", choices=("error", "warn", "off"),
                   help="policy when L_estimate * dt >= 2")
    p.add_argument("--config", help="JSON config file")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(RunConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for key in ("problem", "order", "M", "Ms", "T", "dt", "tol", "max_iter", "out", "jobs", "step_check"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    # an explicit dt replaces the default rule and vice versa
    if args.dt is not None:
        values["dt_rule"] = None
    elif args.dt_rule is not None:
        values["dt_rule"] = args.dt_rule
        values["dt"] = None
    elif values.get("dt") is not None and "dt_rule" not in values:
        values["dt_rule"] = None
    mode = args.mode or args.mode_pos
    if mode is not None:
        values["mode"] = mode
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc))
    cfg.validate()
    return cfg


def header(cfg: RunConfig) -> str:
    factory = cfg.config_factory()
    K = factory.keywords["K"] or mms.derive_membrane_constants(mms.ManufacturedSolution(factory.keywords["kappa"]))
    dt = "h" if cfg.dt is None else f"{cfg.dt:g}"
    lines = [
        f"# memfem {cfg.mode}: problem={cfg.problem} order={cfg.order}",
        f"# T={cfg.T:g} dt={dt} tol={cfg.tol:g} max_iter={cfg.max_iter} step_check={cfg.step_check}",
        f"# kappa={list(factory.keywords['kappa'])} K=[{K[0]:.9f}, {K[1]:.9f}] "
        f"L_estimate={factory.keywords['L_estimate']:g}",
    ]
    if cfg.mode == "run":
        lines.append(f"# M={cfg.M}")
    elif cfg.mode == "convergence":
        lines.append(f"# Ms={cfg.Ms} jobs={cfg.jobs}")
    return "\n".join(lines)


def _outdir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def do_run(cfg: RunConfig) -> int:
    rec, state, _ = study.run_single(cfg.order, cfg.M, cfg.T, cfg.dt, cfg.config_factory(), cfg.picard())
    for c in study.COLUMNS:
        print(f"e_{c} = {rec.errors[c]:.6e}")
    print(f"picard iterations: max {rec.picard_max}, mean {rec.picard_mean:.2f}")
    print(f"wall time: {rec.wall_time:.2f} s")
    out = _outdir(cfg)
    if out is not None:
        stem = f"run_l{cfg.order}_M{cfg.M}"
        summary = {
            "order": cfg.order, "M": cfg.M, "T": cfg.T, "dt": cfg.dt or 1.0 / cfg.M,
            "errors": rec.errors, "picard_max": rec.picard_max, "picard_mean": rec.picard_mean,
        }
        (out / f"{stem}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        np.savez(out / f"{stem}_state.npz", t=state.t, sigma=state.sigma, u=state.u)
        print(f"wrote {out / stem}.json and {stem}_state.npz")
    return EXIT_OK


def do_convergence(cfg: RunConfig) -> int:
    records = study.run_convergence(
        cfg.order, cfg.Ms, cfg.T, "h", cfg.jobs, cfg.config_factory(), cfg.picard()
    )
    print(study.to_markdown(records), end="")
    for r in records:
        print(f"# M={r.M}: picard max {r.picard_max} mean {r.picard_mean:.2f}, {r.wall_time:.2f} s")
    out = _outdir(cfg)
    if out is not None:
        stem = f"convergence_l{cfg.order}"
        for fmt, ext in (("csv", "csv"), ("markdown", "md"), ("svg", "svg")):
            study.emit_report(records, fmt, out / f"{stem}.{ext}", cfg.order)
        print(f"wrote {out / stem}.{{csv,md,svg}}")
    return EXIT_OK


def do_check(cfg: RunConfig) -> int:
    results = run_checks()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"memfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(header(cfg))
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default", RuntimeWarning)
            code = {"run": do_run, "convergence": do_convergence, "check": do_check}[cfg.mode](cfg)
    except (StepSizeError, ValueError) as exc:
        print(f"memfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PicardConvergenceError, FloatingPointError) as exc:
        print(f"memfem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"# done in {time.perf_counter() - start:.2f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
