"""Error measurement, convergence sweeps and tabular / SVG reports."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .elements import FunctionSpacePair
from .mesh import build_structured
from .quadrature import triangle_rule
from .stepper import Discretization, PicardOptions, StateVector, initial_data, run

ERROR_DEGREE = 10
COLUMNS = ("u1", "u2", "sigma1", "sigma2")
HEADINGS = {
    "u1": r"\|u_1 - u_{1,h}\|",
    "u2": r"\|u_2 - u_{2,h}\|",
    "sigma1": r"\|\sigma_1 - \sigma_{1,h}\|",
    "sigma2": r"\|\sigma_2 - \sigma_{2,h}\|",
}


@dataclass
class ConvergenceRecord:
    M: int
    errors: dict[str, float]
    rates: dict[str, float | None] = field(default_factory=dict)
    wall_time: float = 0.0
    picard_max: int = 0
    picard_mean: float = 0.0

    @property
    def h(self) -> float:
        return 1.0 / self.M


def l2_error(space: FunctionSpacePair, state: StateVector, exact, t: float) -> dict[str, float]:
    """L2 errors of every species' ``u`` and ``sigma`` at time ``t``.

    ``exact`` provides ``u(i, t, x, y)`` and ``sigma(i, t, x, y)``.
    """
    rule = triangle_rule(ERROR_DEGREE)
    pts = space.physical_points(rule.points)
    x, y = pts[..., 0], pts[..., 1]
    w = rule.weights[None, :] * space.dets[:, None]
    out = {}
    for i in range(state.u.shape[0]):
        eu = space.eval_u(state.u[i], rule.points) - exact.u(i, t, x, y)
        es = space.eval_sigma(state.sigma[i], rule.points) - exact.sigma(i, t, x, y)
        out[f"u{i + 1}"] = float(np.sqrt(np.sum(w * eu**2)))
        out[f"sigma{i + 1}"] = float(np.sqrt(np.sum(w * np.sum(es**2, axis=-1))))
    return out


def observed_rate(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """``log(e_coarse / e_fine) / log(ratio)``."""
    return math.log(coarse / fine) / math.log(ratio)


def fill_rates(records: Sequence[ConvergenceRecord]) -> None:
    for prev, rec in zip(records, records[1:]):
        ratio = rec.M / prev.M
        rec.rates = {k: observed_rate(prev.errors[k], rec.errors[k], ratio) for k in rec.errors}
    if records:
        records[0].rates = {k: None for k in records[0].errors}


def run_single(order: int, M: int, T: float, dt: float | None = None, config_factory=None,
               options: PicardOptions | None = None):
    """One manufactured-solution run; returns ``(record, final state, discretisation)``."""
    from .mms import make_config

    config, exact = (config_factory or make_config)()
    dt = 1.0 / M if dt is None else dt
    start = time.perf_counter()
    space = FunctionSpacePair(build_structured(M), order)
    disc = Discretization(space, config)
    state = initial_data(disc.operators, config, [exact.initial_u(i) for i in range(exact.N)])
    iters: list[int] = []
    state = run(disc, T, dt, state, lambda k, t, s, r: iters.append(r.iterations), options)
    errors = l2_error(space, state, exact, T)
    rec = ConvergenceRecord(
        M=M,
        errors=errors,
        wall_time=time.perf_counter() - start,
        picard_max=max(iters, default=0),
        picard_mean=float(np.mean(iters)) if iters else 0.0,
    )
    return rec, state, disc


def _record_only(args):
    return run_single(*args)[0]


def run_convergence(
    order: int,
    Ms: Sequence[int],
    T: float = 0.5,
    dt_rule: str = "h",
    jobs: int = 1,
    config_factory=None,
    options: PicardOptions | None = None,
) -> list[ConvergenceRecord]:
    """Manufactured-solution sweep over meshes with ``dt = h``."""
    Ms = list(Ms)
    if any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise ValueError("Ms must be strictly increasing")
    if dt_rule != "h":
        raise ValueError(f"unsupported dt rule {dt_rule!r}; only 'h' is available")
    args = [(order, M, T, None, config_factory, options) for M in Ms]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_record_only, args))
    else:
        records = [_record_only(a) for a in args]
    fill_rates(records)
    return records


# -- reports ---------------------------------------------------------------


def _fmt_rate(r: float | None) -> str:
    return "" if r is None else f"{r:.2f}"


def to_csv(records: Sequence[ConvergenceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    header = ["M", "h"]
    for c in COLUMNS:
        header += [f"e_{c}", f"rate_{c}"]
    header += [f"e_{c}_full" for c in COLUMNS]
    writer.writerow(header)
    for rec in records:
        row = [str(rec.M), f"{rec.h:.8e}"]
        for c in COLUMNS:
            row += [f"{rec.errors[c]:.4e}", _fmt_rate(rec.rates.get(c))]
        row += [f"{rec.errors[c]:.8e}" for c in COLUMNS]
        writer.writerow(row)
    return buf.getvalue()


def read_csv(text: str) -> list[ConvergenceRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    records = []
    for row in rows:
        errors = {c: float(row[f"e_{c}_full"]) for c in COLUMNS}
        rates = {c: (float(row[f"rate_{c}"]) if row[f"rate_{c}"] else None) for c in COLUMNS}
        records.append(ConvergenceRecord(M=int(row["M"]), errors=errors, rates=rates))
    return records


def to_markdown(records: Sequence[ConvergenceRecord], title: str | None = None) -> str:
    lines = []
    if title:
        lines += [f"**{title}**", ""]
    head = ["h"]
    for c in COLUMNS:
        head += [f"${HEADINGS[c]}$", "rate"]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "---|" * len(head))
    for rec in records:
        cells = [f"1/{rec.M}"]
        for c in COLUMNS:
            r = rec.rates.get(c)
            cells += [f"{rec.errors[c]:.4e}", "--" if r is None else f"{r:.2f}"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


_COLOURS = {"u1": "#1f77b4", "u2": "#ff7f0e", "sigma1": "#2ca02c", "sigma2": "#d62728"}


def to_svg(records: Sequence[ConvergenceRecord], order: int, width: int = 480, height: int = 360) -> str:
    """Log-log plot of error against h with a reference slope ``h^order``.

    The reference line is anchored at the largest coarsest-level error.
    """
    hs = np.array([r.h for r in records])
    errs = {c: np.array([r.errors[c] for r in records]) for c in COLUMNS}
    anchor = max(errs[c][0] for c in COLUMNS)
    ref = anchor * (hs / hs[0]) ** order
    all_e = np.concatenate([*errs.values(), ref])
    lx = np.log10(hs)
    ly_min, ly_max = np.log10(all_e.min()), np.log10(all_e.max())
    lx_min, lx_max = lx.min(), lx.max()
    if lx_max == lx_min:
        lx_min, lx_max = lx_min - 0.5, lx_max + 0.5
    if ly_max == ly_min:
        ly_min, ly_max = ly_min - 0.5, ly_max + 0.5
    pad = 50

    def xy(h, e):
        px = pad + (np.log10(h) - lx_min) / (lx_max - lx_min) * (width - 2 * pad)
        py = height - pad - (np.log10(e) - ly_min) / (ly_max - ly_min) * (height - 2 * pad)
        return px, py

    def points(values):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(*xy(hs, values)))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle">h (log scale)</text>',
        f'<text x="12" y="{height / 2:.0f}" transform="rotate(-90 12 {height / 2:.0f})" '
        'text-anchor="middle">L2 error (log scale)</text>',
    ]
    for k, c in enumerate(COLUMNS):
        out.append(
            f'<polyline class="data" data-series="{c}" fill="none" stroke="{_COLOURS[c]}" '
            f'points="{points(errs[c])}"/>'
        )
        out.append(
            f'<text x="{width - pad + 4}" y="{pad + 14 * (k + 1)}" fill="{_COLOURS[c]}" '
            f'font-size="10">{c}</text>'
        )
    out.append(
        f'<polyline class="reference" data-order="{order}" fill="none" stroke="gray" '
        f'stroke-dasharray="4 3" points="{points(ref)}"/>'
    )
    out.append(
        f'<text x="{pad + 4}" y="{pad + 14}" fill="gray" font-size="10">slope {order}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(records: Sequence[ConvergenceRecord], fmt: str, path: str | Path, order: int = 1) -> Path:
    """Write ``records`` as ``csv``, ``markdown`` or ``svg``."""
    if not records:
        raise ValueError("no records to report")
    if fmt == "csv":
        text = to_csv(records)
    elif fmt == "markdown":
        text = to_markdown(records)
    elif fmt == "svg":
        text = to_svg(records, order)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.write_text(text, newline="")
    return path
