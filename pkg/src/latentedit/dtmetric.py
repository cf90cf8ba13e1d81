"""Disentanglement-transformation curves, their AUC, and the control-factor grid.

For a primal attribute A and condition B, samples are edited toward the
opposite of their initial A label.  After ``n`` steps

* ``p_n`` = fraction whose A label equals the target,
* ``q_n`` = fraction whose B label is unchanged.

Labels come from the evaluation classifiers (``scorer="eval"``) or from
the ground-truth oracles (``scorer="oracle"``).
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .directions import ControlFactors, attribute_directions
from .editor import DEFAULT_STEP, DEFAULT_STEPS, edit_batch
from .errors import ConfigError, NoAttributePairs
from .seeding import rng_for
from .synthworld import World, all_pairs

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
TIE_TOL = 1e-12


@dataclass(frozen=True)
class DTCurve:
    points: tuple[tuple[int, float, float], ...]  # (n, p_n, q_n)
    primal: str = ""
    condition: str = ""
    factors: ControlFactors = ControlFactors()
    k: float = DEFAULT_STEP
    sample_count: int = 0

    @property
    def p(self) -> np.ndarray:
        return np.array([pt[1] for pt in self.points])

    @property
    def q(self) -> np.ndarray:
        return np.array([pt[2] for pt in self.points])


def curve_from_pq(pairs: Sequence[tuple[float, float]]) -> DTCurve:
    return DTCurve(tuple((i, float(p), float(q)) for i, (p, q) in enumerate(pairs)))


def labels_at(world: World, attribute: str, Z, scorer: str):
    if scorer == "eval":
        return (world.score(attribute, Z, "eval") > 0.5).astype(int)
    if scorer == "oracle":
        return (world.oracle_margin(attribute, Z) > 0).astype(int)
    raise ConfigError(f"unknown scorer {scorer!r}")


def dt_samples(world: World, sample_count: int, seed: int) -> np.ndarray:
    """The latent evaluation set; identical for every pair and grid cell."""
    if sample_count < 1:
        raise ConfigError("sample_count must be >= 1")
    return rng_for(seed, "dt-samples").standard_normal((sample_count, world.latent_dim))


def evaluate_dt(
    world: World,
    primal: str,
    condition: str,
    factors: ControlFactors = ControlFactors(),
    k: float = DEFAULT_STEP,
    n_max: int = DEFAULT_STEPS,
    sample_count: int = 1000,
    seed: int = 0,
    *,
    scorer: str = "eval",
    incremental: bool = True,
    attr_dirs: Mapping[str, np.ndarray] | None = None,
    samples: np.ndarray | None = None,
) -> DTCurve:
    if primal == condition:
        raise ConfigError("primal and condition must differ")
    world.spec(primal), world.spec(condition)
    Z0 = dt_samples(world, sample_count, seed) if samples is None else samples
    targets = 1 - labels_at(world, primal, Z0, scorer)
    keep = labels_at(world, condition, Z0, scorer)
    res = edit_batch(world, Z0, primal, (condition,), targets, factors, k, n_max, incremental, attr_dirs)
    points = []
    for n in range(n_max + 1):
        Zn = res.paths[n]
        alive = res.alive(n)
        p = float(np.mean(alive & (labels_at(world, primal, Zn, scorer) == targets)))
        q = float(np.mean(alive & (labels_at(world, condition, Zn, scorer) == keep)))
        points.append((n, p, q))
    return DTCurve(tuple(points), primal, condition, factors, k, len(Z0))


def _collapsed(curve: DTCurve):
    """Distinct p values ascending with q averaged over exact ties."""
    pts = sorted(((p, n, q) for n, p, q in curve.points), key=lambda t: (t[0], t[1]))
    ps, qs = [], []
    for p, group in itertools.groupby(pts, key=lambda t: t[0]):
        vals = [t[2] for t in group]
        ps.append(p)
        qs.append(sum(vals) / len(vals))
    return ps, qs


def auc(curve: DTCurve) -> float:
    """Trapezoid area under q(p) on [0, 1], extended flat beyond the measured p range."""
    if not curve.points:
        raise ConfigError("curve has no points")
    ps, qs = _collapsed(curve)
    # integrate the deficit 1 - q so that an all-ones curve gives exactly 1
    gap = [1.0 - q for q in qs]
    lost = ps[0] * gap[0] + (1.0 - ps[-1]) * gap[-1]
    for i in range(1, len(ps)):
        lost += (ps[i] - ps[i - 1]) * (gap[i] + gap[i - 1]) / 2.0
    return float(min(max(1.0 - lost, 0.0), 1.0))


def q_at(curve: DTCurve, p_values) -> np.ndarray:
    """Piecewise-linear q(p) with the same flat extension as :func:`auc`."""
    ps, qs = _collapsed(curve)
    return np.interp(np.asarray(p_values, dtype=float), ps, qs)


@dataclass(frozen=True)
class GridReport:
    grid: tuple[float, ...]
    cells: Mapping[tuple[float, float], float]
    pair_count: int
    best: tuple[float, float]
    pair_aucs: Mapping[tuple[float, float, str, str], float]

    def matrix(self) -> np.ndarray:
        return np.array([[self.cells[(l1, l2)] for l2 in self.grid] for l1 in self.grid])


def pick_best(cells: Mapping[tuple[float, float], float]) -> tuple[float, float]:
    """Highest AUC; ties within 1e-12 go to larger lambda1, then smaller lambda2."""
    top = max(cells.values())
    tied = [c for c, v in cells.items() if v >= top - TIE_TOL]
    return max(tied, key=lambda c: (c[0], -c[1]))


def grid_search(
    world: World,
    lambda_grid: Sequence[float] = DEFAULT_GRID,
    k: float = DEFAULT_STEP,
    n_max: int = DEFAULT_STEPS,
    sample_count: int = 1000,
    seed: int = 0,
    *,
    scorer: str = "eval",
    threads: int = 1,
    attr_dirs: Mapping[str, np.ndarray] | None = None,
) -> GridReport:
    grid = tuple(float(v) for v in lambda_grid)
    if not grid:
        raise ConfigError("lambda grid is empty")
    for v in grid:
        ControlFactors(v, v)
    pairs = all_pairs(world)
    if not pairs:
        raise NoAttributePairs("grid search needs at least two attributes")
    attr_dirs = attribute_directions(world) if attr_dirs is None else attr_dirs
    Z0 = dt_samples(world, sample_count, seed)
    tasks = [(l1, l2, a, b) for l1 in grid for l2 in grid for a, b in pairs]

    def run(task):
        l1, l2, a, b = task
        curve = evaluate_dt(
            world, a, b, ControlFactors(l1, l2), k, n_max, sample_count, seed,
            scorer=scorer, attr_dirs=attr_dirs, samples=Z0,
        )
        return task, auc(curve)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run, tasks))
    else:
        results = dict(map(run, tasks))
    cells = {}
    for l1 in grid:
        for l2 in grid:
            # fixed summation order, independent of completion order
            cells[(l1, l2)] = float(sum(results[(l1, l2, a, b)] for a, b in pairs) / len(pairs))
    return GridReport(grid, cells, len(pairs), pick_best(cells), results)


def mean_auc(
    world: World,
    factors: ControlFactors,
    k: float = DEFAULT_STEP,
    n_max: int = DEFAULT_STEPS,
    sample_count: int = 1000,
    seed: int = 0,
    **kw,
) -> float:
    """Average AUC over every ordered (primal, condition) pair."""
    pairs = all_pairs(world)
    if not pairs:
        raise NoAttributePairs("needs at least two attributes")
    Z0 = dt_samples(world, sample_count, seed)
    total = 0.0
    for a, b in pairs:
        total += auc(evaluate_dt(world, a, b, factors, k, n_max, sample_count, seed, samples=Z0, **kw))
    return total / len(pairs)


# --- exports ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def curve_csv(curve: DTCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "p", "q"])
    for n, p, q in curve.points:
        w.writerow([n, _fmt(p), _fmt(q)])
    return buf.getvalue()


def grid_csv(report: GridReport) -> str:
    """Rows are lambda1, columns lambda2, entries the average AUC."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda1\\lambda2"] + [_fmt(v) for v in report.grid])
    for l1 in report.grid:
        w.writerow([_fmt(l1)] + [_fmt(report.cells[(l1, l2)]) for l2 in report.grid])
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def curves_svg(curves: Mapping[str, DTCurve], title: str = "DT curve") -> str:
    """Fixed 640x480 plot of q (y) against p (x), both axes on [0, 1]."""
    left, right, top, bottom = 70, 610, 40, 420
    sx = lambda p: left + p * (right - left)  # noqa: E731
    sy = lambda q: bottom - q * (bottom - top)  # noqa: E731
    out = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 640 480" width="640" height="480">',
        '<rect x="0" y="0" width="640" height="480" fill="white"/>',
        f'<text x="320" y="24" text-anchor="middle" font-size="16">{_esc(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{sx(t):.1f}" y="{bottom + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.1f}" text-anchor="end" font-size="11">{t:g}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{bottom + 40}" text-anchor="middle" font-size="13">'
               "transformation accuracy p</text>")
    out.append(f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">disentanglement accuracy q</text>')
    for i, (label, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        ps, qs = _collapsed(curve)
        pts = " ".join(f"{sx(p):.2f},{sy(q):.2f}" for p, q in zip(ps, qs))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{right - 150}" y="{top + 18 * (i + 1)}" font-size="12" fill="{color}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
