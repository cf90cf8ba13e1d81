"""Incremental latent editing.

Each step searches the (conditional) instance-aware direction at the
current latent point and moves ``z <- z + k * d``.  With
``incremental=False`` the direction found at the starting point is reused
for every step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import diffcore
from .directions import ControlFactors, attribute_directions, conditional_rows
from .errors import ConfigError, DegenerateProjection, PartialTrajectory, ZeroGradient
from .synthworld import World

DEFAULT_STEP = 0.1
DEFAULT_STEPS = 20


@dataclass(frozen=True)
class EditConfig:
    primal: str
    conditions: tuple[str, ...] = ()
    target: int = 1
    factors: ControlFactors = field(default_factory=ControlFactors)
    step_size: float = DEFAULT_STEP
    steps: int = DEFAULT_STEPS
    incremental: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if not self.step_size > 0:
            raise ConfigError("step size must be positive")
        if self.steps < 0:
            raise ConfigError("number of steps must be >= 0")
        if self.primal in self.conditions:
            raise ConfigError("primal attribute cannot be a condition")
        if len(set(self.conditions)) != len(self.conditions):
            raise ConfigError("duplicate condition attributes")
        if self.target not in (0, 1):
            raise ConfigError("target must be 0 or 1")


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    z: np.ndarray
    x: np.ndarray
    edit_scores: Mapping[str, float]
    eval_scores: Mapping[str, float]


@dataclass(frozen=True)
class EditTrajectory:
    points: tuple[TrajectoryPoint, ...]
    config: EditConfig

    @property
    def latents(self) -> np.ndarray:
        return np.stack([p.z for p in self.points])


@dataclass(frozen=True)
class BatchEdit:
    """Latent paths for many starting points at once.

    ``paths[n]`` holds the latent points after ``n`` steps.  A sample whose
    direction could not be formed at step ``n`` stops moving and gets
    ``abort_step = n + 1``; samples that finished have ``steps + 1``.
    """

    paths: np.ndarray  # (steps + 1, count, latent_dim)
    abort_step: np.ndarray  # (count,)

    def alive(self, n: int) -> np.ndarray:
        return self.abort_step > n


def edit_batch(
    world: World,
    Z0,
    primal: str,
    conditions: Sequence[str],
    targets,
    factors: ControlFactors,
    step_size: float = DEFAULT_STEP,
    steps: int = DEFAULT_STEPS,
    incremental: bool = True,
    attr_dirs: Mapping[str, np.ndarray] | None = None,
) -> BatchEdit:
    Z = np.array(np.atleast_2d(Z0), dtype=float)
    count = len(Z)
    targets = np.broadcast_to(np.asarray(targets, dtype=int), (count,))
    attr_dirs = attribute_directions(world) if attr_dirs is None else attr_dirs
    # conditions keep the label the editing classifier gave the starting point
    keep = {b: (world.score(b, Z) > 0.5).astype(int) for b in conditions}

    paths = np.empty((steps + 1, count, Z.shape[1]))
    paths[0] = Z
    abort = np.full(count, steps + 1)
    alive = np.ones(count, dtype=bool)
    fixed = None
    for n in range(steps):
        if incremental or fixed is None:
            d, ok = conditional_rows(world, primal, conditions, Z, targets, factors, attr_dirs, keep)
            if not incremental:
                fixed = (d, ok)
        else:
            d, ok = fixed
        newly_dead = alive & ~ok
        abort[newly_dead] = n + 1
        alive &= ok
        Z = Z + np.where(alive[:, None], step_size * d, 0.0)
        paths[n + 1] = Z
    return BatchEdit(paths, abort)


def _point(world: World, n: int, z) -> TrajectoryPoint:
    names = world.attribute_names
    return TrajectoryPoint(
        step=n,
        z=np.array(z),
        x=diffcore.forward(world.generator, z),
        edit_scores={a: float(world.score(a, z, "edit")) for a in names},
        eval_scores={a: float(world.score(a, z, "eval")) for a in names},
    )


def edit(world: World, z0, config: EditConfig, attr_dirs: Mapping[str, np.ndarray] | None = None) -> EditTrajectory:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (world.latent_dim,) or not np.all(np.isfinite(z0)):
        raise ConfigError(f"z0 must be a finite vector of length {world.latent_dim}")
    for name in (config.primal,) + config.conditions:
        world.spec(name)
    res = edit_batch(
        world,
        z0[None, :],
        config.primal,
        config.conditions,
        config.target,
        config.factors,
        config.step_size,
        config.steps,
        config.incremental,
        attr_dirs,
    )
    stop = int(res.abort_step[0])
    last = min(stop, config.steps + 1)
    points = tuple(_point(world, n, res.paths[n, 0]) for n in range(last))
    traj = EditTrajectory(points, config)
    if stop <= config.steps:
        cause = _diagnose(world, res.paths[stop - 1, 0], config, attr_dirs)
        raise PartialTrajectory(f"editing aborted at step {stop}: {cause}", traj, cause)
    return traj


def _diagnose(world, z, config, attr_dirs):
    from .directions import instance_aware_conditional

    try:
        instance_aware_conditional(world, config.primal, config.conditions, z, config.target, config.factors, attr_dirs)
    except (ZeroGradient, DegenerateProjection) as exc:
        return exc
    except Exception as exc:  # noqa: BLE001 - reported, not handled
        return exc
    return ZeroGradient("direction degenerated")


def trajectory_columns(world: World) -> list[str]:
    names = world.attribute_names
    return (
        ["step"]
        + [f"z{i}" for i in range(world.latent_dim)]
        + ["primal_edit_score"]
        + [f"eval_{a}" for a in names]
    )


def trajectory_csv(world: World, traj: EditTrajectory) -> str:
    """Columns: step, z0..z{d-1}, primal_edit_score, eval_<attribute>... in world order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_columns(world))
    for p in traj.points:
        w.writerow(
            [p.step]
            + [repr(float(v)) for v in p.z]
            + [repr(p.edit_scores[traj.config.primal])]
            + [repr(p.eval_scores[a]) for a in world.attribute_names]
        )
    return buf.getvalue()
