"""Semantic directions in latent space.

The batch kernels (``*_rows``) work on ``(n, d)`` arrays of latent points
and return a direction per row plus a validity mask; the single-point
functions wrap them and raise instead of masking.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore
from .diffcore import Architecture, TrainHyper
from .errors import (
    ConfigError,
    DegenerateCombination,
    DegenerateData,
    DegenerateProjection,
    EmptySampleSet,
    ZeroGradient,
)
from .seeding import int_seed, rng_for
from .synthworld import World

log = logging.getLogger(__name__)

KINDS = ("attribute_level", "instance_specific", "instance_aware", "conditional")
ZERO_GRAD = 1e-12
DEGENERATE_BLEND = 1e-12
DEPENDENT_CONDITION = 1e-10
ATTR_LEVEL_SAMPLES = 2000


@dataclass(frozen=True)
class SemanticDirection:
    vector: np.ndarray
    attribute: str
    kind: str

    def __post_init__(self):
        v = np.array(self.vector, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("direction must be a finite 1-D vector")
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError(f"direction is not unit norm (|v| = {np.linalg.norm(v)!r})")
        if self.kind not in KINDS:
            raise ValueError(f"unknown direction kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def to_dict(self) -> dict:
        return {"attribute": self.attribute, "kind": self.kind, "vector": self.vector.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SemanticDirection":
        return cls(np.array(d["vector"], dtype=float), d["attribute"], d["kind"])


@dataclass(frozen=True)
class ControlFactors:
    lambda1: float = 0.75
    lambda2: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)


def _unit_rows(g, eps):
    norms = np.linalg.norm(g, axis=1)
    ok = norms >= eps
    safe = np.where(ok, norms, 1.0)
    return g / safe[:, None], ok


# --- instance-specific -------------------------------------------------------


def instance_specific_rows(world: World, attribute: str, Z, y, which: str = "edit"):
    """``(2y-1) grad_z H(G(z)) / |grad|`` per row; mask is False on zero gradients."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    sign = 2.0 * np.broadcast_to(np.asarray(y, dtype=float), (len(Z),)) - 1.0
    g = world.score_grad(attribute, Z, which)
    u, ok = _unit_rows(g, ZERO_GRAD)
    return sign[:, None] * u, ok


def instance_specific(world: World, attribute: str, z, y: int) -> SemanticDirection:
    if y not in (0, 1):
        raise ValueError("target label must be 0 or 1")
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or not np.all(np.isfinite(z)):
        raise ValueError("z must be a finite vector")
    d, ok = instance_specific_rows(world, attribute, z[None, :], y)
    if not ok[0]:
        raise ZeroGradient(f"gradient of {attribute!r} classifier vanishes at z")
    return SemanticDirection(d[0], attribute, "instance_specific")


# --- attribute-level ---------------------------------------------------------


def average_direction(world: World, attribute: str, sample_count: int, seed: int, which: str = "edit"):
    """Mean of per-sample instance directions (target 1) over prior samples.

    Returns ``(direction, skipped)`` where ``skipped`` counts samples whose
    gradient vanished.
    """
    if sample_count < 1:
        raise EmptySampleSet("sample_count must be >= 1")
    Z = rng_for(seed, "attr-avg", attribute).standard_normal((sample_count, world.latent_dim))
    d, ok = instance_specific_rows(world, attribute, Z, 1, which)
    skipped = int((~ok).sum())
    if skipped == sample_count:
        raise EmptySampleSet(f"every sample had a vanishing gradient for {attribute!r}")
    if skipped:
        log.warning("attribute-level average for %s skipped %d of %d samples", attribute, skipped, sample_count)
    mean = d[ok].mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < ZERO_GRAD:
        raise EmptySampleSet(f"instance directions for {attribute!r} cancel out")
    return SemanticDirection(mean / norm, attribute, "attribute_level"), skipped


def attribute_level_avg(world: World, attribute: str, sample_count: int, seed: int) -> SemanticDirection:
    return average_direction(world, attribute, sample_count, seed)[0]


def attribute_level_boundary(latent_samples, labels=None, attribute: str = "", *, epochs: int = 3000, seed: int = 0):
    """Unit normal of a logistic-regression boundary fitted in latent space.

    ``latent_samples`` is either an ``(n, d)`` array with ``labels`` given
    separately, or a sequence of ``(z, label)`` pairs.
    """
    if labels is None:
        pairs = list(latent_samples)
        Z = np.array([p[0] for p in pairs], dtype=float)
        labels = np.array([p[1] for p in pairs], dtype=int)
    else:
        Z = np.asarray(latent_samples, dtype=float)
        labels = np.asarray(labels, dtype=int)
    if len(labels) == 0 or np.all(labels == labels[0]):
        raise DegenerateData("both labels must be present")
    res = diffcore.train_classifier(
        Z, labels, Architecture(hidden=()), TrainHyper(learning_rate=1.0, epochs=epochs, seed=seed, holdout_fraction=0.0)
    )
    w = np.array(res.model.layers[0].weight[0])
    norm = np.linalg.norm(w)
    if norm < ZERO_GRAD:
        raise DegenerateData("fitted boundary has a zero normal")
    return SemanticDirection(w / norm, attribute, "attribute_level")


def boundary_direction(world: World, attribute: str, sample_count: int, seed: int) -> SemanticDirection:
    """Boundary-normal baseline: prior samples labelled by the editing classifier."""
    Z = rng_for(seed, "attr-boundary", attribute).standard_normal((sample_count, world.latent_dim))
    labels = (world.score(attribute, Z) > 0.5).astype(int)
    return attribute_level_boundary(Z, labels, attribute, seed=int_seed(seed, "boundary-init", attribute))


_cache_lock = threading.Lock()
_cache: dict = {}


def attribute_directions(world: World, method: str = "average", sample_count: int | None = None, seed: int | None = None):
    """Attribute-level direction (target-1 orientation) for every attribute.

    Computed once per (world, method, sample_count, seed) and reused.
    """
    sample_count = ATTR_LEVEL_SAMPLES if sample_count is None else sample_count
    seed = int_seed(world.config.seed, "attr-level") if seed is None else seed
    key = (id(world), method, sample_count, seed)
    with _cache_lock:
        hit = _cache.get(key)
        if hit is not None and hit[0] is world:
            return hit[1]
    if method == "average":
        dirs = {a: attribute_level_avg(world, a, sample_count, seed).vector for a in world.attribute_names}
    elif method == "boundary":
        dirs = {a: boundary_direction(world, a, sample_count, seed).vector for a in world.attribute_names}
    else:
        raise ConfigError(f"unknown attribute-level method {method!r}")
    with _cache_lock:
        _cache.setdefault(key, (world, dirs))
        return _cache[key][1]


# --- fusion and projection ---------------------------------------------------


def combine_rows(d_attr, d_inst, lam: float):
    """Row-wise ``normalize(lam * d_attr + (1 - lam) * d_inst)``."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lambda must lie in [0, 1]")
    d_attr = np.atleast_2d(d_attr)
    d_inst = np.atleast_2d(d_inst)
    if lam == 1.0:
        return np.array(np.broadcast_to(d_attr, np.broadcast_shapes(d_attr.shape, d_inst.shape))), np.ones(
            max(len(d_attr), len(d_inst)), bool
        )
    if lam == 0.0:
        return np.array(np.broadcast_to(d_inst, np.broadcast_shapes(d_attr.shape, d_inst.shape))), np.ones(
            max(len(d_attr), len(d_inst)), bool
        )
    return _unit_rows(lam * d_attr + (1.0 - lam) * d_inst, DEGENERATE_BLEND)


def combine(d_attr: SemanticDirection, d_inst: SemanticDirection, lam: float) -> SemanticDirection:
    if d_attr.attribute != d_inst.attribute:
        raise ConfigError("cannot blend directions of different attributes")
    out, ok = combine_rows(d_attr.vector[None, :], d_inst.vector[None, :], lam)
    if not ok[0]:
        raise DegenerateCombination("blended direction vanishes")
    return SemanticDirection(out[0], d_attr.attribute, "instance_aware")


def project_rows(P, conditions: Sequence[np.ndarray]):
    """Remove from each row of ``P`` its component in the span of the
    matching rows of the condition arrays.

    Conditions are orthonormalized per row by Gram-Schmidt with one
    re-orthogonalization pass; rows whose residual falls below 1e-10 are
    dropped for that condition.  Returns ``(unit directions, ok, dropped)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = len(P)
    basis = []
    dropped = np.zeros(n, dtype=int)
    for c in conditions:
        c = np.broadcast_to(np.atleast_2d(np.asarray(c, dtype=float)), P.shape)
        r = np.array(c)
        for _ in range(2):
            for q in basis:
                r -= np.sum(r * q, axis=1, keepdims=True) * q
        u, keep = _unit_rows(r, DEPENDENT_CONDITION)
        dropped += ~keep
        basis.append(np.where(keep[:, None], u, 0.0))
    r = np.array(P)
    for _ in range(2):
        for q in basis:
            r -= np.sum(r * q, axis=1, keepdims=True) * q
    out, ok = _unit_rows(r, DEPENDENT_CONDITION)
    return out, ok, dropped


def condition_project(primal: SemanticDirection, conditions: Sequence[SemanticDirection]) -> SemanticDirection:
    if not conditions:
        return primal
    out, ok, dropped = project_rows(primal.vector[None, :], [c.vector for c in conditions])
    if dropped[0]:
        log.warning("dropped %d near-dependent condition direction(s)", dropped[0])
    if not ok[0]:
        raise DegenerateProjection("primal direction lies in the span of the conditions")
    return SemanticDirection(out[0], primal.attribute, "conditional")


# --- instance-aware conditional ----------------------------------------------


def instance_aware_rows(
    world: World,
    attribute: str,
    Z,
    y,
    lam: float,
    attr_dir: np.ndarray,
):
    """Instance-aware direction per row; the attribute-level part is flipped for target 0."""
    Z = np.atleast_2d(Z)
    sign = 2.0 * np.broadcast_to(np.asarray(y, dtype=float), (len(Z),)) - 1.0
    d_attr = sign[:, None] * attr_dir[None, :]
    if lam == 1.0:
        return d_attr, np.ones(len(Z), bool)
    d_inst, ok = instance_specific_rows(world, attribute, Z, y)
    out, ok2 = combine_rows(d_attr, d_inst, lam)
    return out, ok & ok2


def conditional_rows(
    world: World,
    primal: str,
    conditions: Sequence[str],
    Z,
    y,
    factors: ControlFactors,
    attr_dirs: Mapping[str, np.ndarray],
    condition_targets: Mapping[str, np.ndarray] | None = None,
):
    """Direction used for one edit step, for every row of ``Z``.

    ``condition_targets`` gives the label each condition attribute should
    keep; by default the editing classifier's current label at ``Z``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d, ok = instance_aware_rows(world, primal, Z, y, factors.lambda1, attr_dirs[primal])
    conds = []
    for b in conditions:
        if b == primal:
            raise ConfigError("primal attribute cannot also be a condition")
        if condition_targets is not None and b in condition_targets:
            yb = condition_targets[b]
        else:
            yb = (world.score(b, Z) > 0.5).astype(int)
        db, okb = instance_aware_rows(world, b, Z, yb, factors.lambda2, attr_dirs[b])
        conds.append(db)
        ok &= okb
    if not conds:
        return d, ok
    out, okp, _ = project_rows(d, conds)
    return out, ok & okp


def instance_aware_conditional(
    world: World,
    primal: str,
    conditions: Sequence[str],
    z,
    y: int,
    factors: ControlFactors = ControlFactors(),
    attr_dirs: Mapping[str, np.ndarray] | None = None,
) -> SemanticDirection:
    z = np.asarray(z, dtype=float)
    if len(set(conditions)) != len(conditions) or primal in conditions:
        raise ConfigError("primal and condition attributes must be distinct")
    attr_dirs = attribute_directions(world) if attr_dirs is None else attr_dirs
    a_level = SemanticDirection(attr_dirs[primal] * (2 * y - 1), primal, "attribute_level")
    d_a = a_level if factors.lambda1 == 1.0 else combine(a_level, instance_specific(world, primal, z, y), factors.lambda1)
    cond_dirs = []
    for b in conditions:
        yb = int(world.score(b, z) > 0.5)
        b_level = SemanticDirection(attr_dirs[b] * (2 * yb - 1), b, "attribute_level")
        cond_dirs.append(
            b_level if factors.lambda2 == 1.0 else combine(b_level, instance_specific(world, b, z, yb), factors.lambda2)
        )
    if not cond_dirs:
        return SemanticDirection(d_a.vector, primal, "instance_aware")
    return condition_project(d_a, cond_dirs)


# --- persistence --------------------------------------------------------------


def save_direction(direction: SemanticDirection, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(direction.to_dict(), fh)


def load_direction(path) -> SemanticDirection:
    with open(path, encoding="utf-8") as fh:
        return SemanticDirection.from_dict(json.load(fh))
