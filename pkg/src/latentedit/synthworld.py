"""Synthetic attribute worlds.

A world bundles a fixed differentiable generator ``G`` (latent -> observation),
one hyperplane oracle per binary attribute in latent space, and two
independently trained classifier sets operating on observations: the editing
classifiers (whose gradients drive the edits) and the evaluation classifiers
(which score the edits).  Dataset bias is modelled by rejection-sampling the
classifier training sets so that chosen conditional label frequencies hold.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import diffcore
from .diffcore import Architecture, DiffModel, Layer, TrainHyper
from .errors import (
    BiasUnreachable,
    ClassifierTrainingFailed,
    ConfigError,
    InfeasibleAngles,
    UnknownAttribute,
)
from .seeding import int_seed, rng_for

log = logging.getLogger(__name__)

DEFAULT_ATTRIBUTES = ("expression", "age", "gender", "eyeglasses")
WORLD_FORMAT_VERSION = 1
PILOT_SAMPLES = 200_000
REJECTION_BUDGET = 50  # max draws per requested sample


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    oracle_direction: np.ndarray
    oracle_bias: float = 0.0

    def __post_init__(self):
        g = np.array(self.oracle_direction, dtype=float)
        if abs(np.linalg.norm(g) - 1.0) > 1e-10:
            raise ConfigError(f"oracle direction of {self.name!r} is not unit norm")
        g.setflags(write=False)
        object.__setattr__(self, "oracle_direction", g)
        object.__setattr__(self, "oracle_bias", float(self.oracle_bias))


@dataclass(frozen=True)
class SamplingBias:
    """Target ``P(target=1 | given=1)`` in the classifier training data."""

    given: str
    target: str
    probability: float


@dataclass(frozen=True)
class WorldConfig:
    latent_dim: int = 16
    obs_dim: int = 48
    attributes: tuple[str, ...] = DEFAULT_ATTRIBUTES
    # pairwise angles in degrees, keyed "a|b"; unlisted pairs are orthogonal
    angles: Mapping[str, float] = field(default_factory=dict)
    oracle_biases: Mapping[str, float] = field(default_factory=dict)
    sampling_bias: tuple[SamplingBias, ...] = ()
    generator_kind: str = "nonlinear"
    generator_gain: float = 0.5
    generator_sharpness: float = 1.0
    seed: int = 0
    train_samples: int = 4000
    # None picks the per-generator default: logistic classifiers for a linear
    # world, one tanh hidden layer otherwise
    classifier_hidden: tuple[int, ...] | None = None
    learning_rate: float | None = None
    epochs: int = 600
    accuracy_floor: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "angles", dict(self.angles))
        object.__setattr__(self, "oracle_biases", dict(self.oracle_biases))
        object.__setattr__(
            self,
            "sampling_bias",
            tuple(b if isinstance(b, SamplingBias) else SamplingBias(**b) for b in self.sampling_bias),
        )
        if self.classifier_hidden is not None:
            object.__setattr__(self, "classifier_hidden", tuple(int(h) for h in self.classifier_hidden))
        self.validate()

    def validate(self):
        if self.latent_dim < 2:
            raise ConfigError("latent_dim must be >= 2")
        if self.obs_dim < self.latent_dim:
            raise ConfigError("obs_dim must be >= latent_dim")
        if len(set(self.attributes)) != len(self.attributes) or not self.attributes:
            raise ConfigError("attribute names must be unique and nonempty")
        if self.generator_kind not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown generator kind {self.generator_kind!r}")
        for key in self.angles:
            a, b = _split_pair(key)
            self._known(a), self._known(b)
        for name in self.oracle_biases:
            self._known(name)
        for sb in self.sampling_bias:
            self._known(sb.given), self._known(sb.target)
            if sb.given == sb.target:
                raise ConfigError("sampling bias needs two distinct attributes")
            if not 0.0 < sb.probability < 1.0:
                raise ConfigError("target conditional probability must lie in (0, 1)")
        if self.train_samples < 10:
            raise ConfigError("train_samples too small")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def hidden(self) -> tuple[int, ...]:
        if self.classifier_hidden is not None:
            return self.classifier_hidden
        return () if self.generator_kind == "linear" else (8,)

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 2.0 if not self.hidden else 0.5

    def _known(self, name):
        if name not in self.attributes:
            raise UnknownAttribute(f"unknown attribute {name!r}")

    def angle(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return float(self.angles.get(f"{a}|{b}", self.angles.get(f"{b}|{a}", 90.0)))

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "obs_dim": self.obs_dim,
            "attributes": list(self.attributes),
            "angles": dict(sorted(self.angles.items())),
            "oracle_biases": dict(sorted(self.oracle_biases.items())),
            "sampling_bias": [
                {"given": s.given, "target": s.target, "probability": s.probability} for s in self.sampling_bias
            ],
            "generator_kind": self.generator_kind,
            "generator_gain": self.generator_gain,
            "generator_sharpness": self.generator_sharpness,
            "seed": self.seed,
            "train_samples": self.train_samples,
            "classifier_hidden": None if self.classifier_hidden is None else list(self.classifier_hidden),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "accuracy_floor": self.accuracy_floor,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world config fields: {sorted(unknown)}")
        return cls(**d)


def _split_pair(key: str):
    parts = key.split("|")
    if len(parts) != 2:
        raise ConfigError(f"angle key must look like 'a|b', got {key!r}")
    return parts[0], parts[1]


def default_biased_config(seed: int = 11, **overrides) -> WorldConfig:
    """The entangled reference world: age and eyeglasses at 45 degrees with
    ``P(eyeglasses | age) = 0.9`` in the classifier training data."""
    kw = dict(
        angles={"age|eyeglasses": 45.0},
        sampling_bias=(SamplingBias("age", "eyeglasses", 0.9),),
        generator_kind="nonlinear",
        seed=seed,
    )
    kw.update(overrides)
    return WorldConfig.from_dict(kw)


@dataclass(frozen=True)
class World:
    config: WorldConfig
    attributes: tuple[AttributeSpec, ...]
    generator: DiffModel
    edit_classifiers: Mapping[str, DiffModel]
    eval_classifiers: Mapping[str, DiffModel]
    report: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim

    def spec(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownAttribute(f"unknown attribute {name!r}")

    def classifier(self, name: str, which: str = "edit") -> DiffModel:
        table = self.edit_classifiers if which == "edit" else self.eval_classifiers
        try:
            return table[name]
        except KeyError:
            raise UnknownAttribute(f"no {which} classifier for attribute {name!r}") from None

    def oracle_margin(self, name: str, z):
        a = self.spec(name)
        return np.asarray(z, dtype=float) @ a.oracle_direction + a.oracle_bias

    def score(self, name: str, z, which: str = "edit"):
        """``H(G(z))`` for one point or a batch."""
        out = diffcore.forward(self.classifier(name, which), diffcore.forward(self.generator, z))
        return out[..., 0]

    def score_grad(self, name: str, z, which: str = "edit"):
        """``d H(G(z)) / dz`` by chaining the two reverse sweeps."""
        x = diffcore.forward(self.generator, z)
        gx = diffcore.grad_input(self.classifier(name, which), x, 0)
        return diffcore.vjp(self.generator, z, gx)


def oracle_label(world: World, attribute: str, z) -> int:
    """1 iff ``g . z + b > 0``; the boundary itself is labelled 0."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    return int(world.oracle_margin(attribute, z) > 0)


def oracle_labels(world: World, z) -> dict[str, np.ndarray]:
    z = np.atleast_2d(z)
    return {a.name: (z @ a.oracle_direction + a.oracle_bias > 0).astype(int) for a in world.attributes}


# --- construction -------------------------------------------------------------


def oracle_directions(config: WorldConfig) -> np.ndarray:
    """Unit vectors (one row per attribute) realizing the configured angles."""
    names = config.attributes
    m = len(names)
    gram = np.array([[np.cos(np.radians(config.angle(a, b))) for b in names] for a in names])
    evals, evecs = np.linalg.eigh(gram)
    if evals.min() < -1e-10:
        raise InfeasibleAngles("requested angles give an indefinite Gram matrix")
    keep = evals > 1e-10
    rank = int(keep.sum())
    if rank > config.latent_dim:
        raise InfeasibleAngles(f"angles need {rank} dimensions, latent space has {config.latent_dim}")
    coords = evecs[:, keep] * np.sqrt(evals[keep])  # (m, rank), coords @ coords.T == gram
    rng = rng_for(config.seed, "oracle-basis")
    basis, _ = np.linalg.qr(rng.standard_normal((config.latent_dim, rank)))
    dirs = coords @ basis.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    assert dirs.shape == (m, config.latent_dim)
    return dirs


def build_generator(config: WorldConfig) -> DiffModel:
    """Seeded analytic generator; condition number of the linear part <= 3."""
    rng = rng_for(config.seed, "generator")
    n, d = config.latent_dim, config.obs_dim
    u, _ = np.linalg.qr(rng.standard_normal((d, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = rng.uniform(1.0, 3.0, size=n)
    m = (u * s) @ v.T
    if config.generator_kind == "linear":
        return DiffModel((Layer(m, np.zeros(d), "identity"),))
    hidden = d
    w1 = rng.normal(scale=config.generator_sharpness / np.sqrt(n), size=(hidden, n))
    b1 = rng.normal(scale=0.5, size=hidden)
    w2 = rng.normal(scale=1.0 / np.sqrt(hidden), size=(d, hidden))
    return DiffModel(
        (Layer(w1, b1, "tanh"), Layer(config.generator_gain * w2, np.zeros(d), "identity")),
        skip=m,
    )


def _patterns(labels: Mapping[str, np.ndarray], names):
    code = np.zeros(len(next(iter(labels.values()))), dtype=np.int64)
    for i, name in enumerate(names):
        code |= labels[name].astype(np.int64) << i
    return code


def _acceptance(attrs, config: WorldConfig):
    """Per-joint-label acceptance probabilities that realize the target
    conditionals, fitted by iterative proportional fitting on a pilot sample."""
    involved = sorted({s.given for s in config.sampling_bias} | {s.target for s in config.sampling_bias})
    if not involved:
        return involved, None
    rng = rng_for(config.seed, "bias-pilot")
    z = rng.standard_normal((PILOT_SAMPLES, config.latent_dim))
    labels = {a.name: (z @ a.oracle_direction + a.oracle_bias > 0).astype(int) for a in attrs if a.name in involved}
    codes = _patterns(labels, involved)
    prior = np.bincount(codes, minlength=2 ** len(involved)).astype(float)
    prior /= prior.sum()
    bits = {name: (np.arange(len(prior)) >> i) & 1 for i, name in enumerate(involved)}

    w = np.ones_like(prior)
    for _ in range(500):
        worst = 0.0
        for sb in config.sampling_bias:
            a_on = bits[sb.given] == 1
            both = a_on & (bits[sb.target] == 1)
            only = a_on & (bits[sb.target] == 0)
            mass_a = (w * prior)[a_on].sum()
            if mass_a <= 0:
                raise BiasUnreachable(f"{sb.given}=1 never occurs under the prior")
            p = (w * prior)[both].sum() / mass_a
            if p <= 0 or p >= 1:
                raise BiasUnreachable(
                    f"P({sb.target}|{sb.given}) is pinned at {p:.3f} by the oracle geometry"
                )
            worst = max(worst, abs(p - sb.probability))
            w[both] *= sb.probability / p
            w[only] *= (1 - sb.probability) / (1 - p)
        if worst < 1e-12:
            break
    accept = w / w.max()
    mean_accept = float((accept * prior).sum())
    if mean_accept * REJECTION_BUDGET < 1.0:
        raise BiasUnreachable(f"acceptance rate {mean_accept:.4f} exceeds the rejection budget")
    return involved, accept


def _draw(attrs, generator, config: WorldConfig, count: int, rng, acceptance=None):
    if count < 1:
        raise ConfigError("count must be >= 1")
    involved, accept = acceptance if acceptance is not None else _acceptance(attrs, config)
    dirs = np.stack([a.oracle_direction for a in attrs])
    offs = np.array([a.oracle_bias for a in attrs])
    out, drawn, have = [], 0, 0
    chunk = max(256, count)
    while have < count:
        if drawn >= REJECTION_BUDGET * count:
            raise BiasUnreachable("rejection budget exhausted")
        z = rng.standard_normal((chunk, config.latent_dim))
        drawn += chunk
        if accept is not None:
            lab = (z @ dirs.T + offs > 0).astype(int)
            names = [a.name for a in attrs]
            codes = _patterns({n: lab[:, names.index(n)] for n in involved}, involved)
            z = z[rng.uniform(size=chunk) < accept[codes]]
        out.append(z)
        have += len(z)
    z = np.concatenate(out)[:count]
    labels = (z @ dirs.T + offs > 0).astype(int)
    return z, labels


@dataclass(frozen=True)
class LabeledSample:
    z: np.ndarray
    x: np.ndarray
    labels: Mapping[str, int]


@dataclass(frozen=True)
class SampleBatch:
    """Columnar form of a list of ``LabeledSample``."""

    z: np.ndarray
    x: np.ndarray
    labels: Mapping[str, np.ndarray]

    def __len__(self):
        return len(self.z)

    def __iter__(self):
        for i in range(len(self.z)):
            yield LabeledSample(self.z[i], self.x[i], {k: int(v[i]) for k, v in self.labels.items()})


def sample_biased(world: World, count: int, seed: int) -> SampleBatch:
    """Prior samples thinned so the configured conditionals hold."""
    rng = rng_for(seed, "sample-biased")
    z, lab = _draw(world.attributes, world.generator, world.config, count, rng)
    names = world.attribute_names
    return SampleBatch(z, diffcore.forward(world.generator, z), {n: lab[:, i] for i, n in enumerate(names)})


def build_world(config: WorldConfig) -> World:
    dirs = oracle_directions(config)
    attrs = tuple(
        AttributeSpec(name, dirs[i], config.oracle_biases.get(name, 0.0)) for i, name in enumerate(config.attributes)
    )
    generator = build_generator(config)
    acceptance = _acceptance(attrs, config)
    arch = Architecture(hidden=config.hidden)
    sets, report = {}, {}
    check = rng_for(config.seed, "prior-check").standard_normal((4000, config.latent_dim))
    check_x = diffcore.forward(generator, check)
    for which in ("edit", "eval"):
        z, lab = _draw(attrs, generator, config, config.train_samples, rng_for(config.seed, "train", which), acceptance)
        x = diffcore.forward(generator, z)
        models = {}
        for i, a in enumerate(attrs):
            hyper = TrainHyper(config.lr, config.epochs, int_seed(config.seed, "init", which, a.name))
            res = diffcore.train_classifier(x, lab[:, i], arch, hyper)
            prior_acc = diffcore.accuracy(res.model, check_x, (check @ a.oracle_direction + a.oracle_bias > 0).astype(int))
            report[f"{which}/{a.name}"] = {
                "train_accuracy": res.train_accuracy,
                "holdout_accuracy": res.holdout_accuracy,
                "prior_accuracy": prior_acc,
                "final_loss": res.final_loss,
            }
            if res.holdout_accuracy < config.accuracy_floor:
                raise ClassifierTrainingFailed(
                    f"{which} classifier for {a.name!r} reached {res.holdout_accuracy:.3f} < {config.accuracy_floor}"
                )
            models[a.name] = res.model
        sets[which] = models
    return World(config, attrs, generator, sets["edit"], sets["eval"], report)


# --- serialization ------------------------------------------------------------


def world_to_dict(world: World) -> dict:
    return {
        "format_version": WORLD_FORMAT_VERSION,
        "config": world.config.to_dict(),
        "attributes": [
            {"name": a.name, "oracle_direction": a.oracle_direction.tolist(), "oracle_bias": a.oracle_bias}
            for a in world.attributes
        ],
        "generator": diffcore.model_to_dict(world.generator),
        "edit_classifiers": {k: diffcore.model_to_dict(m) for k, m in world.edit_classifiers.items()},
        "eval_classifiers": {k: diffcore.model_to_dict(m) for k, m in world.eval_classifiers.items()},
        "report": {k: dict(v) for k, v in world.report.items()},
    }


def world_from_dict(d: Mapping) -> World:
    if d.get("format_version") != WORLD_FORMAT_VERSION:
        raise ConfigError(f"unsupported world format version {d.get('format_version')!r}")
    return World(
        config=WorldConfig.from_dict(d["config"]),
        attributes=tuple(AttributeSpec(a["name"], a["oracle_direction"], a["oracle_bias"]) for a in d["attributes"]),
        generator=diffcore.model_from_dict(d["generator"]),
        edit_classifiers={k: diffcore.model_from_dict(m) for k, m in d["edit_classifiers"].items()},
        eval_classifiers={k: diffcore.model_from_dict(m) for k, m in d["eval_classifiers"].items()},
        report=d.get("report", {}),
    )


def dumps_world(world: World) -> str:
    return json.dumps(world_to_dict(world), sort_keys=True)


def loads_world(text: str) -> World:
    return world_from_dict(json.loads(text))


def save_world(world: World, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_world(world))


def load_world(path) -> World:
    with open(path, encoding="utf-8") as fh:
        return loads_world(fh.read())


def identity_logistic_world(weights: Mapping[str, np.ndarray], bias: Mapping[str, float] | None = None) -> World:
    """Hand-built world with ``G = identity`` and logistic classifiers.

    Oracles coincide with the classifiers' boundaries; both classifier sets
    are the same model.  Used for closed-form checks.
    """
    bias = dict(bias or {})
    names = tuple(weights)
    dim = len(next(iter(weights.values())))
    attrs, models = [], {}
    for name in names:
        w = np.asarray(weights[name], dtype=float)
        nw = np.linalg.norm(w)
        attrs.append(AttributeSpec(name, w / nw, bias.get(name, 0.0) / nw))
        models[name] = diffcore.linear_model(w[None, :], [bias.get(name, 0.0)], "sigmoid")
    cfg = WorldConfig(latent_dim=max(dim, 2), obs_dim=max(dim, 2), attributes=names, generator_kind="linear")
    gen = DiffModel((Layer(np.eye(dim), np.zeros(dim), "identity"),))
    return World(cfg, tuple(attrs), gen, models, dict(models))


def all_pairs(world: World):
    """Ordered (primal, condition) pairs."""
    return list(itertools.permutations(world.attribute_names, 2))
