"""Experiment runner.

Every subcommand reads an optional JSON config, builds (or loads) a world,
runs one task and writes its artifacts plus ``manifest.json`` into the
output directory.  Results depend only on the config and the master seed;
``--threads`` changes wall time, never bytes.

Config layout (all keys optional except ``schema_version``)::

    {
      "schema_version": 1,
      "task": "grid",                 # must match the subcommand if given
      "seed": 11,                     # master seed, --seed overrides
      "world": {"preset": "biased", ...WorldConfig fields...},
      "world_path": "saved.world.json",   # instead of "world"
      "params": {...task parameters...}
    }
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from typing import Mapping, Sequence

import numpy as np

from . import dtmetric
from .directions import ControlFactors, attribute_directions
from .editor import DEFAULT_STEP, DEFAULT_STEPS, EditConfig, edit, trajectory_csv
from .errors import ArtifactIOError, ConfigError, LatentEditError, PartialTrajectory
from .seeding import rng_for
from .synthworld import World, WorldConfig, build_world, default_biased_config, dumps_world, load_world

SCHEMA_VERSION = 1
TASKS = ("world", "edit", "dt", "grid", "ablate-incremental", "compare-attr-level")
DEFAULT_SEED = 11
EXIT_CODES = {"config": 2, "numerical": 3, "io": 4}
ABLATION_P = (0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9)
# enough steps for p to cover the whole comparison window
ABLATION_STEPS = 40

_PARAMS = {
    "world": {"name": "world"},
    "edit": {
        "primal": "age",
        "conditions": ["eyeglasses"],
        "target": None,  # None flips the starting label
        "lambda1": 0.75,
        "lambda2": 0.0,
        "step_size": DEFAULT_STEP,
        "steps": DEFAULT_STEPS,
        "incremental": True,
        "z0": None,  # None draws from the prior
        "attr_level": "average",
    },
    "dt": {
        "primal": "age",
        "condition": "eyeglasses",
        "lambda1": 0.75,
        "lambda2": 0.0,
        "step_size": DEFAULT_STEP,
        "steps": DEFAULT_STEPS,
        "samples": 1000,
        "scorer": "eval",
        "incremental": True,
        "attr_level": "average",
    },
    "grid": {
        "grid": list(dtmetric.DEFAULT_GRID),
        "step_size": DEFAULT_STEP,
        "steps": DEFAULT_STEPS,
        "samples": 1000,
        "scorer": "eval",
        "attr_level": "average",
    },
    "ablate-incremental": {
        "primal": "age",
        "condition": "eyeglasses",
        "lambda1": 0.75,
        "lambda2": 0.0,
        "step_size": DEFAULT_STEP,
        "steps": ABLATION_STEPS,
        "samples": 500,
        "scorer": "eval",
        "p_grid": list(ABLATION_P),
    },
    "compare-attr-level": {
        "lambda1": 1.0,
        "lambda2": 1.0,
        "step_size": DEFAULT_STEP,
        "steps": DEFAULT_STEPS,
        "samples": 1000,
        "scorer": "eval",
    },
}


@dataclass
class ExperimentConfig:
    task: str
    seed: int = DEFAULT_SEED
    world: Mapping | None = None
    world_path: str | None = None
    params: dict = field(default_factory=dict)
    out: str = "out"
    threads: int = 1

    def resolved(self) -> dict:
        """What goes into the manifest: everything that can change the results."""
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "seed": self.seed,
            "world": None if self.world is None else dict(self.world),
            "world_path": self.world_path,
            "params": self.params,
        }


def parse_config(raw: Mapping, task: str, seed: int | None = None) -> ExperimentConfig:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    unknown = set(raw) - {"schema_version", "task", "seed", "world", "world_path", "params"}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw.get('schema_version')!r}")
    if raw.get("task", task) != task:
        raise ConfigError(f"config is for task {raw['task']!r}, not {task!r}")
    if "world" in raw and "world_path" in raw:
        raise ConfigError("give either world or world_path, not both")
    master = raw.get("seed", DEFAULT_SEED) if seed is None else seed
    if not isinstance(master, int) or isinstance(master, bool) or not 0 <= master < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    params = dict(_PARAMS[task])
    given = raw.get("params", {})
    if not isinstance(given, Mapping):
        raise ConfigError("params must be an object")
    bad = set(given) - set(params)
    if bad:
        raise ConfigError(f"unknown {task} parameters: {sorted(bad)}")
    params.update(given)
    if raw.get("world_path") is not None and not os.path.exists(raw["world_path"]):
        raise ArtifactIOError(f"world file not found: {raw['world_path']}")
    return ExperimentConfig(task, master, raw.get("world"), raw.get("world_path"), params)


def world_config(spec: Mapping | None, seed: int) -> WorldConfig:
    spec = dict(spec or {})
    preset = spec.pop("preset", "biased")
    spec.setdefault("seed", seed)
    if preset == "biased":
        return default_biased_config(**spec)
    if preset == "plain":
        return WorldConfig.from_dict(spec)
    raise ConfigError(f"unknown world preset {preset!r}")


def obtain_world(cfg: ExperimentConfig) -> World:
    if cfg.world_path is not None:
        try:
            return load_world(cfg.world_path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ArtifactIOError(f"cannot read world {cfg.world_path}: {exc}") from exc
    return build_world(world_config(cfg.world, cfg.seed))


# --- analyses -------------------------------------------------------------------


def compare_attr_level(
    world: World,
    sample_count: int = 1000,
    seed: int = 0,
    factors: ControlFactors = ControlFactors(1.0, 1.0),
    **dt_kw,
) -> dict:
    """Averaging estimator vs boundary-normal baseline.

    Per-attribute cosine between the two attribute-level directions, and the
    mean DT-AUC over all ordered pairs obtained with each of them.
    """
    avg = attribute_directions(world, "average")
    bnd = attribute_directions(world, "boundary")
    cos = {a: float(np.dot(avg[a], bnd[a])) for a in world.attribute_names}
    report = {"cosine": cos, "auc": {}, "factors": [factors.lambda1, factors.lambda2], "samples": sample_count}
    if len(world.attribute_names) >= 2:
        for name, dirs in (("average", avg), ("boundary", bnd)):
            report["auc"][name] = dtmetric.mean_auc(
                world, factors, sample_count=sample_count, seed=seed, attr_dirs=dirs, **dt_kw
            )
        report["auc_difference"] = abs(report["auc"]["average"] - report["auc"]["boundary"])
    return report


def ablate_incremental(
    world: World,
    primal: str,
    condition: str,
    factors: ControlFactors = ControlFactors(),
    p_grid: Sequence[float] = ABLATION_P,
    sample_count: int = 500,
    seed: int = 0,
    n_max: int = ABLATION_STEPS,
    **dt_kw,
) -> dict:
    """Incremental vs fixed-direction editing on the same samples, compared
    as q at matched transformation accuracy p.

    Beyond the largest p a curve reaches, q is held at its last value.
    """
    Z0 = dtmetric.dt_samples(world, sample_count, seed)
    dt_kw["n_max"] = n_max
    curves = {
        mode: dtmetric.evaluate_dt(
            world, primal, condition, factors, sample_count=sample_count, samples=Z0, incremental=(mode == "incremental"), **dt_kw
        )
        for mode in ("incremental", "fixed")
    }
    p = np.asarray(p_grid, dtype=float)
    q_inc = dtmetric.q_at(curves["incremental"], p)
    q_fix = dtmetric.q_at(curves["fixed"], p)
    return {
        "p": p,
        "q_incremental": q_inc,
        "q_fixed": q_fix,
        "mean_incremental": float(q_inc.mean()),
        "mean_fixed": float(q_fix.mean()),
        "curves": curves,
    }


# --- artifact writing -----------------------------------------------------------


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(v) -> str:
    return repr(float(v))


class Artifacts:
    def __init__(self, out: str):
        self.out = out
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def write(self, manifest: dict):
        try:
            os.makedirs(self.out, exist_ok=True)
            entries = []
            for name in sorted(self.files):
                data = self.files[name].encode("utf-8")
                with open(os.path.join(self.out, name), "wb") as fh:
                    fh.write(data)
                entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
            manifest = dict(manifest, outputs=entries)
            with open(os.path.join(self.out, "manifest.json"), "wb") as fh:
                fh.write(_json(manifest).encode("utf-8"))
        except OSError as exc:
            raise ArtifactIOError(f"cannot write artifacts to {self.out}: {exc}") from exc


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "python": platform.python_version()}


def _factors(params) -> ControlFactors:
    return ControlFactors(float(params["lambda1"]), float(params["lambda2"]))


def _task_world(world, cfg, art):
    art.add(f"{cfg.params['name']}.world.json", dumps_world(world) + "\n")
    rows = []
    for key in sorted(world.report):
        which, attr = key.split("/", 1)
        r = world.report[key]
        rows.append([which, attr] + [_f(r[c]) for c in ("train_accuracy", "holdout_accuracy", "prior_accuracy", "final_loss")])
    art.add(
        "classifier_accuracy.csv",
        _table(["set", "attribute", "train_accuracy", "holdout_accuracy", "prior_accuracy", "final_loss"], rows),
    )


def _task_edit(world, cfg, art):
    p = cfg.params
    if p["z0"] is None:
        z0 = rng_for(cfg.seed, "edit-z0").standard_normal(world.latent_dim)
    else:
        z0 = np.asarray(p["z0"], dtype=float)
    target = p["target"]
    if target is None:
        target = 1 - int(world.score(p["primal"], z0) > 0.5)
    config = EditConfig(
        p["primal"], tuple(p["conditions"]), int(target), _factors(p), float(p["step_size"]), int(p["steps"]), bool(p["incremental"])
    )
    dirs = attribute_directions(world, p["attr_level"])
    try:
        traj = edit(world, z0, config, dirs)
    except PartialTrajectory as exc:
        art.add("trajectory.csv", trajectory_csv(world, exc.trajectory))
        raise
    art.add("trajectory.csv", trajectory_csv(world, traj))


def _dt_kw(p):
    return {"k": float(p["step_size"]), "n_max": int(p["steps"]), "scorer": p["scorer"]}


def _task_dt(world, cfg, art):
    p = cfg.params
    curve = dtmetric.evaluate_dt(
        world, p["primal"], p["condition"], _factors(p), sample_count=int(p["samples"]), seed=cfg.seed,
        incremental=bool(p["incremental"]), attr_dirs=attribute_directions(world, p["attr_level"]), **_dt_kw(p),
    )
    art.add("curve.csv", dtmetric.curve_csv(curve))
    label = f"{p['primal']} | {p['condition']} (lambda1={p['lambda1']:g}, lambda2={p['lambda2']:g})"
    art.add("curve.svg", dtmetric.curves_svg({label: curve}, "DT curve"))
    art.add("summary.json", _json({"primal": p["primal"], "condition": p["condition"], "auc": dtmetric.auc(curve)}))


def _task_grid(world, cfg, art):
    p = cfg.params
    rep = dtmetric.grid_search(
        world, p["grid"], sample_count=int(p["samples"]), seed=cfg.seed, threads=cfg.threads,
        attr_dirs=attribute_directions(world, p["attr_level"]), **_dt_kw(p),
    )
    art.add("grid.csv", dtmetric.grid_csv(rep))
    rows = [[_f(l1), _f(l2), a, b, _f(v)] for (l1, l2, a, b), v in sorted(rep.pair_aucs.items())]
    art.add("grid_pairs.csv", _table(["lambda1", "lambda2", "primal", "condition", "auc"], rows))
    art.add(
        "grid_best.json",
        _json({"best": list(rep.best), "auc": rep.cells[rep.best], "pair_count": rep.pair_count, "grid": list(rep.grid)}),
    )


def _task_ablate(world, cfg, art):
    p = cfg.params
    res = ablate_incremental(
        world, p["primal"], p["condition"], _factors(p), p["p_grid"], int(p["samples"]), cfg.seed, **_dt_kw(p)
    )
    rows = [
        [_f(a), _f(b), _f(c), _f(b - c)] for a, b, c in zip(res["p"], res["q_incremental"], res["q_fixed"])
    ]
    art.add("ablation.csv", _table(["p", "q_incremental", "q_fixed", "difference"], rows))
    for mode, curve in res["curves"].items():
        art.add(f"curve_{mode}.csv", dtmetric.curve_csv(curve))
    art.add("ablation.svg", dtmetric.curves_svg(res["curves"], f"{p['primal']} | {p['condition']}"))
    art.add("summary.json", _json({"mean_incremental": res["mean_incremental"], "mean_fixed": res["mean_fixed"]}))


def _task_compare(world, cfg, art):
    p = cfg.params
    rep = compare_attr_level(world, int(p["samples"]), cfg.seed, _factors(p), **_dt_kw(p))
    rows = [[a, _f(c)] for a, c in rep["cosine"].items()]
    art.add("attr_level_cosine.csv", _table(["attribute", "cosine"], rows))
    art.add("attr_level_report.json", _json(rep))


_RUNNERS = {
    "world": _task_world,
    "edit": _task_edit,
    "dt": _task_dt,
    "grid": _task_grid,
    "ablate-incremental": _task_ablate,
    "compare-attr-level": _task_compare,
}


def run(cfg: ExperimentConfig) -> int:
    """Run one task; raises on failure after writing whatever was produced."""
    art = Artifacts(cfg.out)
    manifest = {"config": cfg.resolved(), "versions": _versions()}
    world = obtain_world(cfg)
    try:
        _RUNNERS[cfg.task](world, cfg, art)
    except LatentEditError as exc:
        if art.files:
            art.write(dict(manifest, error={"category": exc.category, "message": str(exc)}))
        raise
    art.write(manifest)
    return 0


def _load_raw(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in raw:
        raise ConfigError("config needs a schema_version field")
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentedit", description="Latent-space attribute editing experiments.")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        s = sub.add_parser(task)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = parse_config(_load_raw(args.config), args.task, args.seed)
        cfg.out, cfg.threads = args.out, args.threads
        run(cfg)
    except LatentEditError as exc:
        code = EXIT_CODES.get(exc.category, 3)
        print(json.dumps({"error": exc.category, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return code
    except OSError as exc:
        print(json.dumps({"error": "io", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["io"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
