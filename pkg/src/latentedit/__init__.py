"""Instance-aware latent-space attribute editing on synthetic worlds."""

from .directions import ControlFactors, SemanticDirection
from .dtmetric import DTCurve, auc, evaluate_dt, grid_search
from .editor import EditConfig, EditTrajectory, edit
from .errors import LatentEditError
from .synthworld import World, WorldConfig, build_world, default_biased_config

__all__ = [
    "ControlFactors",
    "DTCurve",
    "EditConfig",
    "EditTrajectory",
    "LatentEditError",
    "SemanticDirection",
    "World",
    "WorldConfig",
    "auc",
    "build_world",
    "default_biased_config",
    "edit",
    "evaluate_dt",
    "grid_search",
]
