"""Graph-level semantic OOD detection under covariate shift.

Thin dict-based wrappers over the C++ core: a two-phase pipeline that
disentangles GNN graph representations into semantic and style factors,
synthesizes pseudo-InD/pseudo-OOD representations with a shift-controlled
diffusion sampler, and trains an energy-margin detector on top.
"""

from __future__ import annotations

import json as _json
from typing import Any

from gdda._core import (  # noqa: F401  (re-exported as-is)
    alpha_sigma,
    aupr,
    auroc,
    energy,
    fpr_at_95tpr,
    ind_accuracy,
)
from gdda import _core

__all__ = [
    "alpha_sigma",
    "aupr",
    "auroc",
    "config_hash",
    "energy",
    "fpr_at_95tpr",
    "generate_dataset",
    "ind_accuracy",
    "lambda_sweep",
    "run_pipeline",
    "run_seeds",
]


def _dump(config: dict[str, Any] | None) -> str:
    return _json.dumps(config or {})


def config_hash(config: dict[str, Any] | None = None) -> str:
    """Content hash of the resolved configuration (seed-independent)."""
    return _core.config_hash(_dump(config))


def generate_dataset(config: dict[str, Any] | None, path: str) -> dict[str, int]:
    """Generate the synthetic motif benchmark to a JSONL file."""
    return _json.loads(_core.generate_dataset_json(_dump(config), str(path)))


def run_pipeline(
    config: dict[str, Any] | None = None,
    stage_cache: str = "",
    baseline: bool = False,
) -> dict[str, Any]:
    """Run the full pipeline for one seed and return the metrics report."""
    return _json.loads(
        _core.run_pipeline_json(_dump(config), str(stage_cache), baseline)
    )


def run_seeds(
    config: dict[str, Any] | None = None,
    stage_cache: str = "",
    baseline: bool = False,
) -> dict[str, Any]:
    """Run every configured seed; returns the aggregate report (or the
    single-seed metrics when only one seed is configured)."""
    return _json.loads(
        _core.run_seeds_json(_dump(config), str(stage_cache), baseline)
    )


def lambda_sweep(
    config: dict[str, Any] | None,
    lambdas: list[float],
    stage_cache: str = "",
) -> list[dict[str, float]]:
    """Sample factors at each lambda; returns centroid-distance rows."""
    return _json.loads(
        _core.lambda_sweep_json(_dump(config), list(lambdas), str(stage_cache))
    )
