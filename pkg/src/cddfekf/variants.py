"""Registry of the fourteen benchmarked filters and a uniform run entry point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import run_baseline
from .core import RunResult
from .dfekf import DfekfConfig, run_conventional
from .model import ModelSpec
from .sqrt_filters import run_squareroot


@dataclass(frozen=True)
class FilterVariant:
    id: str
    scheme: str
    family: str  # "ekf", "ckf", "conv" or "sqrt"
    detail: str = ""  # sample square root for "conv", algorithm label for "sqrt"

    @property
    def is_derivative_free(self) -> bool:
        return self.family in ("conv", "sqrt")

    @property
    def uses_svd(self) -> bool:
        return self.detail in ("svd", "1c", "2c")


def _build_registry() -> dict[str, FilterVariant]:
    out = {}
    for scheme, digit in (("em", "1"), ("it", "2")):
        out[f"{scheme}-ekf"] = FilterVariant(f"{scheme}-ekf", scheme, "ekf")
        out[f"{scheme}-ckf"] = FilterVariant(f"{scheme}-ckf", scheme, "ckf")
        for short, sqrt in (("chol", "cholesky"), ("svd", "svd")):
            vid = f"{scheme}-dfekf-conv-{short}"
            out[vid] = FilterVariant(vid, scheme, "conv", sqrt)
        for letter in "abc":
            vid = f"{scheme}-dfekf-{digit}{letter}"
            out[vid] = FilterVariant(vid, scheme, "sqrt", digit + letter)
    return out


REGISTRY = _build_registry()
FILTER_IDS = tuple(
    f"{s}-{rest}"
    for s, d in (("em", "1"), ("it", "2"))
    for rest in ("ekf", "ckf", "dfekf-conv-chol", "dfekf-conv-svd", f"dfekf-{d}a", f"dfekf-{d}b", f"dfekf-{d}c")
)


def get_variant(filter_id: str) -> FilterVariant:
    try:
        return REGISTRY[filter_id]
    except KeyError:
        raise ValueError(f"unknown filter {filter_id!r}; known: {', '.join(FILTER_IDS)}") from None


def run_filter(
    filter_id: str,
    model: ModelSpec,
    times: np.ndarray,
    z: np.ndarray,
    l_subdivisions: int,
    alpha: float = 1000.0,
    store_covariance: bool = False,
) -> RunResult:
    """Run filter ``filter_id`` on measurements ``z`` (leading axes are runs)."""
    v = get_variant(filter_id)
    if v.family in ("ekf", "ckf"):
        return run_baseline(model, v.family, v.scheme, l_subdivisions, times, z, store_covariance)
    if v.family == "conv":
        cfg = DfekfConfig(alpha, l_subdivisions, v.scheme, v.detail)
        return run_conventional(model, cfg, times, z, store_covariance)
    cfg = DfekfConfig(alpha, l_subdivisions, v.scheme)
    return run_squareroot(model, cfg, v.detail, times, z, store_covariance)
