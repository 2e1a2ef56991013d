"""Central finite-difference check of analytic gradients on a miniature detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .config import ModelConfig, SaLayerConfig
from .data import SceneGenSpec, generate_scene
from .head import Assignment
from .loss import LossConfig
from .model import SSDNet
from .nn import ParamStore, SelectionCache

STEP = 1e-4
TOLERANCE = 1e-4

Corruptor = Callable[[str, np.ndarray], np.ndarray]


@dataclass
class BlockResult:
    name: str
    checked: int
    max_rel_error: float


@dataclass
class GradcheckReport:
    blocks: List[BlockResult] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.blocks) and self.max_rel_error < self.tolerance

    def to_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "blocks": [{"name": b.name, "checked": b.checked, "max_rel_error": b.max_rel_error} for b in self.blocks],
        }


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def check_params(
    params: ParamStore,
    loss_fn: Callable[[], ad.Value],
    h: float = STEP,
    max_entries: Optional[int] = None,
    seed: int = 0,
    corrupt: Optional[Corruptor] = None,
    tolerance: float = TOLERANCE,
) -> GradcheckReport:
    """Compare backprop against central differences for every parameter block.

    ``loss_fn`` must rebuild the graph from the current parameter values and be a
    smooth function of them (discrete choices frozen). Blocks larger than
    ``max_entries`` are checked on a seeded random subset of entries.
    ``corrupt`` lets tests tamper with analytic gradients (negative control).
    """
    params.zero_grad()
    ad.backward(loss_fn())
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if corrupt is not None:
            g = corrupt(name, g)
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_entries is None or n <= max_entries else np.sort(rng.choice(n, max_entries, replace=False))
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = float(loss_fn().data)
            flat[i] = old - h
            down = float(loss_fn().data)
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, float(rel_error(g.reshape(-1)[i], num)))
        report.blocks.append(BlockResult(name, int(len(idx)), worst))
    return report


def linear_check(seed: int = 0, corrupt: Optional[Corruptor] = None) -> GradcheckReport:
    """Loss linear in its parameters, where central differences are exact up to rounding."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    w = store.register("linear.weight", rng.normal(size=(4, 3)))
    b = store.register("linear.bias", rng.normal(size=(3,)))
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=(5, 3))

    def loss():
        return ad.vsum((ad.matmul(x, w) + b) * c)

    return check_params(store, loss, corrupt=corrupt, tolerance=1e-8)


def mini_model_config() -> ModelConfig:
    return ModelConfig(
        layers=[
            SaLayerConfig(n_out=32, strategy="DFPS", radius=1.5, max_neighbors=8, mlp=[6, 8]),
            SaLayerConfig(n_out=16, strategy="FUSION", lam=0.5, radius=2.5, max_neighbors=8, mlp=[8, 8]),
        ],
        cg_radius=2.5,
        cg_max_neighbors=8,
        shift_mlp=[6],
        group_mlp=[8, 8],
        head_mlp=[8],
        n_bins=4,
    )


def mini_scene(seed: int = 0):
    """Small scene dense enough that candidates and shift origins include positives."""
    spec = SceneGenSpec(
        seed=seed,
        instances=(2, 2),
        points_per_instance=(50, 50),
        background_points=30,
        extent=(12.0, 12.0),
    )
    return generate_scene(spec, np.random.default_rng(seed), "gradcheck")


def pipeline_check(
    seed: int = 0,
    max_entries: Optional[int] = 24,
    corrupt: Optional[Corruptor] = None,
    assignment: Assignment = Assignment.CENTERNESS,
) -> GradcheckReport:
    """Two SA layers, candidate generation, head and the full weighted loss."""
    model = SSDNet(mini_model_config(), seed)
    lcfg = LossConfig()
    for attempt in range(50):
        scene = mini_scene(seed + attempt)
        cache = SelectionCache()
        br, _ = model.loss(scene, lcfg, assignment, cache)
        if br.n_p > 0 and br.n_p_star > 0:
            break
    else:
        raise RuntimeError("could not build a gradcheck scene with positive candidates")
    cache.replay = True

    def loss():
        return model.loss(scene, lcfg, assignment, cache)[0].total

    return check_params(model.params, loss, max_entries=max_entries, seed=seed, corrupt=corrupt)
