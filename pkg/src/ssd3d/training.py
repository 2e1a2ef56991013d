"""Deterministic optimizer loop: align, augment, forward, loss, Adam step."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .core import Scene
from .data import AlignMode, AugmentSpec, align_scene, augment, build_mixup_pool
from .head import Assignment
from .loss import LossConfig
from .model import SSDNet


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam over a ParamStore with a single step-decay of the learning rate."""

    def __init__(self, params, lr: float = 0.002, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at(step: int, total: int, base: float, decay_at: float, factor: float) -> float:
    return base * factor if step >= int(math.floor(decay_at * total)) else base


def augment_spec(cfg) -> AugmentSpec:
    if not cfg.enabled:
        return AugmentSpec.identity()
    return AugmentSpec(
        tuple(cfg.box_rotation),
        tuple(tuple(r) for r in cfg.box_translation),
        cfg.flip_prob,
        tuple(cfg.global_rotation),
        tuple(cfg.global_scale),
        cfg.mixup,
    )


def loss_config(cfg: RunConfig) -> LossConfig:
    return LossConfig(cfg.loss.lambda1, cfg.loss.lambda2, cfg.loss.smooth_l1_beta)


@dataclass
class TrainResult:
    model: SSDNet
    records: List[Dict[str, object]] = field(default_factory=list)
    seconds: float = 0.0

    def log_text(self) -> str:
        return "".join(json.dumps(r, sort_keys=False) + "\n" for r in self.records)


def train(
    cfg: RunConfig,
    scenes: Sequence[Scene],
    seed: Optional[int] = None,
    steps: Optional[int] = None,
    assignment: Optional[str] = None,
    on_record: Optional[Callable[[Dict[str, object]], None]] = None,
) -> TrainResult:
    """Train a fresh model on ``scenes``.

    Every random choice (batch order, input alignment, augmentation) comes from
    one seed, so repeated runs give identical parameters and logs.
    """
    if not scenes:
        raise TrainingError("no training scenes")
    seed = cfg.seed if seed is None else seed
    steps = cfg.train.steps if steps is None else steps
    mode = Assignment(assignment or cfg.train.assignment)
    tc = cfg.train
    model = SSDNet(cfg.model, seed)
    opt = Adam(model.params, tc.lr)
    lcfg = loss_config(cfg)
    aspec = augment_spec(cfg.augment)
    pool = build_mixup_pool(scenes) if aspec.mixup > 0 else ()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    align_mode = AlignMode(cfg.data.align_mode)
    order: List[int] = []
    records: List[Dict[str, object]] = []
    t0 = time.perf_counter()
    for step in range(steps):
        lr = lr_at(step, steps, tc.lr, tc.decay_at, tc.decay_factor)
        model.params.zero_grad()
        batch_stats = []
        for _ in range(tc.batch_size):
            if not order:
                order = rng.permutation(len(scenes)).tolist()
            scene = scenes[order.pop()]
            sub_seed = int(rng.integers(2**63))
            scene = align_scene(scene, cfg.data.budget, align_mode, np.random.default_rng(sub_seed), cfg.data.voxel_size)
            scene = augment(scene, aspec, sub_seed + 1, pool)
            try:
                br, _ = model.loss(scene, lcfg, mode)
            except ValueError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            loss = br.total * (1.0 / tc.batch_size)
            ad.backward(loss)
            batch_stats.append(br.record())
        rec: Dict[str, object] = {"step": step, "lr": lr}
        for key in batch_stats[0]:
            vals = [b[key] for b in batch_stats]
            rec[key] = float(np.mean(vals)) if isinstance(vals[0], float) else int(sum(vals))
        if not all(math.isfinite(v) for v in rec.values() if isinstance(v, float)):
            raise TrainingError(f"non-finite loss at step {step}")
        for p in model.params.values():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient at step {step}")
        opt.step(lr)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    return TrainResult(model, records, time.perf_counter() - t0)
