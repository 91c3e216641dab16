"""Adversarial patch optimization and the surrogate-to-victim transfer attack.

The optimizer solves a targeted objective: find a square patch delta (all
values boxed to [0, 1]) that, composited onto data images at random
locations, drives the model's argmax toward one chosen target action.
Four attacker knowledge levels select which model the gradients come from
and which data domain feeds the batches:

    bb   surrogate (base) model, general data only
    rbb  surrogate (base) model, general + robotic data
    gb   victim model, general data only
    wb   victim model, general + robotic data
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import DataBundle, gen_robotic, merge_bundles
from .imgcore import SeededRng
from .nnmodel import PolicyNet, forward, input_gradient, one_hot
from .perturb import PatchSpec, apply_patch

THREAT_LEVELS = ("bb", "rbb", "gb", "wb")


@dataclass(frozen=True)
class PatchOptConfig:
    target_action: int
    iterations: int = 2000
    step_size: float = 0.01
    batch: int = 32
    placement: tuple[int, int] | None = None  # None = randomized per sample
    side_px: int = 6

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.step_size < 0:
            raise ValueError(f"step_size must be >= 0, got {self.step_size}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.side_px < 1:
            raise ValueError(f"side_px must be >= 1, got {self.side_px}")


def optimize_patch(
    model: PolicyNet, data: DataBundle, cfg: PatchOptConfig, rng: SeededRng
) -> PatchSpec:
    """Projected signed-gradient descent on the targeted cross-entropy.

    Each iteration samples a data batch and a placement per sample,
    composites the current patch, backprops the targeted loss to the
    pixels, and accumulates the gradient over each sample's patch
    footprint (sequential sum, so the result is reduction-order
    deterministic).  The update is step_size * sign(grad), projected back
    into [0, 1] per pixel.  Everything is a function of (model, data, cfg,
    seed).
    """
    if len(data) == 0:
        raise ValueError("empty data bundle")
    arch = model.arch
    if not 0 <= cfg.target_action < arch.num_actions:
        raise ValueError(
            f"target action {cfg.target_action} outside [0, {arch.num_actions})"
        )
    p = cfg.side_px
    h, w = arch.height, arch.width
    if p > h or p > w:
        raise ValueError(f"patch side {p} exceeds image {h}x{w}")
    if cfg.placement is not None:
        r0, c0 = cfg.placement
        if r0 < 0 or c0 < 0 or r0 + p > h or c0 + p > w:
            raise ValueError(f"placement {cfg.placement} puts a {p}px patch outside {h}x{w}")

    delta = rng.uniform(0.0, 1.0, size=(p, p, 3))
    dtype = model.params["conv1_w"].dtype
    images = np.ascontiguousarray(data.images, dtype=dtype)
    onehots = one_hot(data.instrs, arch.num_instructions, dtype=dtype)
    targets = np.full(cfg.batch, cfg.target_action, dtype=np.int64)

    for _ in range(cfg.iterations):
        idx = rng.integers(0, len(data), size=cfg.batch)
        if cfg.placement is None:
            rows = rng.integers(0, h - p + 1, size=cfg.batch)
            cols = rng.integers(0, w - p + 1, size=cfg.batch)
        else:
            rows = np.full(cfg.batch, cfg.placement[0])
            cols = np.full(cfg.batch, cfg.placement[1])
        batch = images[idx]
        for b in range(cfg.batch):
            batch[b, rows[b] : rows[b] + p, cols[b] : cols[b] + p] = delta
        _, dimages = input_gradient(model.params, arch, batch, onehots[idx], targets)
        grad = np.zeros_like(delta)
        for b in range(cfg.batch):
            grad += dimages[b, rows[b] : rows[b] + p, cols[b] : cols[b] + p]
        delta = np.clip(delta - cfg.step_size * np.sign(grad), 0.0, 1.0)

    return PatchSpec(delta=delta, placement=cfg.placement)


def targeted_success(
    model: PolicyNet,
    data: DataBundle,
    patch: PatchSpec,
    target_action: int,
    rng: SeededRng,
    chunk: int = 256,
) -> float:
    """Fraction of data images whose argmax lands on target_action after
    the patch is composited (fresh placement per image when randomized)."""
    if len(data) == 0:
        raise ValueError("empty data bundle")
    hits = 0
    onehots = one_hot(data.instrs, model.arch.num_instructions)
    for start in range(0, len(data), chunk):
        stop = min(start + chunk, len(data))
        batch = np.empty_like(data.images[start:stop])
        for i in range(stop - start):
            batch[i], _ = apply_patch(data.images[start + i], patch, rng)
        logits = forward(model.params, model.arch, batch, onehots[start:stop])
        hits += int(np.sum(np.argmax(logits, axis=1) == target_action))
    return hits / len(data)


def resolve_threat(
    level: str,
    base: PolicyNet | None,
    victim: PolicyNet | None,
    general: DataBundle | None,
    robotic: DataBundle | None,
) -> tuple[PolicyNet, DataBundle]:
    """Map an attacker knowledge level to (model to differentiate, data to
    composite over)."""
    if level not in THREAT_LEVELS:
        raise ValueError(f"unknown threat level {level!r}, expected one of {THREAT_LEVELS}")
    model = base if level in ("bb", "rbb") else victim
    if model is None:
        raise ValueError(f"threat level {level} needs the {'base' if level in ('bb', 'rbb') else 'victim'} model")
    if general is None or len(general) == 0:
        raise ValueError("general bundle is required and must be non-empty")
    if level in ("bb", "gb"):
        return model, general
    if robotic is None or len(robotic) == 0:
        raise ValueError(f"threat level {level} needs a non-empty robotic bundle")
    return model, merge_bundles(general, robotic)


def transfer_attack(
    surrogate: PolicyNet,
    victim: PolicyNet,
    data: DataBundle,
    cfg: PatchOptConfig,
    rng: SeededRng,
    eval_data: DataBundle | None = None,
) -> tuple[PatchSpec, float]:
    """Optimize the patch against the surrogate, then measure how often it
    forces the victim's argmax to the target on fresh robotic pairs.

    rng feeds the optimizer first and the evaluation after, so with
    surrogate == victim the returned patch is identical to attacking the
    victim directly with the same seed.
    """
    patch = optimize_patch(surrogate, data, cfg, rng)
    if eval_data is None:
        eval_data = gen_robotic(200, rng)
    rate = targeted_success(victim, eval_data, patch, cfg.target_action, rng)
    return patch, rate
