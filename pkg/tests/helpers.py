"""Shared test utilities: finite-difference gradient probing.

Central differences need float64 throughout -- the network keeps float32
parameters (checkpoint precision), so probes run on upcast copies.  A probe
whose +h/-h passes disagree on any relu mask sits on a kink where the FD
quotient is meaningless; those probes are redrawn rather than counted.
"""

from __future__ import annotations

import numpy as np

from pvep.imgcore import SeededRng
from pvep.nnmodel import (
    PolicyArch,
    backward,
    forward,
    init_params,
    loss_ce,
    one_hot,
)

FD_H = 1e-4


def _as_float64(params: dict) -> dict:
    return {k: v.astype(np.float64) for k, v in params.items()}


def _relu_masks(cache: dict) -> tuple[np.ndarray, ...]:
    return (cache["z1"] > 0.0, cache["z2"] > 0.0, cache["z3"] > 0.0)


def _loss_and_masks(params, arch, images, onehots, labels):
    logits, cache = forward(params, arch, images, onehots, want_cache=True)
    loss, _ = loss_ce(logits, labels)
    return loss, _relu_masks(cache)


def fd_param_probes(
    arch: PolicyArch | None = None,
    n_probes: int = 50,
    seed: int = 11,
    batch: int = 4,
) -> tuple[float, int]:
    """Probe every parameter block with central differences.

    Returns (max relative error, probes counted).  Probes cycle through the
    parameter blocks so all layers are covered; kink-straddling probes are
    redrawn.
    """
    arch = arch or PolicyArch()
    rng = SeededRng(seed)
    params = _as_float64(init_params(arch, rng.derive("init")))
    images = rng.uniform(0.0, 1.0, size=(batch, arch.height, arch.width, 3))
    instrs = rng.integers(0, arch.num_instructions, size=batch)
    labels = np.asarray(rng.integers(0, arch.num_actions, size=batch))
    onehots = one_hot(instrs, arch.num_instructions)

    logits, cache = forward(params, arch, images, onehots, want_cache=True)
    _, dlogits = loss_ce(logits, labels)
    grads, _ = backward(params, arch, cache, dlogits)

    names = list(params)
    max_err = 0.0
    counted = 0
    draw = rng.derive("probes")
    while counted < n_probes:
        name = names[counted % len(names)]
        block = params[name]
        flat_idx = int(draw.integers(0, block.size))
        idx = np.unravel_index(flat_idx, block.shape)

        orig = block[idx]
        block[idx] = orig + FD_H
        lp, masks_p = _loss_and_masks(params, arch, images, onehots, labels)
        block[idx] = orig - FD_H
        lm, masks_m = _loss_and_masks(params, arch, images, onehots, labels)
        block[idx] = orig

        if any(not np.array_equal(a, b) for a, b in zip(masks_p, masks_m)):
            continue  # probe straddles a relu kink; gradient is fine, FD is not
        fd = (lp - lm) / (2.0 * FD_H)
        g = grads[name][idx]
        err = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
        max_err = max(max_err, err)
        counted += 1
    return max_err, counted


def fd_pixel_probes(n_probes: int = 10, seed: int = 12, batch: int = 2) -> float:
    """Central-difference check of the image gradient (the patch optimizer's
    descent direction); returns the max relative error over probes."""
    arch = PolicyArch()
    rng = SeededRng(seed)
    params = _as_float64(init_params(arch, rng.derive("init")))
    images = rng.uniform(0.05, 0.95, size=(batch, arch.height, arch.width, 3))
    instrs = rng.integers(0, arch.num_instructions, size=batch)
    targets = np.asarray(rng.integers(0, arch.num_actions, size=batch))
    onehots = one_hot(instrs, arch.num_instructions)

    logits, cache = forward(params, arch, images, onehots, want_cache=True)
    _, dlogits = loss_ce(logits, targets)
    _, dimages = backward(params, arch, cache, dlogits)

    max_err = 0.0
    counted = 0
    draw = rng.derive("pixels")
    while counted < n_probes:
        b = int(draw.integers(0, batch))
        r = int(draw.integers(0, arch.height))
        c = int(draw.integers(0, arch.width))
        ch = int(draw.integers(0, 3))
        orig = images[b, r, c, ch]
        images[b, r, c, ch] = orig + FD_H
        lp, masks_p = _loss_and_masks(params, arch, images, onehots, targets)
        images[b, r, c, ch] = orig - FD_H
        lm, masks_m = _loss_and_masks(params, arch, images, onehots, targets)
        images[b, r, c, ch] = orig
        if any(not np.array_equal(a, b2) for a, b2 in zip(masks_p, masks_m)):
            continue
        fd = (lp - lm) / (2.0 * FD_H)
        g = dimages[b, r, c, ch]
        err = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
        max_err = max(max_err, err)
        counted += 1
    return max_err
