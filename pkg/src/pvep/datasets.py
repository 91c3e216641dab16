"""Synthetic training/attack data for the policy.

Two domains, mirroring a generic-pretraining vs robot-finetuning split:

* general -- single-block scenes with color-classification labels and a
  random (uninformative) instruction.  Trains the base model and feeds
  the lower-knowledge patch attacks.
* robotic -- (render, instruction, expert action) pairs collected by
  rolling a scripted solver over real tasks.  Fine-tunes the victim and
  feeds the higher-knowledge attacks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .imgcore import SeededRng, write_bytes_atomic
from .tabletop import (
    COLOR_RGB,
    MAX_STEPS,
    NUM_CELLS,
    TASKS,
    TabletopState,
    Task,
    cells_of,
    gen_scene,
    neighbors4,
    render,
    step,
    task_success,
)

BUNDLE_MAGIC = b"PVEPBUN1"
DOMAINS = ("general", "robotic")


@dataclass
class DataBundle:
    """A training/attack dataset: images (N, 32, 32, 3), instruction
    indices (N,), and action labels (N,).  domain is 'general' or
    'robotic' (or 'general+robotic' after merging)."""

    domain: str
    images: np.ndarray
    instrs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.instrs) or len(self.images) != len(self.labels):
            raise ValueError("images, instrs, labels must have equal length")

    def __len__(self) -> int:
        return len(self.labels)


def expert_action(task: Task, state: TabletopState) -> int:
    """Scripted solver: one step toward the goal, deterministic (always
    the lowest-index legal choice).

    pick tasks grab the first block of the target color.  move_near lifts
    the first colors[0] block, then parks it at the first free cell
    4-adjacent to a colors[1] block.
    """
    if task.kind == "pick":
        cells = cells_of(state, task.colors[0])
        if not cells:
            raise ValueError(f"no {task.colors[0]} block to pick")
        return cells[0]
    c1, c2 = task.colors
    if state.held is None:
        cells = cells_of(state, c1)
        if not cells:
            raise ValueError(f"no {c1} block to move")
        return cells[0]
    if state.held != c1:
        raise ValueError(f"holding color {state.held}, expected {c1}")
    for target in cells_of(state, c2):
        for n in sorted(neighbors4(target)):
            if n not in state.blocks:
                return NUM_CELLS + n
    raise ValueError("no free cell adjacent to the target block")


def gen_general(count: int, rng: SeededRng) -> DataBundle:
    """count single-block scenes; the label is the block's color id and
    the instruction index is drawn independently of it."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    images = np.empty((count, 32, 32, 3))
    instrs = np.empty(count, dtype=np.int64)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        color = int(rng.integers(0, len(COLOR_RGB)))
        cell = int(rng.integers(0, NUM_CELLS))
        instrs[i] = int(rng.integers(0, len(TASKS)))
        labels[i] = color
        images[i] = render(TabletopState({cell: color}))
    return DataBundle("general", images, instrs, labels)


def gen_robotic(count: int, rng: SeededRng) -> DataBundle:
    """count (render, instruction, expert action) pairs from scripted
    rollouts, task drawn uniformly per episode."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    images, instrs, labels = [], [], []
    while len(labels) < count:
        task = TASKS[int(rng.integers(0, len(TASKS)))]
        state = gen_scene(task, rng)
        for _ in range(MAX_STEPS):
            if task_success(task, state):
                break
            act = expert_action(task, state)
            images.append(render(state))
            instrs.append(task.instruction_idx)
            labels.append(act)
            state = step(state, act)
    images = np.stack(images[:count])
    return DataBundle(
        "robotic",
        images,
        np.asarray(instrs[:count], dtype=np.int64),
        np.asarray(labels[:count], dtype=np.int64),
    )


def merge_bundles(a: DataBundle, b: DataBundle) -> DataBundle:
    """Concatenate two bundles (used for the general+robotic threat data)."""
    domain = a.domain if a.domain == b.domain else f"{a.domain}+{b.domain}"
    return DataBundle(
        domain,
        np.concatenate([a.images, b.images]),
        np.concatenate([a.instrs, b.instrs]),
        np.concatenate([a.labels, b.labels]),
    )


# ---------------------------------------------------------------------------
# Bundle files: magic, u8 domain, u32 count/H/W/C, f32 images, u32 labels
# ---------------------------------------------------------------------------


def write_bundle(bundle: DataBundle, path) -> None:
    if bundle.domain not in DOMAINS:
        raise ValueError(f"only {DOMAINS} bundles serialize, got {bundle.domain!r}")
    n, h, w, c = bundle.images.shape
    header = BUNDLE_MAGIC + struct.pack(
        "<BIIII", DOMAINS.index(bundle.domain), n, h, w, c
    )
    body = (
        bundle.images.astype("<f4").tobytes()
        + bundle.instrs.astype("<u4").tobytes()
        + bundle.labels.astype("<u4").tobytes()
    )
    write_bytes_atomic(path, header + body)


def read_bundle(path) -> DataBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 25 or data[:8] != BUNDLE_MAGIC:
        raise ValueError(f"not a data bundle (expected magic {BUNDLE_MAGIC.decode()}): {path}")
    dom, n, h, w, c = struct.unpack("<BIIII", data[8:25])
    if dom >= len(DOMAINS):
        raise ValueError(f"unknown bundle domain code {dom}: {path}")
    img_bytes = n * h * w * c * 4
    expected = img_bytes + n * 4 + n * 4
    body = data[25:]
    if len(body) != expected:
        raise ValueError(f"bundle payload length {len(body)} != expected {expected}: {path}")
    images = (
        np.frombuffer(body[:img_bytes], dtype="<f4").astype(np.float64).reshape(n, h, w, c)
    )
    instrs = np.frombuffer(body[img_bytes : img_bytes + n * 4], dtype="<u4").astype(np.int64)
    labels = np.frombuffer(body[img_bytes + n * 4 :], dtype="<u4").astype(np.int64)
    return DataBundle(DOMAINS[dom], images, instrs, labels)
