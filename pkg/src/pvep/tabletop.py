"""Desk-scale tabletop manipulation environment.

A 4x4 grid of cells, each holding at most one colored block.  The agent
sees a 32x32 RGB render plus an instruction index and emits one of 32
discrete actions: 0-15 pick up the block at that cell, 16-31 put the held
block down at cell (action - 16).  Illegal actions are no-ops that still
consume a timestep.  Episodes are capped at MAX_STEPS actions; a failed
episode reports steps_used == MAX_STEPS, which is also how the timestep
metric counts it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .imgcore import SeededRng, new_image, write_text_atomic

GRID = 4
NUM_CELLS = GRID * GRID
NUM_ACTIONS = 2 * NUM_CELLS
MAX_STEPS = 8
CELL_PX = 8

COLOR_NAMES = ("red", "green", "blue", "yellow")
COLOR_RGB = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 0.0),
)


@dataclass(frozen=True)
class Task:
    """One instruction the policy can be asked to follow.

    kind "pick": succeed by holding a block of colors[0].
    kind "move_near": succeed when some colors[0] block sits 4-adjacent to
    some colors[1] block on the table.
    """

    task_id: int
    kind: str
    colors: tuple[int, ...]
    text: str

    @property
    def instruction_idx(self) -> int:
        return self.task_id


TASKS = (
    Task(0, "pick", (0,), "pick up the red block"),
    Task(1, "pick", (1,), "pick up the green block"),
    Task(2, "pick", (2,), "pick up the blue block"),
    Task(3, "pick", (3,), "pick up the yellow block"),
    Task(4, "move_near", (0, 2), "move the red block near the blue block"),
    Task(5, "move_near", (1, 3), "move the green block near the yellow block"),
)


@dataclass
class TabletopState:
    """blocks maps cell -> color id (one block per cell by construction);
    a held block lives outside the map, with held_origin remembering the
    cell it was lifted from so the render can mark it."""

    blocks: dict[int, int]
    held: int | None = None
    held_origin: int | None = None


def cells_of(state: TabletopState, color: int) -> list[int]:
    return sorted(c for c, col in state.blocks.items() if col == color)


def neighbors4(cell: int) -> list[int]:
    r, c = divmod(cell, GRID)
    out = []
    if r > 0:
        out.append(cell - GRID)
    if r < GRID - 1:
        out.append(cell + GRID)
    if c > 0:
        out.append(cell - 1)
    if c < GRID - 1:
        out.append(cell + 1)
    return out


def adjacent4(a: int, b: int) -> bool:
    ra, ca = divmod(a, GRID)
    rb, cb = divmod(b, GRID)
    return abs(ra - rb) + abs(ca - cb) == 1


def task_success(task: Task, state: TabletopState) -> bool:
    if task.kind == "pick":
        return state.held == task.colors[0]
    c1, c2 = task.colors
    return any(
        adjacent4(a, b) for a in cells_of(state, c1) for b in cells_of(state, c2)
    )


def step(state: TabletopState, action: int) -> TabletopState:
    """Apply one action.  Pick needs an empty hand and an occupied cell;
    place needs a held block and an empty cell; anything else leaves the
    board unchanged (the timestep is still spent by the caller)."""
    if not 0 <= action < NUM_ACTIONS:
        raise ValueError(f"action must be in [0, {NUM_ACTIONS}), got {action}")
    blocks = dict(state.blocks)
    if action < NUM_CELLS:
        if state.held is None and action in blocks:
            color = blocks.pop(action)
            return TabletopState(blocks, held=color, held_origin=action)
        return TabletopState(blocks, state.held, state.held_origin)
    cell = action - NUM_CELLS
    if state.held is not None and cell not in blocks:
        blocks[cell] = state.held
        return TabletopState(blocks)
    return TabletopState(blocks, state.held, state.held_origin)


def _movenear_solvable(task: Task, state: TabletopState) -> bool:
    # the scripted solution lifts a colors[0] block and parks it beside a
    # colors[1] block, so some 4-neighbor of some colors[1] cell must be free
    return any(
        n not in state.blocks
        for target in cells_of(state, task.colors[1])
        for n in neighbors4(target)
    )


def gen_scene(task: Task, rng: SeededRng) -> TabletopState:
    """Random initial board for the task: 3-5 blocks on distinct cells,
    always including the task's referenced colors exactly once each
    (distractors are drawn from the other colors, so the instruction
    always refers to a unique block).

    move_near boards are rejection-sampled until the goal starts
    unsatisfied and a free cell exists beside the target block, so every
    generated episode is winnable and never trivially over at reset.
    """
    required = list(task.colors)
    others = [c for c in range(len(COLOR_RGB)) if c not in required]
    while True:
        n_blocks = int(rng.integers(3, 6))
        colors = required + [
            others[int(rng.integers(0, len(others)))] for _ in range(n_blocks - len(required))
        ]
        cells = rng.permutation(NUM_CELLS)[:n_blocks]
        state = TabletopState({int(cell): col for cell, col in zip(cells, colors)})
        if task.kind == "pick":
            return state
        if not task_success(task, state) and _movenear_solvable(task, state):
            return state


def render(state: TabletopState) -> np.ndarray:
    """32x32 RGB view: mid-gray table, 6x6 block per occupied cell (inset
    one pixel), and the held block drawn back at its origin cell with a
    one-pixel white ring so 'grasped' is visually distinct."""
    img = new_image(GRID * CELL_PX, GRID * CELL_PX, 0.5)
    for cell, color in state.blocks.items():
        r, c = divmod(cell, GRID)
        img[r * CELL_PX + 1 : r * CELL_PX + 7, c * CELL_PX + 1 : c * CELL_PX + 7] = COLOR_RGB[
            color
        ]
    if state.held is not None:
        r, c = divmod(state.held_origin, GRID)
        img[r * CELL_PX + 1 : r * CELL_PX + 7, c * CELL_PX + 1 : c * CELL_PX + 7] = 1.0
        img[r * CELL_PX + 2 : r * CELL_PX + 6, c * CELL_PX + 2 : c * CELL_PX + 6] = COLOR_RGB[
            state.held
        ]
    return img


# ---------------------------------------------------------------------------
# Episodes and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRecord:
    task_id: int
    attack_id: str
    seed: int
    success: bool
    steps_used: int


def run_episode(
    net,
    task: Task,
    rng: SeededRng,
    *,
    transform=None,
    attack_id: str = "clean",
    max_steps: int = MAX_STEPS,
) -> EpisodeRecord:
    """Generate a scene from rng and roll the policy until the task
    succeeds or the step cap is hit.

    transform, when given, perturbs each rendered observation (drawing any
    randomness it needs from the same rng) before the policy sees it --
    the seam every attack in this package goes through.  The underlying
    board always advances by the action actually chosen, so a fooled
    policy wastes real timesteps.  Success is checked after each action;
    steps_used is therefore in [1, max_steps], with failures pinned at
    max_steps.
    """
    state = gen_scene(task, rng)
    for t in range(1, max_steps + 1):
        obs = render(state)
        if transform is not None:
            obs = transform(obs, rng)
        act = net.action(obs, task.instruction_idx)
        state = step(state, act)
        if task_success(task, state):
            return EpisodeRecord(task.task_id, attack_id, rng.seed, True, t)
    return EpisodeRecord(task.task_id, attack_id, rng.seed, False, max_steps)


def failure_rate(records) -> float:
    """Percentage of episodes that did not succeed."""
    records = list(records)
    if not records:
        raise ValueError("no episodes")
    return 100.0 * sum(not r.success for r in records) / len(records)


def mean_timesteps(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("no episodes")
    return sum(r.steps_used for r in records) / len(records)


def write_episodes_csv(records, path) -> None:
    lines = ["task_id,attack_id,seed,success,steps_used"]
    for r in records:
        lines.append(f"{r.task_id},{r.attack_id},{r.seed},{int(r.success)},{r.steps_used}")
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_episodes_csv(path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpisodeRecord(
            int(r["task_id"]),
            r["attack_id"],
            int(r["seed"]),
            bool(int(r["success"])),
            int(r["steps_used"]),
        )
        for r in rows
    ]
