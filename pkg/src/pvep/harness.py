"""Attack-grid evaluation: sweep (task x attack) cells and tabulate
failure rates with deltas against clean performance.

The grid is declared in a small line-oriented `key = value` config (see
DEFAULT_CONFIG).  Attack levels carry the standard sweep values: blur
radii (2, 4, 6), noise variances (0.01, 0.05, 0.1), brightness factors
up (1.2, 1.4, 1.6) and down (0.8, 0.4, 0.2), four distractor phrases,
three action-numeral strings, and one patch column per attacker
knowledge level with a trained patch file available.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .imgcore import SeededRng, derive_seed, write_text_atomic
from .perturb import (
    BlurParams,
    BrightnessParams,
    NoiseParams,
    TypoSpec,
    apply_patch,
    add_gaussian_noise,
    adjust_brightness,
    blur,
    read_patch,
    render_typography,
)
from .tabletop import (
    MAX_STEPS,
    EpisodeRecord,
    failure_rate,
    gen_scene,
    mean_timesteps,
    render,
    step,
    task_success,
)

CATEGORIES = ("clean", "blur", "gn", "bcb", "bcd", "tw", "tn", "patch")

OOD_LEVELS = {
    "blur": (2, 4, 6),
    "gn": (0.01, 0.05, 0.1),
    "bcb": (1.2, 1.4, 1.6),
    "bcd": (0.8, 0.4, 0.2),
}
TW_TEXTS = ("move bottom", "move top", "move slowly", "stop moving")
TN_TEXTS = ("3", "17", "28")
TYPO_SLOTS = {"tw": TW_TEXTS, "tn": TN_TEXTS}
THREAT_ORDER = ("bb", "rbb", "gb", "wb")

# Typography rendering for the grid: top-left anchor, unit scale, and
# dark-gray ink.  On a 32px frame a five-glyph word already covers a fifth
# of the pixels -- orders of magnitude more than printed text in a real
# camera view -- so full-contrast ink would act as an occlusion attack
# rather than a distractor; the reduced contrast restores a footprint
# whose effect is mild next to optimized patches.
TYPO_ANCHOR = (1, 1)
TYPO_COLOR = (0.3, 0.3, 0.3)

DEFAULT_CONFIG = """\
# full evaluation grid
attacks = clean, blur, gn, bcb, bcd, tw, tn, patch
blur.levels = 1, 2, 3
gn.levels = 1, 2, 3
bcb.levels = 1, 2, 3
bcd.levels = 1, 2, 3
tw.slots = 1, 2, 3, 4
tn.slots = 1, 2, 3
patch.bb = bb.ppat
patch.rbb = rbb.ppat
patch.gb = gb.ppat
patch.wb = wb.ppat
episodes = 200
seed = 0
"""


@dataclass(frozen=True)
class AttackConfig:
    """One column of the evaluation grid.

    level is the 0-based index into the category's value tuple (so blur
    level 2 carries radius 6); clean sits outside the level scale as the
    unperturbed baseline.
    """

    attack_id: str
    category: str
    level: int = 0
    threat: str = ""
    patch_path: str = ""


@dataclass(frozen=True)
class Cell:
    failure_rate: float
    delta: float
    mean_timesteps: float


@dataclass
class EvalReport:
    attack_ids: tuple[str, ...]
    task_labels: tuple[str, ...]
    rows: dict[str, dict[str, Cell]] = field(default_factory=dict)  # includes "avg"
    episodes_per_cell: int = 0
    seed: int = 0


# ---------------------------------------------------------------------------
# Config parsing and grid construction
# ---------------------------------------------------------------------------


@dataclass
class GridConfig:
    attacks: tuple[str, ...]
    levels: dict[str, tuple[int, ...]]
    slots: dict[str, tuple[int, ...]]
    patch_paths: dict[str, str]
    episodes: int | None = None
    seed: int | None = None


def _parse_int_list(value: str, key: str, upper: int) -> tuple[int, ...]:
    out = []
    for tok in value.split(","):
        tok = tok.strip()
        if not tok.lstrip("-").isdigit():
            raise ValueError(f"{key}: expected integers, got {tok!r}")
        n = int(tok)
        if not 1 <= n <= upper:
            raise ValueError(f"{key}: level {n} out of range [1, {upper}]")
        if n in out:
            raise ValueError(f"{key}: duplicate level {n}")
        out.append(n)
    return tuple(out)


def parse_config(text: str) -> GridConfig:
    """Parse the line-oriented grid config; unknown keys, unknown attack
    names, and out-of-range levels are all errors."""
    attacks = None
    levels = {k: (1, 2, 3) for k in OOD_LEVELS}
    slots = {"tw": (1, 2, 3, 4), "tn": (1, 2, 3)}
    patch_paths: dict[str, str] = {}
    episodes = None
    seed = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "attacks":
            names = tuple(tok.strip() for tok in value.split(","))
            for name in names:
                if name not in CATEGORIES:
                    raise ValueError(f"unknown attack name {name!r} (line {lineno})")
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate attack name in {names} (line {lineno})")
            attacks = names
        elif key in ("blur.levels", "gn.levels", "bcb.levels", "bcd.levels"):
            cat = key.split(".")[0]
            levels[cat] = _parse_int_list(value, key, len(OOD_LEVELS[cat]))
        elif key in ("tw.slots", "tn.slots"):
            cat = key.split(".")[0]
            slots[cat] = _parse_int_list(value, key, len(TYPO_SLOTS[cat]))
        elif key in ("patch.bb", "patch.rbb", "patch.gb", "patch.wb"):
            patch_paths[key.split(".")[1]] = value
        elif key == "episodes":
            episodes = int(value)
        elif key == "seed":
            seed = int(value)
        else:
            raise ValueError(f"unknown config key {key!r} (line {lineno})")
    if attacks is None:
        attacks = ("clean",)
    return GridConfig(attacks, levels, slots, patch_paths, episodes, seed)


def _ood_id(cat: str, level: int) -> str:
    value = OOD_LEVELS[cat][level]
    return f"blur_r{value}" if cat == "blur" else f"{cat}_{value}"


def build_attack_grid(config_text: str) -> list[AttackConfig]:
    """Expand a config into the ordered grid: clean, blur, gn, bcb, bcd,
    tw, tn, then one patch column per configured patch file."""
    cfg = parse_config(config_text)
    grid = []
    if "clean" in cfg.attacks:
        grid.append(AttackConfig("clean", "clean"))
    for cat in ("blur", "gn", "bcb", "bcd"):
        if cat in cfg.attacks:
            for lv in cfg.levels[cat]:
                grid.append(AttackConfig(_ood_id(cat, lv - 1), cat, level=lv - 1))
    for cat in ("tw", "tn"):
        if cat in cfg.attacks:
            for slot in cfg.slots[cat]:
                grid.append(AttackConfig(f"{cat}{slot}", cat, level=slot - 1))
    if "patch" in cfg.attacks:
        for threat in THREAT_ORDER:
            if threat in cfg.patch_paths:
                grid.append(
                    AttackConfig(
                        f"patch_{threat}",
                        "patch",
                        threat=threat,
                        patch_path=cfg.patch_paths[threat],
                    )
                )
    return grid


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def make_transform(cfg: AttackConfig, patches: dict[str, object] | None = None):
    """Turn an AttackConfig into an observation transform (img, rng) ->
    img, or None for clean.  Patch configs need their PatchSpec supplied
    via patches[attack_id]."""
    if cfg.category == "clean":
        return None
    if cfg.category == "blur":
        params = BlurParams(OOD_LEVELS["blur"][cfg.level])
        return lambda img, rng: blur(img, params)
    if cfg.category == "gn":
        params = NoiseParams(OOD_LEVELS["gn"][cfg.level])
        return lambda img, rng: add_gaussian_noise(img, params, rng)
    if cfg.category in ("bcb", "bcd"):
        params = BrightnessParams(OOD_LEVELS[cfg.category][cfg.level])
        return lambda img, rng: adjust_brightness(img, params)
    if cfg.category in ("tw", "tn"):
        spec = TypoSpec(
            TYPO_SLOTS[cfg.category][cfg.level],
            anchor=TYPO_ANCHOR,
            scale=1,
            color=TYPO_COLOR,
            category=f"{cfg.category.upper()}{cfg.level + 1}",
        )
        return lambda img, rng: render_typography(img, spec)
    if cfg.category == "patch":
        patch = (patches or {}).get(cfg.attack_id)
        if patch is None:
            raise ValueError(f"no patch loaded for {cfg.attack_id}")
        return lambda img, rng: apply_patch(img, patch, rng)[0]
    raise ValueError(f"unknown attack category {cfg.category!r}")


def _thread_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("PVEP_THREADS", "")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, threads)


def cell_records(victim, task, transform, attack_id: str, seed: int,
                 episodes: int) -> list[EpisodeRecord]:
    """All episode records for one (task, attack) cell.

    Episodes are independent, so they advance in lockstep and share each
    policy forward as one batch instead of paying a per-episode forward.
    Every episode still owns the rng stream derived from (seed, task_id,
    attack_id, index) and consumes it in the same order run_episode would
    (scene first, then one transform draw per step), so the records match
    a plain run_episode loop.
    """
    rngs = [
        SeededRng(derive_seed(seed, task.task_id, attack_id, i)) for i in range(episodes)
    ]
    states = [gen_scene(task, rng) for rng in rngs]
    records: list[EpisodeRecord | None] = [None] * episodes
    alive = list(range(episodes))
    for t in range(1, MAX_STEPS + 1):
        obs = np.stack([render(states[i]) for i in alive])
        if transform is not None:
            for j, i in enumerate(alive):
                obs[j] = transform(obs[j], rngs[i])
        instrs = np.full(len(alive), task.instruction_idx)
        acts = np.argmax(victim.logits_batch(obs, instrs), axis=1)
        still = []
        for j, i in enumerate(alive):
            states[i] = step(states[i], int(acts[j]))
            if task_success(task, states[i]):
                records[i] = EpisodeRecord(task.task_id, attack_id, rngs[i].seed, True, t)
            else:
                still.append(i)
        alive = still
        if not alive:
            break
    for i in alive:
        records[i] = EpisodeRecord(task.task_id, attack_id, rngs[i].seed, False, MAX_STEPS)
    return records


def evaluate(victim, tasks, grid, episodes_per_cell: int, seed: int,
             threads: int | None = None) -> EvalReport:
    """Run episodes_per_cell episodes for every (task, attack) pair and
    tabulate failure rate, mean timesteps, and delta vs the task's clean
    cell.

    Episode i of cell (task, attack) runs from the seed derived from
    (seed, task_id, attack_id, i), so results are identical for any
    thread count and any evaluation order.  The final row averages the
    task rows unweighted.
    """
    tasks = list(tasks)
    grid = list(grid)
    if episodes_per_cell < 1:
        raise ValueError(f"episodes_per_cell must be >= 1, got {episodes_per_cell}")
    if not tasks:
        raise ValueError("no tasks to evaluate")
    if not grid:
        raise ValueError("empty attack grid")
    attack_ids = [cfg.attack_id for cfg in grid]
    if "clean" not in attack_ids:
        raise ValueError("the attack grid must include the clean baseline")
    if len(set(attack_ids)) != len(attack_ids):
        raise ValueError(f"duplicate attack ids in grid: {attack_ids}")

    patches = {
        cfg.attack_id: read_patch(cfg.patch_path)
        for cfg in grid
        if cfg.category == "patch"
    }
    transforms = {cfg.attack_id: make_transform(cfg, patches) for cfg in grid}

    def run_cell(task, cfg):
        records = cell_records(
            victim, task, transforms[cfg.attack_id], cfg.attack_id, seed, episodes_per_cell
        )
        return failure_rate(records), mean_timesteps(records)

    jobs = [(task, cfg) for task in tasks for cfg in grid]
    results: dict[tuple[int, str], tuple[float, float]] = {}
    n_threads = _thread_count(threads)
    if n_threads == 1:
        for task, cfg in jobs:
            results[(task.task_id, cfg.attack_id)] = run_cell(task, cfg)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            futures = {
                pool.submit(run_cell, task, cfg): (task.task_id, cfg.attack_id)
                for task, cfg in jobs
            }
            for fut, key in futures.items():
                results[key] = fut.result()

    report = EvalReport(
        attack_ids=tuple(attack_ids),
        task_labels=tuple(f"task{t.task_id}" for t in tasks),
        episodes_per_cell=episodes_per_cell,
        seed=seed,
    )
    for task in tasks:
        clean_rate = results[(task.task_id, "clean")][0]
        row = {}
        for aid in attack_ids:
            rate, steps = results[(task.task_id, aid)]
            row[aid] = Cell(rate, rate - clean_rate, steps)
        report.rows[f"task{task.task_id}"] = row
    avg = {}
    n = len(tasks)
    clean_avg = sum(results[(t.task_id, "clean")][0] for t in tasks) / n
    for aid in attack_ids:
        rate = sum(results[(t.task_id, aid)][0] for t in tasks) / n
        steps = sum(results[(t.task_id, aid)][1] for t in tasks) / n
        avg[aid] = Cell(rate, rate - clean_avg, steps)
    report.rows["avg"] = avg
    return report


# ---------------------------------------------------------------------------
# Report serialization: CSV cells are rate|delta|steps, repr floats so a
# re-parse reproduces every value bit-exactly.  JSON mirrors the layout.
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, fmt: str, path) -> None:
    if not report.task_labels or not report.rows:
        raise ValueError("refusing to write an empty report")
    if fmt == "csv":
        lines = [
            f"# episodes_per_cell = {report.episodes_per_cell}",
            f"# seed = {report.seed}",
            "task," + ",".join(report.attack_ids),
        ]
        for label in (*report.task_labels, "avg"):
            row = report.rows[label]
            cells = [
                f"{row[a].failure_rate!r}|{row[a].delta!r}|{row[a].mean_timesteps!r}"
                for a in report.attack_ids
            ]
            lines.append(label + "," + ",".join(cells))
        write_text_atomic(path, "\n".join(lines) + "\n")
    elif fmt == "json":
        doc = {
            "episodes_per_cell": report.episodes_per_cell,
            "seed": report.seed,
            "attack_ids": list(report.attack_ids),
            "tasks": list(report.task_labels),
            "rows": {
                label: {
                    a: {
                        "failure_rate": cell.failure_rate,
                        "delta": cell.delta,
                        "mean_timesteps": cell.mean_timesteps,
                    }
                    for a, cell in report.rows[label].items()
                }
                for label in (*report.task_labels, "avg")
            },
        }
        write_text_atomic(path, json.dumps(doc, indent=2) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r} (expected csv or json)")


def read_report(path) -> EvalReport:
    """Parse a CSV report written by write_report."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    episodes = 0
    seed = 0
    body = []
    for ln in lines:
        if ln.startswith("# episodes_per_cell ="):
            episodes = int(ln.split("=")[1])
        elif ln.startswith("# seed ="):
            seed = int(ln.split("=")[1])
        elif ln:
            body.append(ln)
    header = body[0].split(",")
    if header[0] != "task":
        raise ValueError(f"not a report CSV (header starts with {header[0]!r}): {path}")
    attack_ids = tuple(header[1:])
    rows = {}
    labels = []
    for ln in body[1:]:
        parts = ln.split(",")
        label = parts[0]
        row = {}
        for aid, cell_text in zip(attack_ids, parts[1:]):
            rate, delta, steps = cell_text.split("|")
            row[aid] = Cell(float(rate), float(delta), float(steps))
        rows[label] = row
        if label != "avg":
            labels.append(label)
    return EvalReport(attack_ids, tuple(labels), rows, episodes, seed)
