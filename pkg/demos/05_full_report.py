"""End-to-end evaluation grid on a small victim: corruptions, typography,
and an optimized patch, tabulated as failure rates with deltas vs clean.

Builds the attack grid from the same config text the CLI accepts, runs a
reduced episode count per cell, and writes the report in both formats.

Run:  python demos/02_train_victim.py && python demos/05_full_report.py
"""

import sys
import time
from pathlib import Path

from pvep.datasets import gen_robotic
from pvep.harness import build_attack_grid, evaluate, parse_config, write_report
from pvep.imgcore import SeededRng
from pvep.nnmodel import load_checkpoint
from pvep.patchopt import PatchOptConfig, optimize_patch
from pvep.perturb import write_patch
from pvep.tabletop import TASKS

OUT = Path(__file__).resolve().parent.parent / "demo_out"
if not (OUT / "demo_victim.ppn").exists():
    sys.exit("run demos/02_train_victim.py first")

victim = load_checkpoint(OUT / "demo_victim.ppn")

patch = optimize_patch(
    victim,
    gen_robotic(count=200, rng=SeededRng(51)),
    PatchOptConfig(target_action=16, iterations=300),
    SeededRng(52),
)
write_patch(patch, OUT / "demo_wb.ppat")

CONFIG = f"""
# reduced grid: one level per corruption, one text slot each, one patch
attacks = clean, blur, gn, bcd, tw, tn, patch
blur.levels = 1
gn.levels = 2
bcd.levels = 2
tw.slots = 1
tn.slots = 1
patch.wb = {OUT / 'demo_wb.ppat'}
episodes = 40
seed = 3
"""

cfg = parse_config(CONFIG)
grid = build_attack_grid(CONFIG)
print(f"grid: {[a.attack_id for a in grid]}")

t0 = time.monotonic()
report = evaluate(victim, TASKS, grid, episodes_per_cell=cfg.episodes, seed=cfg.seed)
print(f"evaluated {len(TASKS)} tasks x {len(grid)} attacks x "
      f"{cfg.episodes} episodes in {time.monotonic() - t0:.1f}s\n")

avg = report.rows["avg"]
print(f"{'attack':<12} {'failure %':>10} {'delta pp':>10} {'steps':>7}")
for aid in report.attack_ids:
    cell = avg[aid]
    print(f"{aid:<12} {cell.failure_rate:>10.1f} {cell.delta:>+10.1f} "
          f"{cell.mean_timesteps:>7.2f}")

write_report(report, "csv", OUT / "demo_report.csv")
write_report(report, "json", OUT / "demo_report.json")
print(f"\nreports written to {OUT}/demo_report.csv and .json")
