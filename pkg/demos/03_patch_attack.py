"""Optimize an adversarial patch and watch it break the policy in
closed loop.

Loads the victim written by 02_train_victim.py, optimizes a 6x6 patch
that steers it toward one target action, then compares episode failure
rates with and without the patch pasted into every observation.

Run:  python demos/02_train_victim.py && python demos/03_patch_attack.py
"""

import sys
import time
from pathlib import Path

from pvep.datasets import gen_robotic
from pvep.harness import AttackConfig, evaluate
from pvep.imgcore import SeededRng
from pvep.nnmodel import load_checkpoint
from pvep.patchopt import PatchOptConfig, optimize_patch
from pvep.perturb import write_patch
from pvep.tabletop import TASKS

OUT = Path(__file__).resolve().parent.parent / "demo_out"
victim_path = OUT / "demo_victim.ppn"
if not victim_path.exists():
    sys.exit("run demos/02_train_victim.py first to produce demo_out/demo_victim.ppn")

victim = load_checkpoint(victim_path)
attack_data = gen_robotic(count=200, rng=SeededRng(51))

TARGET = 16  # a place action: forcing it every step stalls any pick task
cfg = PatchOptConfig(target_action=TARGET, iterations=400)

t0 = time.monotonic()
patch = optimize_patch(victim, attack_data, cfg, SeededRng(52))
print(f"optimized a {patch.side_px}x{patch.side_px} patch toward action "
      f"{TARGET} ({cfg.iterations} iterations, {time.monotonic() - t0:.1f}s)")

patch_path = OUT / "demo_patch.ppat"
write_patch(patch, patch_path)

grid = [
    AttackConfig("clean", "clean"),
    AttackConfig("patch", "patch", patch_path=str(patch_path)),
]
report = evaluate(victim, TASKS, grid, episodes_per_cell=30, seed=3)
avg = report.rows["avg"]
print(f"episode failure over {len(TASKS)} tasks x 30 episodes: "
      f"clean {avg['clean'].failure_rate:.1f}% -> "
      f"patched {avg['patch'].failure_rate:.1f}% "
      f"({avg['patch'].delta:+.1f}pp)")
print(f"patch written to {patch_path}")
