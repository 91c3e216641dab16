"""Compare the four attacker knowledge levels on one victim.

Each level picks which model the attacker can differentiate and which
data it can composite patches over:

  bb   black box          base model,   general data
  rbb  robotic black box  base model,   general + robotic data
  gb   gray box           victim model, general data
  wb   white box          victim model, general + robotic data

Patches from bb/rbb are optimized on the base surrogate and transferred;
gb/wb differentiate the victim directly. The optimization budget here is
deliberately tiny (40 iterations) so the knowledge ladder is visible:
direct access converts budget into damage immediately, while surrogate
transfer needs far more budget to bite — at the full default budget all
four levels break this victim.

Run:  python demos/02_train_victim.py && python demos/04_threat_levels.py
"""

import sys
from pathlib import Path

from pvep.datasets import gen_general, gen_robotic
from pvep.harness import AttackConfig, evaluate
from pvep.imgcore import SeededRng
from pvep.nnmodel import load_checkpoint
from pvep.patchopt import THREAT_LEVELS, PatchOptConfig, optimize_patch, resolve_threat
from pvep.perturb import write_patch
from pvep.tabletop import TASKS

OUT = Path(__file__).resolve().parent.parent / "demo_out"
if not (OUT / "demo_victim.ppn").exists():
    sys.exit("run demos/02_train_victim.py first")

base = load_checkpoint(OUT / "demo_base.ppn")
victim = load_checkpoint(OUT / "demo_victim.ppn")
general = gen_general(count=200, rng=SeededRng(41))
robotic = gen_robotic(count=150, rng=SeededRng(42))

cfg = PatchOptConfig(target_action=16, iterations=40)

grid = [AttackConfig("clean", "clean")]
surrogates = {}
for level in THREAT_LEVELS:
    model, data = resolve_threat(level, base, victim, general, robotic)
    surrogates[level] = "victim" if model is victim else "base"
    patch = optimize_patch(model, data, cfg, SeededRng(43))
    path = OUT / f"demo_{level}.ppat"
    write_patch(patch, path)
    grid.append(AttackConfig(f"patch_{level}", "patch", patch_path=str(path)))

report = evaluate(victim, TASKS, grid, episodes_per_cell=50, seed=3)
avg = report.rows["avg"]

print(f"{'level':<6} {'surrogate':<10} {'failure %':>10} {'delta pp':>10}")
cell = avg["clean"]
print(f"{'clean':<6} {'-':<10} {cell.failure_rate:>10.1f} {cell.delta:>+10.1f}")
for level in THREAT_LEVELS:
    cell = avg[f"patch_{level}"]
    print(f"{level:<6} {surrogates[level]:<10} {cell.failure_rate:>10.1f} "
          f"{cell.delta:>+10.1f}")

print("\ndirect access (gb/wb) already bites at this budget; "
      "transfer (bb/rbb) needs a bigger one")
