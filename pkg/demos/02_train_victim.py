"""Train a small policy lineage: general-domain base, then a robotic
fine-tune that becomes the victim under evaluation.

Scaled so the whole script runs in about a minute; expect a perfect base
and a victim around 80% action accuracy (the reference pipeline in the
README trains longer on more data and reaches ~98%).

Run:  python demos/02_train_victim.py
"""

import time
from pathlib import Path

from pvep.datasets import gen_general, gen_robotic
from pvep.imgcore import SeededRng
from pvep.nnmodel import PolicyArch, PolicyNet, accuracy, train

OUT = Path(__file__).resolve().parent.parent / "demo_out"
OUT.mkdir(exist_ok=True)

general = gen_general(count=800, rng=SeededRng(11))
robotic = gen_robotic(count=8000, rng=SeededRng(12))
print(f"data: {len(general.images)} general color-query pairs, "
      f"{len(robotic.images)} robotic expert steps")

arch = PolicyArch()
net = PolicyNet.init(arch, SeededRng(21))

t0 = time.monotonic()
train(net, general.images, general.instrs, general.labels,
      epochs=10, lr=0.1, batch_size=32, rng=SeededRng(22))
base = net.copy()
print(f"base: 10 epochs on general data in {time.monotonic() - t0:.1f}s, "
      f"train accuracy {accuracy(base, general.images, general.instrs, general.labels):.3f}")

t0 = time.monotonic()
train(net, robotic.images, robotic.instrs, robotic.labels,
      epochs=20, lr=0.1, batch_size=64, rng=SeededRng(23))
train(net, robotic.images, robotic.instrs, robotic.labels,
      epochs=6, lr=0.03, batch_size=64, rng=SeededRng(24))
victim = net
print(f"victim: 20 + 6 fine-tune epochs on robotic data in "
      f"{time.monotonic() - t0:.1f}s, train accuracy "
      f"{accuracy(victim, robotic.images, robotic.instrs, robotic.labels):.3f}")

base.save(OUT / "demo_base.ppn")
victim.save(OUT / "demo_victim.ppn")
print(f"checkpoints written to {OUT}/demo_base.ppn and {OUT}/demo_victim.ppn")
