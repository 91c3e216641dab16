"""Tour of the image operators: corruptions, typography, and patches.

Renders one tabletop scene, applies each perturbation, and writes the
results as PPM files under demo_out/ so they can be eyeballed in any
image viewer.

Run:  python demos/01_image_ops.py
"""

from pathlib import Path

import numpy as np

from pvep.imgcore import SeededRng, write_ppm
from pvep.perturb import (
    BlurParams,
    BrightnessParams,
    NoiseParams,
    PatchSpec,
    TypoSpec,
    add_gaussian_noise,
    adjust_brightness,
    apply_patch,
    blur,
    render_typography,
)
from pvep.tabletop import TASKS, gen_scene, render

OUT = Path(__file__).resolve().parent.parent / "demo_out"
OUT.mkdir(exist_ok=True)

rng = SeededRng(7)
scene = gen_scene(TASKS[0], rng)
clean = render(scene)
write_ppm(clean, OUT / "clean.ppm")
print(f"clean scene: {clean.shape[0]}x{clean.shape[1]} render of task "
      f"{TASKS[0].task_id} ({TASKS[0].text!r})")

for radius in (2, 4, 6):
    img = blur(clean, BlurParams(radius))
    write_ppm(img, OUT / f"blur_r{radius}.ppm")
print("blur: radii 2/4/6 written (Gaussian, sigma = radius)")

for variance in (0.01, 0.05, 0.1):
    img = add_gaussian_noise(clean, NoiseParams(variance=variance), rng.derive("gn", variance))
    write_ppm(img, OUT / f"noise_{variance}.ppm")
print("noise: variances 0.01/0.05/0.1 written (zero-mean, clamped)")

for alpha in (0.4, 0.8, 1.2, 1.6):
    img = adjust_brightness(clean, BrightnessParams(alpha=alpha))
    write_ppm(img, OUT / f"brightness_{alpha}.ppm")
print("brightness: alpha 0.4/0.8/1.2/1.6 written (scale then clamp)")

typo = render_typography(clean, TypoSpec(text="stop moving", anchor=(1, 1)))
write_ppm(typo, OUT / "typography.ppm")
changed = int(np.sum(np.any(typo != clean, axis=2)))
print(f"typography: 'stop moving' rasterized at (1, 1), {changed} pixels inked")

patch = PatchSpec(delta=rng.uniform(0.0, 1.0, size=(6, 6, 3)).astype(np.float32))
patched, placement = apply_patch(clean, patch, rng.derive("patch"))
write_ppm(patched, OUT / "patch.ppm")
print(f"patch: random 6x6 overlay landed at {placement}")

print(f"\nwrote {len(list(OUT.glob('*.ppm')))} images to {OUT}/")
