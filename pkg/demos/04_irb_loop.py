# The IoU-ranking blend loop with a small model
#
# Train on sim plus a random handful of real images. Rank the foreground
# classes by validation IoU, then redraw the real images 5:3:2 in favour of
# the weakest class. Stop when a ranking repeats.
#
# This demo uses tiny settings and runs in under a minute on one CPU.

import logging
import tempfile
from dataclasses import replace
from pathlib import Path

from irbseg.datamodel import split_dataset
from irbseg.irb import BlendPolicy, ReferenceTrainer, irb_loop
from irbseg.report import build_rows, render_text
from irbseg.styletransfer import SpectralConfig
from irbseg.synthgen import SceneSpec, generate_domain_pair
from irbseg.trainer import TrainerConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
root = Path(tempfile.mkdtemp())

spec = SceneSpec(image_size=(32, 32), seed=0)
sim, real = generate_domain_pair(spec, n_sim=60, n_real=60, out_dir=root / "data")
pool, val, _ = split_dataset(real, (0.7, 0.3, 0.0), seed=0)
print(len(pool), "pool images,", len(val), "validation images")

# %%

trainer = ReferenceTrainer(
    TrainerConfig(epochs=40, batch_size=16, image_size=(32, 32), base_width=8, device_hint="cpu-only")
)
state = irb_loop(
    BlendPolicy(total_budget=20, seed=0, max_iterations=4),
    sim,
    pool,
    replace(val, name="real-val"),
    trainer,
    root / "irb",
    stylize=True,
    spectral=SpectralConfig(beta=0.05),
    name="demo",
)

# %%
# One row per round. The label gives the tenths of the budget spent on GL,
# EP and UV in that order. "r" marks the random first round.

names, rows = build_rows([state])
print(render_text(names, rows))
