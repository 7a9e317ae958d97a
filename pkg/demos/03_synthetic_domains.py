# A synthetic sim/real domain pair
#
# Both domains draw the same shape geometry, so masks are comparable. The
# sim domain renders flat colours. The real domain adds texture, sensor
# noise, a hue shift and uneven illumination.

import tempfile
from pathlib import Path

import numpy as np

from irbseg.datamodel import dominant_foreground_class
from irbseg.synthgen import SceneSpec, generate_domain_pair

root = Path(tempfile.mkdtemp())
spec = SceneSpec(seed=0)
sim, real = generate_domain_pair(spec, n_sim=30, n_real=30, out_dir=root)
print(len(sim), "sim and", len(real), "real samples under", root)

# %%
# Pixel share per class over the real set.

totals = np.zeros(4)
for s in real.samples:
    totals += [s.class_histogram[k] for k in range(4)]
for k, share in enumerate(totals / totals.sum()):
    print(f"{real.class_set.name_of(k):>3} {share:.3f}")

# %%
# Blending draws real images by their dominant foreground class, so the
# buckets need to be reasonably balanced.

buckets = {}
for s in real.samples:
    k = dominant_foreground_class(s, real.class_set)
    buckets[k] = buckets.get(k, 0) + 1
print({real.class_set.name_of(k): n for k, n in sorted(buckets.items())})
