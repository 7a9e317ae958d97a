"""Procedural sim/real domain pair with exact ground-truth masks.

Three shape families stand in for the foreground organs: an ellipse (GL), a
crescent (EP) and a teardrop (UV). Both domains share one geometry
distribution. The sim style is flat fills plus a mild vignette; the real style
adds smooth texture, pixel noise, and a hue and illumination shift.

Each sample has a *primary* class, cycling through the foreground classes by
sample index, whose shape is drawn larger and always present. This keeps the
per-class blend buckets balanced.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .datamodel import (
    DEFAULT_CLASSES,
    ClassSet,
    DatasetManifest,
    Domain,
    SampleRecord,
    Split,
    mask_histogram,
    write_image,
    write_manifest,
    write_mask,
)

log = logging.getLogger(__name__)

# flat sim palette, RGB in [0, 1], indexed by class id
SIM_PALETTE = np.array(
    [
        [0.78, 0.42, 0.40],  # BG: mucosa
        [0.25, 0.08, 0.12],  # GL: dark airway opening
        [0.93, 0.72, 0.62],  # EP
        [0.80, 0.24, 0.46],  # UV
    ]
)


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple[int, int] = (64, 64)
    position_jitter: float = 0.08
    size_jitter: float = 0.25
    rotation_jitter: float = 0.35
    primary_scale: float = 1.4
    secondary_scale: float = 0.8
    class_presence: tuple[float, float, float] = (0.7, 0.7, 0.7)
    vignette: float = 0.25
    real_noise_sigma: float = 0.06
    real_texture: float = 0.12
    real_hue_shift: float = 0.06
    real_saturation: float = 0.75
    real_illumination: tuple[float, float] = (0.65, 1.05)
    seed: int = 0
    class_set: ClassSet = field(default=DEFAULT_CLASSES)

    def __post_init__(self):
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        if len(self.class_presence) != len(self.class_set.foreground_ids):
            raise ValueError("class_presence needs one probability per foreground class")
        if any(not 0 < p <= 1 for p in self.class_presence):
            raise ValueError(f"presence probabilities must lie in (0, 1], got {self.class_presence}")
        if len(self.class_set) != 4:
            raise ValueError("the scene generator renders exactly three foreground shapes")

    def to_json(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "position_jitter": self.position_jitter,
            "size_jitter": self.size_jitter,
            "rotation_jitter": self.rotation_jitter,
            "primary_scale": self.primary_scale,
            "secondary_scale": self.secondary_scale,
            "class_presence": list(self.class_presence),
            "vignette": self.vignette,
            "real_noise_sigma": self.real_noise_sigma,
            "real_texture": self.real_texture,
            "real_hue_shift": self.real_hue_shift,
            "real_saturation": self.real_saturation,
            "real_illumination": list(self.real_illumination),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        kw = dict(d)
        for key in ("image_size", "class_presence", "real_illumination"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


# Shapes work in normalised coordinates: x to the right, y downward, both in [0, 1].


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float = 0.0

    def contains(self, x, y):
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = x - self.cx, y - self.cy
        u = (c * dx + s * dy) / self.rx
        v = (-s * dx + c * dy) / self.ry
        return u * u + v * v <= 1.0


@dataclass(frozen=True)
class Crescent:
    """Outer disc minus an inner disc displaced along ``angle``."""

    cx: float
    cy: float
    r_outer: float
    r_inner: float
    offset: float
    angle: float = math.pi / 2

    def contains(self, x, y):
        ix = self.cx + self.offset * math.cos(self.angle)
        iy = self.cy + self.offset * math.sin(self.angle)
        outer = (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r_outer**2
        inner = (x - ix) ** 2 + (y - iy) ** 2 <= self.r_inner**2
        return outer & ~inner


@dataclass(frozen=True)
class Teardrop:
    """Triangle from a top base down to a rounded tip disc."""

    tip_x: float
    tip_y: float
    half_base: float
    length: float
    tip_radius: float
    angle: float = 0.0

    def vertices(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        local = np.array([[-self.half_base, -self.length], [self.half_base, -self.length], [0.0, 0.0]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + [self.tip_x, self.tip_y]

    def contains(self, x, y):
        (ax, ay), (bx, by), (cx, cy) = self.vertices()

        def side(px, py, qx, qy):
            return (qx - px) * (y - py) - (qy - py) * (x - px)

        d1, d2, d3 = side(ax, ay, bx, by), side(bx, by, cx, cy), side(cx, cy, ax, ay)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        tri = ~(neg & pos)
        disc = (x - self.tip_x) ** 2 + (y - self.tip_y) ** 2 <= self.tip_radius**2
        return tri | disc


def pixel_grid(image_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Normalised coordinates of pixel centres."""
    h, w = image_size
    y = (np.arange(h) + 0.5) / h
    x = (np.arange(w) + 0.5) / w
    return np.meshgrid(x, y)


def sample_geometry(spec: SceneSpec, rng: np.random.Generator, primary: int | None = None) -> dict:
    """Draw one shape per present foreground class, keyed by class id.

    Shapes are listed in z-order (GL, EP, UV); later ones paint over earlier ones.
    """
    gl_id, ep_id, uv_id = spec.class_set.foreground_ids

    def jit(scale):
        return rng.uniform(-scale, scale)

    def size(k):
        if primary is None:
            grow = 1.0
        else:
            grow = spec.primary_scale if k == primary else spec.secondary_scale
        return grow * (1.0 + jit(spec.size_jitter))

    shapes = {}
    presence = dict(zip(spec.class_set.foreground_ids, spec.class_presence))
    # draw every random number even for absent shapes so presence does not shift the stream
    draws = {k: rng.uniform() for k in (gl_id, ep_id, uv_id)}

    s = size(gl_id)
    shapes[gl_id] = Ellipse(
        cx=0.5 + jit(spec.position_jitter),
        cy=0.70 + jit(spec.position_jitter),
        rx=0.10 * s,
        ry=0.15 * s,
        angle=jit(spec.rotation_jitter),
    )
    s = size(ep_id)
    shapes[ep_id] = Crescent(
        cx=0.5 + jit(spec.position_jitter),
        cy=0.48 + jit(spec.position_jitter),
        r_outer=0.20 * s,
        r_inner=0.17 * s,
        offset=0.08 * s,
        angle=math.pi / 2 + jit(spec.rotation_jitter),
    )
    s = size(uv_id)
    shapes[uv_id] = Teardrop(
        tip_x=0.5 + jit(spec.position_jitter),
        tip_y=0.30 + jit(spec.position_jitter),
        half_base=0.09 * s,
        length=0.26 * s,
        tip_radius=0.06 * s,
        angle=jit(spec.rotation_jitter),
    )
    return {k: v for k, v in shapes.items() if k == primary or draws[k] < presence[k]}


def rasterize(shapes: dict, image_size: tuple[int, int]) -> np.ndarray:
    """Label raster; class ids paint in ascending order (UV over EP over GL)."""
    x, y = pixel_grid(image_size)
    mask = np.zeros(image_size, dtype=np.uint8)
    for k in sorted(shapes):
        mask[shapes[k].contains(x, y)] = k
    return mask


def real_palette(spec: SceneSpec) -> np.ndarray:
    hsv = rgb_to_hsv(SIM_PALETTE)
    hsv[:, 0] = (hsv[:, 0] + spec.real_hue_shift) % 1.0
    hsv[:, 1] = np.clip(hsv[:, 1] * spec.real_saturation, 0, 1)
    return hsv_to_rgb(hsv)


def _smooth_texture(rng: np.random.Generator, image_size: tuple[int, int], n_waves: int = 4) -> np.ndarray:
    x, y = pixel_grid(image_size)
    tex = np.zeros(image_size)
    for _ in range(n_waves):
        fx, fy = rng.uniform(-6, 6, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.sin(2 * np.pi * (fx * x + fy * y) + phase)
    return tex / n_waves


def render_flat(mask: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Float RGB image with one flat colour per class."""
    return palette[mask]


def render_arrays(
    spec: SceneSpec, domain: Domain, rng: np.random.Generator, primary: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Render one ``(image, mask)`` pair; degenerate geometry is redrawn."""
    for _ in range(100):
        shapes = sample_geometry(spec, rng, primary)
        mask = rasterize(shapes, spec.image_size)
        present = set(np.unique(mask).tolist())
        if all(k in present for k in shapes):
            break
    else:
        raise RuntimeError("could not draw non-degenerate geometry in 100 attempts")

    x, y = pixel_grid(spec.image_size)
    r2 = ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.5
    vignette = 1.0 - spec.vignette * r2

    if domain is Domain.SOURCE_SIM:
        image = render_flat(mask, SIM_PALETTE) * vignette[..., None]
    elif domain is Domain.TARGET_REAL:
        image = render_flat(mask, real_palette(spec))
        image = image * (1.0 + spec.real_texture * _smooth_texture(rng, spec.image_size))[..., None]
        image = image * rng.uniform(*spec.real_illumination)
        image = image * (vignette**2)[..., None]
        image = image + rng.normal(0.0, spec.real_noise_sigma, size=image.shape)
    else:
        raise ValueError(f"cannot render domain {domain}")
    image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return image, mask


def render_sample(
    spec: SceneSpec,
    domain: Domain,
    rng: np.random.Generator,
    *,
    sample_id: str,
    out_dir: str | os.PathLike,
    primary: int | None = None,
) -> SampleRecord:
    """Render and write one image/mask pair under ``out_dir/{images,masks}``."""
    out_dir = Path(out_dir)
    image, mask = render_arrays(spec, domain, rng, primary)
    image_path = out_dir / "images" / f"{sample_id}.png"
    mask_path = out_dir / "masks" / f"{sample_id}.png"
    try:
        image_path.parent.mkdir(parents=True, exist_ok=True)
        mask_path.parent.mkdir(parents=True, exist_ok=True)
        write_image(image_path, image)
        write_mask(mask_path, mask)
    except OSError as exc:
        raise OSError(f"cannot write sample {sample_id!r} under {out_dir}: {exc}") from exc
    return SampleRecord(
        sample_id, image_path.resolve(), mask_path.resolve(), domain, mask_histogram(mask, spec.class_set)
    )


_DOMAIN_STREAM = {Domain.SOURCE_SIM: 0, Domain.TARGET_REAL: 1}
_PREFIX = {Domain.SOURCE_SIM: "sim", Domain.TARGET_REAL: "real"}


def generate_domain(
    spec: SceneSpec, domain: Domain, n: int, out_dir: str | os.PathLike, name: str | None = None
) -> DatasetManifest:
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    out_dir = Path(out_dir)
    fg = spec.class_set.foreground_ids
    samples = []
    for i in range(n):
        rng = np.random.default_rng([spec.seed, _DOMAIN_STREAM[domain], i])
        sid = f"{_PREFIX[domain]}-{i:04d}"
        samples.append(render_sample(spec, domain, rng, sample_id=sid, out_dir=out_dir, primary=fg[i % len(fg)]))
    manifest = DatasetManifest(
        name or f"synth-{_PREFIX[domain]}", domain, spec.class_set, tuple(samples), Split.TRAIN
    )
    write_manifest(manifest, out_dir / "manifest.json")
    log.info("generated %d %s samples in %s", n, domain.value, out_dir)
    return manifest


def generate_domain_pair(
    spec: SceneSpec, n_sim: int, n_real: int, out_dir: str | os.PathLike
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write ``out_dir/sim`` and ``out_dir/real``, each with its own manifest."""
    out_dir = Path(out_dir)
    sim = generate_domain(spec, Domain.SOURCE_SIM, n_sim, out_dir / "sim")
    real = generate_domain(spec, Domain.TARGET_REAL, n_real, out_dir / "real")
    return sim, real
