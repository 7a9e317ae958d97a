"""Low-frequency amplitude swapping between source and target images.

Each RGB channel is Fourier transformed; the centred low-frequency block of the
source amplitude spectrum is overwritten with the target's while the source
phase is kept. Colour and illumination statistics move toward the target,
edges and layout stay with the source.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .datamodel import DatasetManifest, read_image, write_image, write_manifest

log = logging.getLogger(__name__)

TARGET_SAMPLING = ("fixed", "random-per-image")


@dataclass(frozen=True)
class SpectralConfig:
    """``beta`` sets the window half-width as a fraction of ``min(H, W)``."""

    beta: float = 0.05
    target_sampling: str = "random-per-image"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError(f"beta must lie in [0, 0.5], got {self.beta}")
        if self.target_sampling not in TARGET_SAMPLING:
            raise ValueError(f"target_sampling must be one of {TARGET_SAMPLING}, got {self.target_sampling!r}")


def amplitude_phase(channel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and angle of the 2-D DFT of a real grid (uncentred)."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {channel.shape}")
    if not np.isfinite(channel).all():
        raise ValueError("grid contains non-finite values")
    spectrum = np.fft.fft2(channel)
    return np.abs(spectrum), np.angle(spectrum)


def from_amplitude_phase(amplitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Inverse of :func:`amplitude_phase`; returns the complex spatial field."""
    return np.fft.ifft2(amplitude * np.exp(1j * phase))


def window_half_width(shape: tuple[int, int], beta: float) -> int:
    return int(np.floor(beta * min(shape[0], shape[1])))


def low_frequency_window(shape: tuple[int, int], beta: float) -> np.ndarray:
    """Boolean mask over the uncentred spectrum selecting the swap window.

    In the zero-frequency-centred layout the window is the square of bins whose
    row and column offsets from the DC bin are both below the half-width, so it
    is empty at ``beta == 0``, and symmetric under ``k -> -k`` for any size.
    """
    h, w = shape
    b = window_half_width(shape, beta)
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    return (np.abs(fy)[:, None] < b) & (np.abs(fx)[None, :] < b)


def spectral_blend_float(source: np.ndarray, target: np.ndarray, config: SpectralConfig) -> np.ndarray:
    """Amplitude swap before quantisation; returns float64 ``(H, W, C)``."""
    source = np.asarray(source)
    target = np.asarray(target)
    if source.shape != target.shape:
        raise ValueError(f"source {source.shape} and target {target.shape} differ; resample the target first")
    if source.ndim == 2:
        source, target = source[..., None], target[..., None]
    window = low_frequency_window(source.shape[:2], config.beta)
    out = np.empty(source.shape, dtype=np.float64)
    for c in range(source.shape[2]):
        amp_s, pha_s = amplitude_phase(source[..., c])
        amp_t, _ = amplitude_phase(target[..., c])
        amp = np.where(window, amp_t, amp_s)
        out[..., c] = from_amplitude_phase(amp, pha_s).real
    return out


def spectral_blend(source: np.ndarray, target: np.ndarray, config: SpectralConfig) -> np.ndarray:
    """Restyle ``source`` with the low-frequency amplitude of ``target``.

    Both images are ``(H, W, 3)`` uint8 of identical size. The result is
    clipped to [0, 255] and rounded to uint8. ``beta == 0`` returns an exact
    copy of the source.
    """
    source = np.asarray(source)
    if np.shape(target) != source.shape:
        raise ValueError(f"source {source.shape} and target {np.shape(target)} differ; resample the target first")
    if window_half_width(source.shape[:2], config.beta) == 0:
        return source.copy()
    out = spectral_blend_float(source, target, config)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resample_to(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an RGB image to ``(H, W)``."""
    if image.shape[:2] == tuple(shape):
        return image
    h, w = shape
    return np.asarray(Image.fromarray(image).resize((w, h), Image.BILINEAR))


def _sample_seed(seed: int, sample_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def choose_targets(source: DatasetManifest, target_pool: DatasetManifest, config: SpectralConfig) -> list[int]:
    """Index into ``target_pool`` for each source sample.

    ``fixed`` uses one target for the whole batch; ``random-per-image`` draws per sample
    from a seed derived from ``(config.seed, sample_id)``, so the choice does
    not depend on processing order.
    """
    n = len(target_pool.samples)
    if config.target_sampling == "fixed":
        idx = int(np.random.default_rng(config.seed).integers(n))
        return [idx] * len(source.samples)
    return [int(np.random.default_rng(_sample_seed(config.seed, s.sample_id)).integers(n)) for s in source.samples]


def batch_stylize(
    source: DatasetManifest,
    target_pool: DatasetManifest,
    config: SpectralConfig,
    out_dir: str | os.PathLike,
) -> DatasetManifest:
    """Stylize every source image and write a new manifest under ``out_dir``.

    Masks are copied byte for byte. Sample ids and domain tags are kept.
    """
    if not target_pool.samples:
        raise ValueError("target pool is empty")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    picks = choose_targets(source, target_pool, config)
    target_cache: dict[int, np.ndarray] = {}
    stylized = []
    for sample, t_idx in zip(source.samples, picks):
        src = read_image(sample.image_path)
        if t_idx not in target_cache:
            target_cache[t_idx] = read_image(target_pool.samples[t_idx].image_path)
        tgt = resample_to(target_cache[t_idx], src.shape[:2])
        image_path = out_dir / "images" / f"{sample.sample_id}.png"
        mask_path = out_dir / "masks" / f"{sample.sample_id}.png"
        write_image(image_path, spectral_blend(src, tgt, config))
        shutil.copyfile(sample.mask_path, mask_path)
        stylized.append(replace(sample, image_path=image_path.resolve(), mask_path=mask_path.resolve()))

    manifest = replace(source, name=f"{source.name}-styled", samples=tuple(stylized))
    write_manifest(manifest, out_dir / "manifest.json")
    log.info("stylized %d images into %s (beta=%.3f)", len(stylized), out_dir, config.beta)
    return manifest
