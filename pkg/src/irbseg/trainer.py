"""Segmentation model contract, a small reference U-Net, training and evaluation.

A checkpoint is a directory holding ``weights.pt`` (torch state dict) and a
``checkpoint.json`` sidecar with the class set, trainer config, model name
and training log. Models are looked up by name in :data:`MODEL_REGISTRY`, so
other backends or test doubles plug in through :func:`register_model`.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch
from PIL import Image
from torch import nn
from torch.nn import functional as F

from .datamodel import ClassSet, DatasetManifest, ManifestError, read_image, read_mask
from .metrics import IoUReport, build_report, confusion_matrix

log = logging.getLogger(__name__)

SIDECAR = "checkpoint.json"
WEIGHTS = "weights.pt"


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ContractError(ValueError):
    """Checkpoint and dataset disagree on the class set or input format."""


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 3e-3
    seed: int = 0
    image_size: tuple[int, int] = (64, 64)
    model_name: str = "unet"
    device_hint: str = "cpu-only"
    base_width: int = 16

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size <= 0 or self.learning_rate <= 0 or self.base_width <= 0:
            raise ValueError("batch_size, learning_rate and base_width must be positive")
        if any(s <= 0 for s in self.image_size):
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        if self.device_hint not in ("auto", "cpu-only"):
            raise ValueError(f"device_hint must be 'auto' or 'cpu-only', got {self.device_hint!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainerConfig":
        kw = dict(d)
        if "image_size" in kw:
            kw["image_size"] = tuple(kw["image_size"])
        return cls(**kw)


@runtime_checkable
class SegmentationModel(Protocol):
    def initialize(self, num_classes: int, seed: int) -> None: ...

    def fit(self, trainset: DatasetManifest, config: TrainerConfig) -> list[float]: ...

    def predict(self, image: np.ndarray) -> np.ndarray: ...

    def save(self, path: Path) -> None: ...

    def load(self, path: Path) -> None: ...


MODEL_REGISTRY: dict[str, Callable[[TrainerConfig], SegmentationModel]] = {}


def register_model(name: str, factory: Callable[[TrainerConfig], SegmentationModel]) -> None:
    MODEL_REGISTRY[name] = factory


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Three pooling stages with skip connections; ~0.48M parameters at width 16."""

    downsampling = 8

    def __init__(self, num_classes: int, width: int = 16, in_channels: int = 3):
        super().__init__()
        w = [width, 2 * width, 4 * width, 8 * width]
        self.enc = nn.ModuleList([_conv_block(in_channels, w[0]), _conv_block(w[0], w[1]), _conv_block(w[1], w[2])])
        self.bottleneck = _conv_block(w[2], w[3])
        self.up = nn.ModuleList(
            [nn.ConvTranspose2d(w[3], w[2], 2, stride=2), nn.ConvTranspose2d(w[2], w[1], 2, stride=2),
             nn.ConvTranspose2d(w[1], w[0], 2, stride=2)]
        )
        self.dec = nn.ModuleList([_conv_block(2 * w[2], w[2]), _conv_block(2 * w[1], w[1]), _conv_block(2 * w[0], w[0])])
        self.head = nn.Conv2d(w[0], num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, block in zip(self.up, self.dec):
            x = block(torch.cat([up(x), skips.pop()], dim=1))
        return self.head(x)


def _resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if image.shape[:2] == tuple(size):
        return image
    return np.asarray(Image.fromarray(image).resize((size[1], size[0]), Image.BILINEAR))


def _resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if mask.shape == tuple(size):
        return mask
    return np.asarray(Image.fromarray(mask).resize((size[1], size[0]), Image.NEAREST))


def load_arrays(manifest: DatasetManifest, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a manifest into ``(N, H, W, 3)`` uint8 images and ``(N, H, W)`` masks."""
    images, masks = [], []
    for s in manifest.samples:
        try:
            images.append(_resize_image(read_image(s.image_path), size))
            masks.append(_resize_mask(read_mask(s.mask_path), size))
        except Exception as exc:
            raise ManifestError(f"cannot load sample {s.sample_id!r}: {exc}") from exc
    h, w = size
    if not images:
        return np.zeros((0, h, w, 3), np.uint8), np.zeros((0, h, w), np.uint8)
    return np.stack(images), np.stack(masks)


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.array(images, dtype=np.uint8)).permute(0, 3, 1, 2).float().div_(255.0)


def _select_device(hint: str) -> torch.device:
    if hint == "auto" and torch.cuda.is_available():
        return torch.device("cuda")
    return torch.device("cpu")


class ReferenceSegmenter:
    """:class:`SegmentationModel` backed by :class:`UNet`."""

    def __init__(self, config: TrainerConfig):
        self.config = config
        self.device = _select_device(config.device_hint)
        self.net: UNet | None = None
        self.num_classes = 0

    def initialize(self, num_classes: int, seed: int) -> None:
        torch.manual_seed(seed)
        self.num_classes = num_classes
        self.net = UNet(num_classes, self.config.base_width).to(self.device)

    def fit(self, trainset: DatasetManifest, config: TrainerConfig) -> list[float]:
        if config.device_hint == "cpu-only":
            torch.use_deterministic_algorithms(True)
        images, masks = load_arrays(trainset, config.image_size)
        x_all = _to_tensor(images)
        y_all = torch.from_numpy(masks.astype(np.int64))
        gen = torch.Generator().manual_seed(config.seed)
        opt = torch.optim.Adam(self.net.parameters(), lr=config.learning_rate)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.epochs, 1))
        n = len(x_all)
        losses = []
        for epoch in range(config.epochs):
            self.net.train()
            order = torch.randperm(n, generator=gen)
            total, seen = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                if len(idx) < 2 and n >= 2:
                    # batch norm needs more than one sample per batch
                    continue
                x = x_all[idx].to(self.device)
                y = y_all[idx].to(self.device)
                loss = F.cross_entropy(self.net(x), y)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
                seen += len(idx)
            sched.step()
            mean = total / max(seen, 1)
            if not math.isfinite(mean):
                raise DivergenceError(epoch, mean)
            losses.append(mean)
            log.debug("epoch %d loss %.4f", epoch, mean)
        return losses

    @torch.no_grad()
    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        self.net.eval()
        out = []
        for start in range(0, len(images), 64):
            logits = self.net(_to_tensor(images[start : start + 64]).to(self.device))
            out.append(logits.argmax(dim=1).cpu().numpy().astype(np.uint8))
        return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:3], np.uint8)

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self.predict_batch(np.asarray(image)[None])[0]

    def save(self, path: Path) -> None:
        torch.save(self.net.state_dict(), Path(path) / WEIGHTS)

    def load(self, path: Path) -> None:
        state = torch.load(Path(path) / WEIGHTS, map_location=self.device, weights_only=True)
        self.net.load_state_dict(state)


register_model("unet", ReferenceSegmenter)


@dataclass
class Checkpoint:
    path: Path
    model: SegmentationModel
    class_set: ClassSet
    config: TrainerConfig
    training_log: list[float] = field(default_factory=list)

    def predict(self, image: np.ndarray) -> np.ndarray:
        return predict_mask(self, image)


def _build_model(config: TrainerConfig) -> SegmentationModel:
    try:
        factory = MODEL_REGISTRY[config.model_name]
    except KeyError:
        raise ValueError(f"unknown model {config.model_name!r}; registered: {sorted(MODEL_REGISTRY)}") from None
    return factory(config)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ckpt.model.save(path)
    sidecar = {
        "model_name": ckpt.config.model_name,
        "class_set": ckpt.class_set.to_json(),
        "config": ckpt.config.to_json(),
        "training_log": list(ckpt.training_log),
    }
    (path / SIDECAR).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    ckpt.path = path
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    if not (path / SIDECAR).is_file():
        raise ManifestError(f"no checkpoint sidecar at {path / SIDECAR}")
    meta = json.loads((path / SIDECAR).read_text(encoding="utf-8"))
    config = TrainerConfig.from_json(meta["config"])
    class_set = ClassSet.from_json(meta["class_set"])
    model = _build_model(config)
    model.initialize(len(class_set), config.seed)
    model.load(path)
    return Checkpoint(path, model, class_set, config, list(meta.get("training_log", [])))


def train_model(
    config: TrainerConfig, trainset: DatasetManifest, checkpoint_dir: str | os.PathLike
) -> tuple[Checkpoint, list[float]]:
    """Train a fresh model from ``config.seed`` and write its checkpoint."""
    if not trainset.samples:
        raise ValueError("training set is empty")
    h, w = config.image_size
    model = _build_model(config)
    factor = getattr(UNet, "downsampling", 1) if isinstance(model, ReferenceSegmenter) else 1
    if h % factor or w % factor:
        raise ValueError(f"image_size {config.image_size} is not divisible by {factor}")
    model.initialize(len(trainset.class_set), config.seed)
    losses = model.fit(trainset, config) if config.epochs else []
    ckpt = Checkpoint(Path(checkpoint_dir), model, trainset.class_set, config, losses)
    save_checkpoint(ckpt, checkpoint_dir)
    if losses:
        log.info("trained %s on %d samples: loss %.4f -> %.4f", config.model_name, len(trainset), losses[0], losses[-1])
    return ckpt, losses


def _as_checkpoint(checkpoint: Checkpoint | str | os.PathLike) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def predict_mask(
    checkpoint: Checkpoint | str | os.PathLike, image: np.ndarray, resize: bool = False
) -> np.ndarray:
    """Label raster with the same height and width as ``image``.

    Sizes not divisible by the network's downsampling factor are rejected
    unless ``resize`` is set, in which case the image is resampled to the
    training size and the prediction resampled back (nearest neighbour).
    """
    ckpt = _as_checkpoint(checkpoint)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"expected an (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    factor = UNet.downsampling if isinstance(ckpt.model, ReferenceSegmenter) else 1
    if resize:
        pred = ckpt.model.predict(_resize_image(image, ckpt.config.image_size))
        return _resize_mask(pred, (h, w))
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} is not divisible by {factor}; pass resize=True")
    return ckpt.model.predict(image)


def predict_masks(checkpoint: Checkpoint | str | os.PathLike, images: Sequence[np.ndarray]) -> list[np.ndarray]:
    ckpt = _as_checkpoint(checkpoint)
    return [predict_mask(ckpt, im) for im in images]


def evaluate_model(checkpoint: Checkpoint | str | os.PathLike, eval_set: DatasetManifest) -> IoUReport:
    """Predict every sample and pool all pixels into one confusion matrix."""
    if not eval_set.samples:
        raise ValueError("evaluation set is empty")
    ckpt = _as_checkpoint(checkpoint)
    if ckpt.class_set != eval_set.class_set:
        raise ContractError(
            f"checkpoint classes {ckpt.class_set.names} do not match evaluation classes {eval_set.class_set.names}"
        )
    images, masks = load_arrays(eval_set, ckpt.config.image_size)
    if isinstance(ckpt.model, ReferenceSegmenter):
        preds = list(ckpt.model.predict_batch(images))
    else:
        preds = [ckpt.model.predict(im) for im in images]
    return build_report(confusion_matrix(list(masks), preds, ckpt.class_set))
