"""IoU-ranking blend scheduling.

A fixed budget of labelled real images is mixed into the simulated training
set. After each round the foreground classes are ranked by validation IoU and
the budget is re-split with the ratio weights, largest share to the worst
class. Rounds continue until a ranking repeats (or an iteration cap is hit)
and the round with the best mIoU wins.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._rounding import largest_remainder
from .datamodel import (
    DEFAULT_CLASSES,
    ClassSet,
    DatasetManifest,
    Domain,
    SampleRecord,
    Split,
    ValidationError,
    dominant_foreground_class,
)
from .metrics import IoUReport, rank_classes
from .styletransfer import SpectralConfig, batch_stylize

log = logging.getLogger(__name__)

__all__ = [
    "BlendPolicy",
    "BlendAllocation",
    "IrbRunState",
    "IrbLoopError",
    "CapacityError",
    "rank_classes",
    "allocate_blend",
    "initial_allocation",
    "bucket_by_class",
    "select_blend_images",
    "build_blended_trainset",
    "irb_loop",
    "ReferenceTrainer",
]

INITIAL_MODES = ("random", "uniform", "explicit")


class CapacityError(ValueError):
    def __init__(self, class_name: str, requested: int, available: int):
        super().__init__(
            f"class {class_name}: allocation needs {requested} images but the pool has {available} "
            f"(short by {requested - available})"
        )
        self.class_name = class_name
        self.shortfall = requested - available


class IrbLoopError(RuntimeError):
    """A training round failed; carries the round index and the history so far."""

    def __init__(self, iteration: int, state: "IrbRunState", cause: BaseException):
        super().__init__(f"IRB iteration {iteration} failed: {cause}")
        self.iteration = iteration
        self.state = state


@dataclass(frozen=True)
class BlendPolicy:
    total_budget: int = 40
    ratio_weights: tuple[int, ...] = (5, 3, 2)
    initial_mode: str = "random"
    seed: int = 0
    initial_counts: Mapping[int, int] | None = None
    max_iterations: int = 10

    def __post_init__(self):
        if self.total_budget <= 0:
            raise ValueError(f"total_budget must be positive, got {self.total_budget}")
        if not self.ratio_weights or any(w <= 0 for w in self.ratio_weights):
            raise ValueError(f"ratio weights must be positive, got {self.ratio_weights}")
        if self.initial_mode not in INITIAL_MODES:
            raise ValueError(f"initial_mode must be one of {INITIAL_MODES}, got {self.initial_mode!r}")
        if self.initial_mode == "explicit":
            if self.initial_counts is None or sum(self.initial_counts.values()) != self.total_budget:
                raise ValueError("explicit initial_counts must be given and sum to total_budget")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")

    def to_json(self) -> dict:
        return {
            "total_budget": self.total_budget,
            "ratio_weights": list(self.ratio_weights),
            "initial_mode": self.initial_mode,
            "seed": self.seed,
            "initial_counts": None if self.initial_counts is None
            else {str(k): v for k, v in self.initial_counts.items()},
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "BlendPolicy":
        kw = dict(d)
        if "ratio_weights" in kw:
            kw["ratio_weights"] = tuple(kw["ratio_weights"])
        if kw.get("initial_counts") is not None:
            kw["initial_counts"] = {int(k): int(v) for k, v in kw["initial_counts"].items()}
        return cls(**kw)


@dataclass(frozen=True)
class BlendAllocation:
    per_class_counts: dict[int, int]
    label: str

    @property
    def total(self) -> int:
        return sum(self.per_class_counts.values())

    def to_json(self) -> dict:
        return {"label": self.label, "per_class_counts": {str(k): v for k, v in self.per_class_counts.items()}}

    @classmethod
    def from_json(cls, d: Mapping) -> "BlendAllocation":
        return cls({int(k): int(v) for k, v in d["per_class_counts"].items()}, d["label"])


def _share_label(total: int, weights_by_class: Mapping[int, float], class_order: Sequence[int]) -> str:
    s = sum(weights_by_class.values())
    digits = "".join(str(int(round(10 * weights_by_class[k] / s))) for k in class_order)
    return f"{total}-{digits}"


def allocate_blend(
    policy: BlendPolicy, ranking: Sequence[int], class_set: ClassSet = DEFAULT_CLASSES
) -> BlendAllocation:
    """Split ``policy.total_budget`` over classes ranked worst to best.

    The label lists the tenths share per class in class-id order, e.g. "40-253"
    gives GL 2/10, EP 5/10, UV 3/10 of the budget.
    """
    ranking = list(ranking)
    if len(ranking) != len(policy.ratio_weights):
        raise ValueError(f"ranking has {len(ranking)} classes but there are {len(policy.ratio_weights)} weights")
    fg = class_set.foreground_ids
    if sorted(ranking) != sorted(fg):
        raise ValueError(f"ranking {ranking} is not a permutation of foreground ids {fg}")
    weights = policy.ratio_weights
    quotas = [policy.total_budget * w / sum(weights) for w in weights]
    counts = largest_remainder(quotas, policy.total_budget)
    per_class = {k: counts[ranking.index(k)] for k in fg}
    label = _share_label(policy.total_budget, {k: weights[ranking.index(k)] for k in fg}, fg)
    return BlendAllocation(per_class, label)


def bucket_by_class(pool: DatasetManifest) -> dict[int, list[SampleRecord]]:
    """Group pool samples by dominant foreground class, keeping manifest order."""
    buckets: dict[int, list[SampleRecord]] = {k: [] for k in pool.class_set.foreground_ids}
    for s in pool.samples:
        k = dominant_foreground_class(s, pool.class_set)
        if k is not None:
            buckets[k].append(s)
    return buckets


def initial_allocation(policy: BlendPolicy, pool: DatasetManifest) -> BlendAllocation:
    """Round-0 allocation.

    ``random`` draws ``total_budget`` pool images uniformly (seeded) and counts
    their classes, i.e. an unranked random blend. ``uniform`` splits the budget
    evenly; ``explicit`` takes ``policy.initial_counts`` verbatim.
    """
    fg = pool.class_set.foreground_ids
    n = policy.total_budget
    if policy.initial_mode == "explicit":
        return BlendAllocation({k: int(policy.initial_counts.get(k, 0)) for k in fg}, f"{n}-e")
    if policy.initial_mode == "uniform":
        counts = largest_remainder([n / len(fg)] * len(fg), n)
        return BlendAllocation(dict(zip(fg, counts)), f"{n}-u")
    buckets = bucket_by_class(pool)
    labelled = [k for k in fg for _ in buckets[k]]
    if n > len(labelled):
        raise CapacityError("any", n, len(labelled))
    picks = np.random.default_rng(policy.seed).choice(len(labelled), size=n, replace=False)
    counts = {k: 0 for k in fg}
    for i in picks:
        counts[labelled[i]] += 1
    return BlendAllocation(counts, f"{n}-r")


def select_blend_images(
    pool: DatasetManifest, allocation: BlendAllocation, seed: int
) -> list[SampleRecord]:
    """Draw the allocated number of images from each class bucket, without replacement."""
    buckets = bucket_by_class(pool)
    for k in sorted(allocation.per_class_counts):
        want = allocation.per_class_counts[k]
        if want > len(buckets.get(k, [])):
            raise CapacityError(pool.class_set.name_of(k), want, len(buckets.get(k, [])))
    rng = np.random.default_rng(seed)
    chosen = []
    for k in sorted(allocation.per_class_counts):
        want = allocation.per_class_counts[k]
        bucket = buckets[k]
        idx = rng.choice(len(bucket), size=want, replace=False) if want else []
        chosen.extend(bucket[i] for i in sorted(idx))
    return chosen


def build_blended_trainset(
    source: DatasetManifest,
    blended: Sequence[SampleRecord],
    stylize: bool = False,
    *,
    style_pool: DatasetManifest | None = None,
    spectral: SpectralConfig | None = None,
    out_dir: str | os.PathLike | None = None,
) -> DatasetManifest:
    """Source samples (optionally restyled toward ``style_pool``) plus the real blend."""
    if stylize:
        if style_pool is None or out_dir is None:
            raise ValueError("stylize needs style_pool and out_dir")
        source = batch_stylize(source, style_pool, spectral or SpectralConfig(), out_dir)
    if not blended:
        return source
    ids = source.sample_ids
    for s in blended:
        if s.sample_id in ids:
            raise ValidationError(f"blended sample {s.sample_id!r} collides with a source sample id")
        ids.add(s.sample_id)
    return DatasetManifest(
        name=f"{source.name}+blend{len(blended)}",
        domain=Domain.MIXED,
        class_set=source.class_set,
        samples=source.samples + tuple(blended),
        split=Split.TRAIN,
    )


@dataclass
class IrbIteration:
    allocation: BlendAllocation
    report: IoUReport
    checkpoint: str | None = None

    def to_json(self) -> dict:
        return {"allocation": self.allocation.to_json(), "report": self.report.to_json(), "checkpoint": self.checkpoint}

    @classmethod
    def from_json(cls, d: Mapping) -> "IrbIteration":
        return cls(BlendAllocation.from_json(d["allocation"]), IoUReport.from_json(d["report"]), d.get("checkpoint"))


@dataclass
class IrbRunState:
    policy: BlendPolicy
    class_set: ClassSet = DEFAULT_CLASSES
    iterations: list[IrbIteration] = field(default_factory=list)
    rankings_seen: list[tuple[int, ...]] = field(default_factory=list)
    name: str = "irb"

    @property
    def best(self) -> int | None:
        """Index of the max-mIoU iteration; earliest wins ties."""
        if not self.iterations:
            return None
        mious = [it.report.miou for it in self.iterations]
        return int(np.argmax(mious))

    def record(self, allocation: BlendAllocation, report: IoUReport, checkpoint: str | None) -> None:
        self.iterations.append(IrbIteration(allocation, report, checkpoint))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy.to_json(),
            "class_set": self.class_set.to_json(),
            "iterations": [it.to_json() for it in self.iterations],
            "rankings_seen": [list(r) for r in self.rankings_seen],
            "best": self.best,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "IrbRunState":
        return cls(
            policy=BlendPolicy.from_json(d["policy"]),
            class_set=ClassSet.from_json(d["class_set"]),
            iterations=[IrbIteration.from_json(it) for it in d["iterations"]],
            rankings_seen=[tuple(r) for r in d["rankings_seen"]],
            name=d.get("name", "irb"),
        )

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IrbRunState":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# (trainset, eval_set, iteration index, work dir) -> (checkpoint reference, report)
TrainAndEvaluate = Callable[[DatasetManifest, DatasetManifest, int, Path], "tuple[str | None, IoUReport]"]


class ReferenceTrainer:
    """Trains the reference model from scratch each round and evaluates it."""

    def __init__(self, config):
        self.config = config

    def __call__(self, trainset, eval_set, iteration, work_dir):
        from .trainer import evaluate_model, train_model

        ckpt_dir = Path(work_dir) / f"iter{iteration:02d}" / "checkpoint"
        ckpt, _ = train_model(self.config, trainset, ckpt_dir)
        return str(ckpt_dir), evaluate_model(ckpt, eval_set)


def irb_loop(
    policy: BlendPolicy,
    source: DatasetManifest,
    target_pool: DatasetManifest,
    target_val: DatasetManifest,
    trainer: TrainAndEvaluate,
    work_dir: str | os.PathLike,
    *,
    stylize: bool = False,
    spectral: SpectralConfig | None = None,
    name: str = "irb",
    on_iteration: Callable[[IrbRunState], None] | None = None,
) -> IrbRunState:
    """Run blend rounds until a foreground ranking repeats or the cap is reached.

    ``trainer`` may be a :class:`ReferenceTrainer` or any callable with the same
    signature. The source set is restyled once, before the first round, since
    stylization does not depend on the allocation.
    """
    overlap = target_pool.sample_ids & target_val.sample_ids
    if overlap:
        raise ValidationError(f"validation set overlaps the blend pool: {sorted(overlap)[:5]}")
    pool_size = sum(len(b) for b in bucket_by_class(target_pool).values())
    if policy.total_budget > pool_size:
        raise CapacityError("any", policy.total_budget, pool_size)

    work_dir = Path(work_dir)
    if stylize:
        source = build_blended_trainset(
            source, [], stylize=True, style_pool=target_pool, spectral=spectral, out_dir=work_dir / "stylized"
        )

    state = IrbRunState(policy=policy, class_set=source.class_set, name=name)
    allocation = initial_allocation(policy, target_pool)
    for it in range(policy.max_iterations):
        try:
            blended = select_blend_images(target_pool, allocation, policy.seed)
            trainset = build_blended_trainset(source, blended)
            checkpoint, report = trainer(trainset, target_val, it, work_dir)
        except Exception as exc:
            raise IrbLoopError(it, state, exc) from exc
        state.record(allocation, report, checkpoint)
        ranking = tuple(report.ranking_worst_to_best)
        log.info("iteration %d [%s]: mIoU %.4f, ranking %s", it, allocation.label, report.miou, ranking)
        if on_iteration is not None:
            on_iteration(state)
        if ranking in state.rankings_seen:
            break
        state.rankings_seen.append(ranking)
        allocation = allocate_blend(policy, ranking, source.class_set)
    return state
