"""Command-line entry point: ``irbseg <command> --config run.json``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

The run configuration is one JSON document; every section is optional except
where a command needs it::

    {
      "seed": 0,
      "out_dir": "runs/demo",
      "scene": {"image_size": [64, 64]},
      "generate": {"n_sim": 200, "n_real": 140, "real_splits": [0.7143, 0.1428, 0.1429]},
      "blend": {"total_budget": 40, "max_iterations": 7},
      "spectral": {"beta": 0.05},
      "stylize": true,
      "trainer": {"epochs": 15, "base_width": 8},
      "data": {"source": "...", "target_pool": "...", "target_val": "...",
               "train": "...", "eval": "...", "checkpoint": "...", "run_logs": ["..."]}
    }

Relative paths resolve against the config file's directory. Sub-sections
inherit the global seed unless they set their own; ``--seed`` overrides both.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .datamodel import load_manifest, split_dataset, write_manifest
from .irb import BlendPolicy, IrbRunState, ReferenceTrainer, irb_loop
from .report import emit_report
from .styletransfer import SpectralConfig, batch_stylize
from .synthgen import SceneSpec, generate_domain_pair
from .trainer import TrainerConfig, evaluate_model, train_model

log = logging.getLogger("irbseg")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: Path = Path("runs/default")
    scene: SceneSpec = field(default_factory=SceneSpec)
    n_sim: int = 200
    n_real: int = 140
    real_splits: tuple[float, float, float] = (100 / 140, 20 / 140, 20 / 140)
    blend: BlendPolicy = field(default_factory=BlendPolicy)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    stylize: bool = True
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: dict[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def path(self, key: str, required: bool = True, must_exist: bool = True) -> Path | None:
        value = self.data.get(key)
        if value is None:
            if required:
                raise ConfigError(f"data.{key}", "required by this command")
            return None
        p = Path(value)
        p = p if p.is_absolute() else self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"data.{key}", f"path does not exist: {p}")
        return p


def _section(doc: dict, name: str, cls, seed: int, override_seed: bool):
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    raw = dict(raw)
    if "seed" in known and (override_seed or "seed" not in raw):
        raw["seed"] = seed
    try:
        return cls.from_json(raw) if hasattr(cls, "from_json") else cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def load_config(path: str | Path, overrides: argparse.Namespace | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")

    o = overrides or argparse.Namespace()
    cli_seed = getattr(o, "seed", None)
    seed = cli_seed if cli_seed is not None else doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    forced = cli_seed is not None
    base_dir = path.resolve().parent

    gen = doc.get("generate", {})
    cfg = RunConfig(
        seed=seed,
        scene=_section(doc, "scene", SceneSpec, seed, forced),
        blend=_section(doc, "blend", BlendPolicy, seed, forced),
        spectral=_section(doc, "spectral", SpectralConfig, seed, forced),
        trainer=_section(doc, "trainer", TrainerConfig, seed, forced),
        stylize=bool(doc.get("stylize", True)),
        data=dict(doc.get("data", {})),
        base_dir=base_dir,
    )
    try:
        cfg.n_sim = int(gen.get("n_sim", cfg.n_sim))
        cfg.n_real = int(gen.get("n_real", cfg.n_real))
        cfg.real_splits = tuple(float(f) for f in gen.get("real_splits", cfg.real_splits))
    except (TypeError, ValueError) as exc:
        raise ConfigError("generate", str(exc)) from exc
    if cfg.n_sim <= 0 or cfg.n_real <= 0:
        raise ConfigError("generate.n_sim", "sample counts must be positive")
    if len(cfg.real_splits) != 3 or abs(sum(cfg.real_splits) - 1) > 1e-3 or min(cfg.real_splits) < 0:
        raise ConfigError("generate.real_splits", "need three non-negative fractions summing to 1")
    total = sum(cfg.real_splits)
    cfg.real_splits = tuple(f / total for f in cfg.real_splits)

    out = getattr(o, "out", None) or doc.get("out_dir", "runs/default")
    cfg.out_dir = Path(out) if Path(out).is_absolute() or getattr(o, "out", None) else base_dir / out
    if getattr(o, "cpu_only", False):
        cfg.trainer = replace(cfg.trainer, device_hint="cpu-only")
    if getattr(o, "max_iterations", None) is not None:
        try:
            cfg.blend = replace(cfg.blend, max_iterations=o.max_iterations)
        except ValueError as exc:
            raise ConfigError("--max-iterations", str(exc)) from exc
    if getattr(o, "beta", None) is not None:
        try:
            cfg.spectral = replace(cfg.spectral, beta=o.beta)
        except ValueError as exc:
            raise ConfigError("--beta", str(exc)) from exc
    return cfg


def cmd_generate(cfg: RunConfig) -> dict[str, Path]:
    """Generate the sim/real pair and split real into pool/val/test manifests."""
    root = cfg.out_dir / "data"
    _, real = generate_domain_pair(cfg.scene, cfg.n_sim, cfg.n_real, root)
    paths = {"source": root / "sim" / "manifest.json"}
    for part in split_dataset(real, cfg.real_splits, cfg.seed):
        key = {"train": "target_pool", "val": "target_val", "test": "target_test"}[part.split.value]
        name = {"train": "pool", "val": "val", "test": "test"}[part.split.value]
        paths[key] = write_manifest(replace(part, name=f"{real.name}-{name}"), root / "real" / f"{name}.json")
    log.info("wrote datasets under %s", root)
    return paths


def cmd_stylize(cfg: RunConfig) -> Path:
    source = load_manifest(cfg.path("source"))
    pool = load_manifest(cfg.path("target_pool"))
    out = cfg.out_dir / "stylized"
    batch_stylize(source, pool, cfg.spectral, out)
    return out / "manifest.json"


def cmd_train(cfg: RunConfig) -> Path:
    trainset = load_manifest(cfg.path("train", required=False) or cfg.path("source"))
    ckpt_dir = cfg.out_dir / "checkpoint"
    train_model(cfg.trainer, trainset, ckpt_dir)
    return ckpt_dir


def cmd_evaluate(cfg: RunConfig) -> Path:
    eval_set = load_manifest(cfg.path("eval", required=False) or cfg.path("target_val"))
    report = evaluate_model(cfg.path("checkpoint"), eval_set)
    out = cfg.out_dir / "evaluation.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    log.info("mIoU %.4f  mAcc %.4f", report.miou, report.macc)
    return out


def cmd_irb_run(cfg: RunConfig, trainer=None, generate: bool = False) -> dict[str, Path]:
    """Full IRB loop; writes ``irb_run.json`` and the report files."""
    if generate:
        cfg.data.update({k: str(v) for k, v in cmd_generate(cfg).items()})
    source = load_manifest(cfg.path("source"))
    pool = load_manifest(cfg.path("target_pool"))
    val = load_manifest(cfg.path("target_val"))
    work = cfg.out_dir / "irb"
    log_path = cfg.out_dir / "irb_run.json"
    state = irb_loop(
        cfg.blend,
        source,
        pool,
        val,
        trainer or ReferenceTrainer(cfg.trainer),
        work,
        stylize=cfg.stylize,
        spectral=cfg.spectral,
        name=cfg.data.get("run_name", "irb"),
        on_iteration=lambda s: s.save(log_path),
    )
    state.save(log_path)
    paths = emit_report([state], cfg.out_dir)
    paths["run_log"] = log_path
    return paths


def cmd_report(cfg: RunConfig, run_logs: list[str] | None = None) -> dict[str, Path]:
    logs = run_logs or cfg.data.get("run_logs")
    if not logs:
        raise ConfigError("data.run_logs", "no run logs given")
    resolved = []
    for i, p in enumerate(logs):
        p = Path(p) if Path(p).is_absolute() else cfg.base_dir / p
        if not p.is_file():
            raise ConfigError(f"data.run_logs[{i}]", f"path does not exist: {p}")
        resolved.append(IrbRunState.load(p))
    return emit_report(resolved, cfg.out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irbseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--cpu-only", action="store_true", help="force deterministic CPU execution")
    common.add_argument("--max-iterations", type=int, help="cap on IRB rounds")
    common.add_argument("--beta", type=float, help="spectral window size")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, help_ in [
        ("generate", "generate a synthetic sim/real domain pair"),
        ("stylize", "restyle the source set toward the target pool"),
        ("train", "train the reference model"),
        ("evaluate", "evaluate a checkpoint"),
        ("irb-run", "run the IoU-ranking blend loop"),
        ("report", "emit tables and plots from run logs"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "irb-run":
            p.add_argument("--generate", action="store_true", help="generate datasets first")
        if name == "report":
            p.add_argument("run_logs", nargs="*", help="run log JSON files (default: data.run_logs)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args.config, args)
        if args.command == "generate":
            result = cmd_generate(cfg)
        elif args.command == "stylize":
            result = cmd_stylize(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "evaluate":
            result = cmd_evaluate(cfg)
        elif args.command == "irb-run":
            result = cmd_irb_run(cfg, generate=args.generate)
        else:
            result = cmd_report(cfg, args.run_logs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        log.debug("failure", exc_info=True)
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if isinstance(result, dict):
        for key, value in result.items():
            print(f"{key}: {value}")
    else:
        print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
