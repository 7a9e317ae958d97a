import re

import numpy as np
import pytest

from irbseg.datamodel import (
    DEFAULT_CLASSES,
    DatasetManifest,
    Domain,
    SampleRecord,
    Split,
    mask_histogram,
    write_image,
    write_manifest,
    write_mask,
)


def write_samples(root, masks, domain=Domain.TARGET_REAL, prefix="s", images=None, seed=0):
    """Write image/mask PNG pairs under ``root`` and return their records."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i, mask in enumerate(masks):
        mask = np.asarray(mask, dtype=np.uint8)
        sid = f"{prefix}-{i:03d}"
        image = images[i] if images is not None else rng.integers(0, 256, size=mask.shape + (3,), dtype=np.uint8)
        write_image(root / "images" / f"{sid}.png", image)
        write_mask(root / "masks" / f"{sid}.png", mask)
        records.append(
            SampleRecord(
                sid,
                (root / "images" / f"{sid}.png").resolve(),
                (root / "masks" / f"{sid}.png").resolve(),
                domain,
                mask_histogram(mask, DEFAULT_CLASSES),
            )
        )
    return records


@pytest.fixture
def make_manifest(tmp_path):
    def _make(masks, domain=Domain.TARGET_REAL, name="toy", prefix="s", images=None, write=True, split=Split.TRAIN):
        root = tmp_path / name
        records = write_samples(root, masks, domain, prefix, images)
        manifest = DatasetManifest(name, domain, DEFAULT_CLASSES, tuple(records), split)
        if write:
            write_manifest(manifest, root / "manifest.json")
        return manifest

    return _make


def dominant_masks(classes, size=8):
    """One mask per entry; class k fills a k-dependent block so it dominates."""
    masks = []
    for k in classes:
        m = np.zeros((size, size), np.uint8)
        m[: size // 2, : size // 2] = k
        masks.append(m)
    return masks


# Acceptance criteria report: one PASS/FAIL line per criterion in the terminal summary.
_ACCEPTANCE: dict[str, bool] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    criterion = getattr(getattr(item, "function", None), "criterion", None)
    if criterion is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        ok = report.passed
        _ACCEPTANCE[criterion] = _ACCEPTANCE.get(criterion, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE, key=lambda c: (int(re.match(r"\d+", c).group()), c)):
        terminalreporter.write_line(f"{'PASS' if _ACCEPTANCE[criterion] else 'FAIL'}  {criterion}")
