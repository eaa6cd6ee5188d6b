"""Runtime and peak-memory harness over model variants and resolutions."""
from __future__ import annotations

import csv
import logging
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelConfig, build
from .pipeline import interpolate

logger = logging.getLogger(__name__)

BENCH_RESOLUTIONS = ((4096, 2160), (2048, 1080), (1280, 720), (640, 360), (320, 180))
ORDERING_VARIANTS = ("PRNet_1", "PRNet_2", "PRNet_3", "PRNet_4", "PRNet_4*")
INVERSION_MARGIN = 0.05
DEFAULT_BUDGET = 2 * 1024 ** 3
_PROBE = (64, 64)


@dataclass
class BenchRow:
    variant: str
    width: int
    height: int
    mean_s_per_frame: float | None = None
    peak_bytes: int | None = None
    times: list[float] = field(default_factory=list)
    status: str = "ok"

    @property
    def median(self) -> float | None:
        return statistics.median(self.times) if self.times else None


def _frames(width: int, height: int, seed: int):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 256, (height, width, 3), dtype=np.uint8),
            rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


def _peak_of(fn) -> int:
    tracemalloc.start()
    try:
        fn()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def _padded_pixels(config: ModelConfig, width: int, height: int) -> int:
    m = config.size_multiple
    return (-(-width // m) * m) * (-(-height // m) * m)


def bench(configs: Sequence[ModelConfig], resolutions=BENCH_RESOLUTIONS, reps: int = 3,
          seed: int = 0, warmup: int = 1, memory_budget: int = DEFAULT_BUDGET) -> list[BenchRow]:
    """Time ``interpolate`` per (variant, resolution) after ``warmup`` untimed runs.

    Peak memory is the tracemalloc high-water mark of one untimed run. A
    resolution whose extrapolated peak (linear in pixel count from a small
    probe) exceeds ``memory_budget`` bytes is emitted as ``skipped: budget``.
    """
    if reps < 3:
        raise ValueError(f"reps must be >= 3, got {reps}")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    rows = []
    for cfg in configs:
        model = build(cfg, seed=seed)
        pw, ph = _PROBE
        pm = cfg.size_multiple
        pw, ph = max(pw, pm), max(ph, pm)
        p1, p2 = _frames(pw, ph, seed)
        probe = _peak_of(lambda: interpolate(model, p1, p2))
        per_pixel = probe / _padded_pixels(cfg, pw, ph)
        for width, height in resolutions:
            if width < 8 or height < 8:
                raise ValueError(f"resolution {width}x{height} below 8x8")
            row = BenchRow(cfg.label, width, height)
            estimate = per_pixel * _padded_pixels(cfg, width, height)
            if estimate > memory_budget:
                row.status = "skipped: budget"
                logger.info("%s %dx%d skipped (estimated %.0f MB)", cfg.label, width, height, estimate / 2 ** 20)
                rows.append(row)
                continue
            f1, f2 = _frames(width, height, seed)
            row.peak_bytes = _peak_of(lambda: interpolate(model, f1, f2))
            for _ in range(warmup - 1):
                interpolate(model, f1, f2)
            for _ in range(reps):
                t0 = time.perf_counter()
                interpolate(model, f1, f2)
                row.times.append(time.perf_counter() - t0)
            row.mean_s_per_frame = float(np.mean(row.times))
            rows.append(row)
    return rows


def check_runtime_ordering(rows: Sequence[BenchRow], order=ORDERING_VARIANTS,
                           margin: float = INVERSION_MARGIN) -> dict:
    """Soft check that median runtime is non-decreasing along ``order``.

    Inversions within ``margin`` (relative) are warnings; larger ones are
    violations. Never raises.
    """
    warnings, violations = [], []
    by_res: dict[tuple[int, int], dict[str, BenchRow]] = {}
    for r in rows:
        if r.times:
            by_res.setdefault((r.width, r.height), {})[r.variant] = r
    for (w, h), found in by_res.items():
        present = [v for v in order if v in found]
        for a, b in zip(present, present[1:]):
            ta, tb = found[a].median, found[b].median
            if tb >= ta:
                continue
            msg = f"{w}x{h}: {b} median {tb:.4f}s < {a} median {ta:.4f}s"
            if tb >= ta * (1 - margin):
                warnings.append(msg)
            else:
                violations.append(msg)
    for m in warnings:
        logger.warning("runtime inversion within margin: %s", m)
    for m in violations:
        logger.warning("runtime inversion beyond margin: %s", m)
    return {"warnings": warnings, "violations": violations, "resolutions_checked": len(by_res)}


def write_csv(rows: Sequence[BenchRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "width", "height", "mean_s_per_frame", "peak_bytes"])
        for r in rows:
            if r.status != "ok":
                w.writerow([r.variant, r.width, r.height, r.status, r.status])
            else:
                w.writerow([r.variant, r.width, r.height, f"{r.mean_s_per_frame:.6f}", r.peak_bytes])
    return path


def to_markdown(rows: Sequence[BenchRow]) -> str:
    """Resolution-major table with memory and speed lines per resolution."""
    variants = list(dict.fromkeys(r.variant for r in rows))
    resolutions = list(dict.fromkeys((r.width, r.height) for r in rows))
    cell = {(r.variant, r.width, r.height): r for r in rows}
    lines = ["| Video Resolution | Runtime Information | " + " | ".join(variants) + " |",
             "|---|---|" + "---|" * len(variants)]
    for w, h in resolutions:
        mem, speed = [], []
        for v in variants:
            r = cell.get((v, w, h))
            if r is None or r.status != "ok":
                text = "n/a" if r is None else r.status
                mem.append(text)
                speed.append(text)
            else:
                mem.append(f"{r.peak_bytes / 2 ** 20:.1f}")
                speed.append(f"{r.mean_s_per_frame:.4g}")
        lines.append(f"| {w}x{h} | Peak Memory (MB) | " + " | ".join(mem) + " |")
        lines.append("| | Average Interpolation Speed (s/f) | " + " | ".join(speed) + " |")
    return "\n".join(lines) + "\n"
