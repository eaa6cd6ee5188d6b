"""PSNR / SSIM and directory evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .data import load_dataset
from .model import Model

logger = logging.getLogger(__name__)

PEAK = 255.0
K1, K2 = 0.01, 0.03
WINDOW = 11
SIGMA = 1.5
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB over all pixels and channels; ``math.inf`` for identical inputs."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma on the 0..255 scale."""
    image = np.asarray(image, dtype=np.float64)
    return image if image.ndim == 2 else image @ LUMA


def _ssim_plane(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    filt = lambda z: convolve2d(z, win, mode="valid")  # noqa: E731  (window is symmetric)
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, channels: str = "luma") -> float:
    """Gaussian-window SSIM, mean over valid window positions.

    ``channels="luma"`` scores the BT.601 Y plane; ``"rgb"`` averages the
    three per-channel scores.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < WINDOW:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than {WINDOW}x{WINDOW} window")
    win = gaussian_window()
    if channels == "luma":
        return _ssim_plane(luma(a), luma(b), win)
    if channels == "rgb":
        a, b = a.astype(np.float64), b.astype(np.float64)
        return float(np.mean([_ssim_plane(a[..., c], b[..., c], win) for c in range(a.shape[2])]))
    raise ValueError(f"unknown channels mode {channels!r}")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    skipped: int = 0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r["psnr_db"] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r["ssim"] for r in self.rows]))

    def write(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.csv`` and ``<prefix>.json``."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = prefix.with_suffix(".csv"), prefix.with_suffix(".json")
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "frame_index", "psnr_db", "ssim"])
            for r in self.rows:
                w.writerow([r["sequence"], r["frame_index"], _fmt_db(r["psnr_db"]), repr(r["ssim"])])
        payload = {
            "rows": [{**r, "psnr_db": _fmt_db(r["psnr_db"])} for r in self.rows],
            "mean_psnr_db": _fmt_db(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "skipped": self.skipped,
        }
        json_path.write_text(json.dumps(payload, indent=2))
        return csv_path, json_path


def _fmt_db(v: float):
    return "inf" if math.isinf(v) else v


def evaluate(model: Model, dataset_dir, report_prefix=None, ssim_channels: str = "luma") -> MetricReport:
    """Interpolate im2 from im1/im3 for every triplet and score it."""
    from .pipeline import interpolate

    samples, skipped = load_dataset(dataset_dir)
    if not samples:
        raise ValueError(f"no readable triplets under {dataset_dir}")
    report = MetricReport(skipped=skipped)
    for idx, s in enumerate(sorted(samples, key=lambda s: s.name)):
        out = interpolate(model, s.frame1, s.frame2)
        report.rows.append({"sequence": s.name, "frame_index": idx, "psnr_db": psnr(out, s.target),
                            "ssim": ssim(out, s.target, ssim_channels)})
    if report_prefix is not None:
        report.write(report_prefix)
    return report
