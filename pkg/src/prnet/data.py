"""Image IO, triplet dataset layout and synthetic triplet generation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

logger = logging.getLogger(__name__)

TRIPLET_FILES = ("im1.png", "im2.png", "im3.png")
TRAINLIST = "tri_trainlist.txt"


def read_png(path) -> np.ndarray:
    """Read an image as (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, image: np.ndarray, text: dict[str, str] | None = None) -> None:
    """Write (H, W, 3) uint8 RGB; ``text`` entries become PNG tEXt chunks."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    info = None
    if text:
        info = PngImagePlugin.PngInfo()
        for k, v in text.items():
            info.add_text(k, v)
    Image.fromarray(image).save(path, format="PNG", pnginfo=info)


@dataclass
class TripletSample:
    frame1: np.ndarray
    target: np.ndarray
    frame2: np.ndarray
    name: str = ""

    def __post_init__(self):
        shapes = {self.frame1.shape, self.target.shape, self.frame2.shape}
        if len(shapes) != 1:
            raise ValueError(f"triplet {self.name!r} has mismatched frame sizes {sorted(shapes)}")


def list_sequences(root) -> list[str]:
    """Relative sequence paths under ``root``.

    Uses ``tri_trainlist.txt`` when present, otherwise every directory that
    holds an ``im1.png``, sorted.
    """
    root = Path(root)
    listing = root / TRAINLIST
    if listing.is_file():
        return [ln.strip() for ln in listing.read_text().splitlines() if ln.strip()]
    found = sorted(p.parent.relative_to(root).as_posix() for p in root.rglob(TRIPLET_FILES[0]))
    return [s for s in found if s != "."] or (["."] if (root / TRIPLET_FILES[0]).is_file() else [])


def load_triplet(root, sequence: str) -> TripletSample:
    d = Path(root) / sequence
    f1, gt, f2 = (read_png(d / f) for f in TRIPLET_FILES)
    return TripletSample(f1, gt, f2, name=sequence)


def load_dataset(root) -> tuple[list[TripletSample], int]:
    """Load every readable triplet; unreadable ones are skipped and counted."""
    samples, skipped = [], 0
    for seq in list_sequences(root):
        try:
            samples.append(load_triplet(root, seq))
        except (OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", seq, exc)
            skipped += 1
    return samples, skipped


def translating_triplets(count: int = 4, height: int = 64, width: int = 64, shift: int = 2,
                         seed: int = 0) -> list[TripletSample]:
    """Textured scenes with a bright rectangle moving ``shift`` px per half step.

    Frames are rendered at times -1, 0, +1; the target is the exact midpoint
    frame, so a perfect interpolator exists.
    """
    rng = np.random.default_rng(seed)
    out = []
    for n in range(count):
        # static smooth background: bilinearly upsampled coarse noise
        coarse = rng.uniform(40, 160, size=(height // 8 + 2, width // 8 + 2, 3))
        yy = np.linspace(0, coarse.shape[0] - 2, height)
        xx = np.linspace(0, coarse.shape[1] - 2, width)
        y0, x0 = yy.astype(int), xx.astype(int)
        ty, tx = (yy - y0)[:, None, None], (xx - x0)[None, :, None]
        bg = ((1 - ty) * (1 - tx) * coarse[y0][:, x0] + (1 - ty) * tx * coarse[y0][:, x0 + 1]
              + ty * (1 - tx) * coarse[y0 + 1][:, x0] + ty * tx * coarse[y0 + 1][:, x0 + 1])
        direction = rng.choice([-1, 1], size=2) * rng.integers(0, 2, size=2)
        if not direction.any():
            direction[1] = 1
        color = rng.uniform(200, 255, size=3)
        rh, rw = height // 4, width // 4
        cy = int(rng.integers(rh, height - 2 * rh))
        cx = int(rng.integers(rw, width - 2 * rw))
        frames = []
        for t in (-1, 0, 1):
            img = bg.copy()
            oy, ox = cy + t * shift * direction[0], cx + t * shift * direction[1]
            img[oy:oy + rh, ox:ox + rw] = color
            frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        out.append(TripletSample(frames[0], frames[1], frames[2], name=f"synthetic/{n:04d}"))
    return out


def write_triplets(root, samples: list[TripletSample], trainlist: bool = True) -> Path:
    """Store samples in the ``<root>/<sequence>/im{1,2,3}.png`` layout."""
    root = Path(root)
    for s in samples:
        for fname, img in zip(TRIPLET_FILES, (s.frame1, s.target, s.frame2)):
            write_png(root / s.name / fname, img)
    if trainlist:
        (root / TRAINLIST).write_text("".join(f"{s.name}\n" for s in samples))
    return root
