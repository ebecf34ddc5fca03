"""Image files and tab-separated manifests.

A manifest has one record per line, fields separated by tabs, ``#`` starting a
comment.  Synthesis sources list ``T-path<TAB>R-path``; paired data lists
``I-path<TAB>T-path<TAB>R-path``.  Relative paths resolve against the
manifest's directory.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .synth import TrainingTriplet

MANIFEST_NAME = "manifest.tsv"
TRIPLET_HEADER = "# mixed\ttransmission\treflection"
PAIR_HEADER = "# transmission\treflection"


class DataError(OSError):
    pass


def load_image(path: str | Path, size: int | None = None) -> np.ndarray:
    """Read an image as float64 ``H x W x 3`` in [0, 1], optionally resized square."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BICUBIC)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def read_manifest(path: str | Path, width: int | None = None) -> list[tuple[str, ...]]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].rstrip("\r\n")
        if not line.strip():
            continue
        fields = tuple(f.strip() for f in line.split("\t"))
        if width is not None and len(fields) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}")
        records.append(fields)
    return records


def write_manifest(path: str | Path, records, header: str = TRIPLET_HEADER) -> None:
    lines = [header] + ["\t".join(rec) for rec in records]
    Path(path).write_text("\n".join(lines) + "\n")


def _resolve(root: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else root / q


def manifest_path(directory: str | Path) -> Path:
    d = Path(directory)
    return d if d.is_file() else d / MANIFEST_NAME


def load_source_pairs(directory: str | Path, size: int | None = None):
    path = manifest_path(directory)
    root = path.parent
    return [(load_image(_resolve(root, t), size), load_image(_resolve(root, r), size))
            for t, r in read_manifest(path, 2)]


def iter_triplets(directory: str | Path, size: int | None = None, origin: str = "real"):
    """Yield ``(image_id, triplet or DataError)``; unreadable records are yielded as errors."""
    path = manifest_path(directory)
    root = path.parent
    for rec in read_manifest(path, 3):
        image_id = Path(rec[0]).stem
        try:
            i, t, r = (load_image(_resolve(root, p), size) for p in rec)
            yield image_id, TrainingTriplet(i, t, r, origin)
        except DataError as exc:
            yield image_id, exc


def load_triplets(directory: str | Path, size: int | None = None, origin: str = "real"):
    out = []
    for image_id, item in iter_triplets(directory, size, origin):
        if isinstance(item, DataError):
            raise item
        out.append(item)
    return out


def write_triplets(directory: str | Path, triplets, prefix: str = "") -> Path:
    d = Path(directory)
    for sub in ("I", "T", "R"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for k, trip in enumerate(triplets):
        name = f"{prefix}{k:05d}.png"
        for sub, img in (("I", trip.mixed), ("T", trip.transmission), ("R", trip.reflection)):
            save_image(img, d / sub / name)
        records.append((f"I/{name}", f"T/{name}", f"R/{name}"))
    path = d / MANIFEST_NAME
    write_manifest(path, records)
    return path
