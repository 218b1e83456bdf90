"""Traverse loading and netpbm (PGM/PPM) image I/O."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fileio import atomic_write

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class DataError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers from a netpbm header, skipping comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated netpbm header")
        out.append(int(data[start:pos]))
    return out, pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode P2/P3/P5/P6 into a float32 ``(C, H, W)`` array scaled to [0, 1]."""
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise DataError(f"unsupported netpbm magic {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    (w, h, maxval), pos = _tokens(data, 3, 2)
    if not 0 < maxval < 65536:
        raise DataError(f"bad maxval {maxval}")
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        values, _ = _tokens(data, count, pos)
        arr = np.array(values, dtype=np.float64)
    else:
        pos += 1  # single whitespace byte before the raster
        dtype = ">u2" if maxval > 255 else "u1"
        size = np.dtype(dtype).itemsize * count
        if len(data) - pos < size:
            raise DataError("truncated netpbm raster")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    img = arr.reshape(h, w, channels).transpose(2, 0, 1) / maxval
    return img.astype(np.float32)


def encode_pnm(img: np.ndarray, maxval: int = 255) -> bytes:
    """Binary P5/P6 encoding of a ``(C, H, W)`` array with values in [0, 1]."""
    img = np.asarray(img)
    c, h, w = img.shape
    if c not in (1, 3):
        raise DataError(f"can only encode 1 or 3 channels, got {c}")
    q = np.clip(np.round(img.astype(np.float64) * maxval), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    raster = q.transpose(1, 2, 0).astype(dtype).tobytes()
    magic = "P6" if c == 3 else "P5"
    return f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii") + raster


def read_image(path) -> np.ndarray:
    try:
        return decode_pnm(Path(path).read_bytes())
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}") from None


@dataclass(frozen=True)
class Traverse:
    """One pass through an environment under one condition; frame i aligns with frame i of its partner."""

    images: tuple[np.ndarray, ...]
    condition: str = ""
    paths: tuple[str, ...] = ()

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]

    def subset(self, start: int, stop: int | None = None) -> "Traverse":
        paths = self.paths[start:stop] if self.paths else ()
        return Traverse(self.images[start:stop], self.condition, paths)


_INDEX = re.compile(r"(\d+)")


def _frame_index(path: Path) -> int:
    m = _INDEX.search(path.stem)
    if m is None:
        raise DataError(f"{path.name}: file name carries no frame index")
    return int(m.group(1))


def load_traverse(directory, manifest=None, condition: str = "",
                  mean: Sequence[float] | None = None) -> Traverse:
    """Load an ordered traverse from zero-padded PGM/PPM frames or a manifest of paths.

    ``mean``, if given, is subtracted per channel after scaling to [0, 1].
    """
    directory = Path(directory)
    if manifest is not None:
        lines = [l.strip() for l in Path(manifest).read_text().splitlines()]
        paths = [Path(l) if Path(l).is_absolute() else directory / l for l in lines if l and not l.startswith("#")]
    else:
        if not directory.is_dir():
            raise DataError(f"{directory} is not a directory")
        paths = sorted((p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_frame_index)
        idx = [_frame_index(p) for p in paths]
        for prev, cur, p in zip(idx, idx[1:], paths[1:]):
            if cur != prev + 1:
                raise DataError(f"frame index gap before {p.name}: {prev} -> {cur}")
    if not paths:
        raise DataError(f"no images found in {directory}")
    images = []
    for p in paths:
        img = read_image(p)
        if mean is not None:
            m = np.asarray(mean, dtype=np.float32).reshape(-1, 1, 1)
            if m.shape[0] != img.shape[0]:
                raise DataError(f"mean has {m.shape[0]} channels, image {p.name} has {img.shape[0]}")
            img = (img - m).astype(np.float32)
        img.setflags(write=False)
        images.append(img)
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"traverse images differ in shape: {sorted(shapes)}")
    return Traverse(tuple(images), condition or directory.name, tuple(str(p) for p in paths))


def save_traverse(traverse: Traverse, directory, maxval: int = 255) -> Traverse:
    """Write frames as ``000000.pgm`` (or ``.ppm``) and return the traverse with its paths set."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(len(traverse) - 1)))
    paths = []
    for i, img in enumerate(traverse.images):
        suffix = ".ppm" if img.shape[0] == 3 else ".pgm"
        p = directory / f"{i:0{width}d}{suffix}"
        atomic_write(p, encode_pnm(img, maxval))
        paths.append(str(p))
    return Traverse(traverse.images, traverse.condition, tuple(paths))


def check_aligned(ref: Traverse, query: Traverse) -> None:
    if len(ref) != len(query):
        raise DataError(f"aligned traverses differ in length: {len(ref)} vs {len(query)}")
