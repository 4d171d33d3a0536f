"""File formats: PFM frames, PGM attention maps, CSV tables; all writes are atomic."""
from __future__ import annotations

import contextlib
import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np


@contextlib.contextmanager
def atomic_open(path, mode: str = "w"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": "", "encoding": "utf-8"})) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_bytes(path, data: bytes) -> None:
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def write_text(path, text: str) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(text)


def write_csv(path, header: list[str], rows) -> None:
    with atomic_open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# Portable float map: "PF" header, width height, negative scale for little-endian,
# rows stored bottom-to-top as float32 RGB.

def encode_pfm(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PFM frames are HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(img[::-1]).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    kind = buf.readline().strip()
    if kind != b"PF":
        raise ValueError("not a colour PFM file")
    w, h = (int(v) for v in buf.readline().split())
    scale = float(buf.readline())
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(buf.read(w * h * 12), dtype=dtype).reshape(h, w, 3)
    return arr[::-1].astype(np.float64)


def write_pfm(path, image: np.ndarray) -> None:
    write_bytes(path, encode_pfm(image))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def encode_pgm(values: np.ndarray) -> bytes:
    """8-bit binary PGM, scaled so the maximum maps to 255 (all-zero stays zero)."""
    v = np.asarray(values, dtype=np.float64)
    peak = v.max() if v.size else 0.0
    scaled = np.zeros_like(v) if peak <= 0 else np.clip(v / peak, 0, 1) * 255
    h, w = v.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.rint(scaled).astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
