"""Binary PGM (P5) / PPM (P6) image and mask files.

Pixel value v maps to the real v / 255.  Masks are PGM files restricted to
{0, 255}; anything else is rejected.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "quantize",
    "write_pgm",
    "read_pgm",
    "write_ppm",
    "read_ppm",
    "write_mask",
    "read_mask",
]


def quantize(image) -> np.ndarray:
    """Snap [0, 1] reals to the 8-bit grid used by the image files."""
    a = np.asarray(image, dtype=np.float64)
    return np.round(a * 255.0) / 255.0


def _to_bytes(image, channels: int) -> tuple[np.ndarray, int, int]:
    a = np.asarray(image, dtype=np.float64)
    if channels == 1 and a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    expected_ndim = 2 if channels == 1 else 3
    if a.ndim != expected_ndim or (channels == 3 and a.shape[2] != 3):
        raise ValueError(f"expected {channels}-channel image, got shape {a.shape}")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    data = np.round(a * 255.0).astype(np.uint8)
    return data, a.shape[0], a.shape[1]


def _read_header(fh, magic: bytes):
    got = fh.read(2)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    width, height, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    return width, height


def write_pgm(path, image) -> None:
    data, h, w = _to_bytes(image, channels=1)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated pixel data")
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_ppm(path, image) -> None:
    data, h, w = _to_bytes(image, channels=3)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError("truncated pixel data")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_mask(path, mask) -> None:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be HxW, got shape {m.shape}")
    data = np.where(m.astype(bool), 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated mask data")
    bad = np.setdiff1d(np.unique(data), [0, 255])
    if bad.size:
        raise ValueError(f"mask contains values other than 0/255: {bad.tolist()}")
    return (data.reshape(h, w) == 255)
