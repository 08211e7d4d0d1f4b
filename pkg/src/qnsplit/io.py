"""Grayscale PGM image I/O (plain P2 and binary P5, maxval 255)."""

from __future__ import annotations

import numpy as np


class PgmError(IOError):
    """Malformed or unsupported PGM content."""


def _tokens(data: bytes):
    # header tokens with '#' comments stripped
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c.isspace():
            i += 1
            continue
        if c == b"#":
            j = data.find(b"\n", i)
            i = n if j < 0 else j + 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        yield data[i:j], j
        i = j


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM file as a float array of shape (rows, cols)."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        if magic not in (b"P2", b"P5"):
            raise PgmError(f"unsupported PGM magic {magic!r} in {path}")
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError) as exc:
        raise PgmError(f"malformed PGM header in {path}") from exc
    if maxval <= 0 or maxval > 255:
        raise PgmError(f"unsupported maxval {maxval} in {path} (need 1..255)")
    count = width * height
    if magic == b"P5":
        raw = data[end + 1:end + 1 + count]
        if len(raw) < count:
            raise PgmError(f"truncated P5 payload in {path}")
        img = np.frombuffer(raw, dtype=np.uint8, count=count).astype(float)
    else:
        values = data[end:].split()
        if len(values) < count:
            raise PgmError(f"truncated P2 payload in {path}")
        img = np.array([int(v) for v in values[:count]], dtype=float)
    return img.reshape(height, width)


def write_pgm(path, img, binary: bool = True) -> None:
    """Write an image (values clipped to 0..255) as P5 (default) or P2."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise PgmError("image must be 2-D")
    q = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = q.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(q.tobytes())
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"P2\n{w} {h}\n255\n")
            for row in q:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")
