"""Binary netpbm image I/O: PGM (P5) grayscale and PPM (P6) RGB, maxval 255.

Pixel values map linearly between [0, 1] floats and 8-bit codes; clamping
to [0, 1] happens here and only here.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def save_image(path, x):
    """Write (H, W) as P5 or (H, W, 3) as P6, rounding to 8 bits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        magic = b"P5"
    elif x.ndim == 3 and x.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"expected (H, W) or (H, W, 3) image, got shape {x.shape}")
    codes = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = x.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(codes.tobytes())


def _header_tokens(data, count, path):
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError(f"{path}: truncated header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i : i + 1].isspace():
        raise FormatError(f"{path}: missing raster separator")
    return tokens, i + 1


def load_image(path):
    """Read a P5/P6 file to floats in [0, 1]; (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _header_tokens(data, 4, path)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}, expected P5 or P6")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header fields {tokens[1:4]}") from None
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad extents {w}x{h}")
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raster = data[offset : offset + need]
    if len(raster) != need:
        raise FormatError(
            f"{path}: raster truncated at byte {offset + len(raster)}, need {need} bytes"
        )
    codes = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return codes.reshape(h, w)
    return codes.reshape(h, w, 3)
