"""Binary PPM (P6) images, 8-bit RGB."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError


def write_ppm(path, image) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError("PPM writer expects an (H, W, 3) image")
    image = np.clip(image, 0, 255).astype(np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def _read_token(f) -> bytes:
    # Skips whitespace and '#' comment lines between header tokens.
    token = b""
    while True:
        ch = f.read(1)
        if not ch:
            break
        if ch.isspace():
            if token:
                break
            continue
        if ch == b"#":
            f.readline()
            continue
        token += ch
    return token


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_token(f) != b"P6":
            raise InvalidInputError(f"{path}: not a binary PPM")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise InvalidInputError(f"{path}: only maxval 255 supported, got {maxval}")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
        if data.size != w * h * 3:
            raise InvalidInputError(f"{path}: truncated PPM payload")
    return data.reshape(h, w, 3)
