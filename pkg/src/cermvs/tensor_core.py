"""Dense array kernels shared by every pipeline stage.

All tensors are float32 numpy arrays in row-major layout. Only the kernels
needed by the pipeline live here: bilinear sampling (with its analytic
gradient, used to verify differentiability), average pooling along the last
axis (cost-volume pyramids), and a plain cross-correlation conv2d forward
pass (feature encoders and the recurrent update operator). There is no
autodiff graph; gradients exist only where a caller needs them.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def as_float32(arr, name: str = "array") -> np.ndarray:
    """Return a C-contiguous float32 view/copy of ``arr``."""
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    return out


def bilinear_sample_2d(src, coords) -> np.ndarray:
    """Sample a (C, H, W) map at continuous pixel coordinates.

    Args:
        src: Source tensor of shape (C, H, W).
        coords: Sequence of K (x, y) pixel coordinates; x runs along the
            width axis, y along the height axis.

    Returns:
        (C, K) float32 array. Each column is the bilinear interpolation of
        the four pixels surrounding the coordinate. Coordinates outside
        [0, W-1] x [0, H-1] produce an all-zero column (zero padding).

    Raises:
        InvalidInputError: if any coordinate is non-finite or src is not
            a 3-axis tensor.
    """
    src = as_float32(src, "src")
    if src.ndim != 3:
        raise InvalidInputError(f"src must have 3 axes, got {src.ndim}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if not np.isfinite(coords).all():
        raise InvalidInputError("sample coordinates must be finite")

    _, h, w = src.shape
    x, y = coords[:, 0], coords[:, 1]
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)

    x0f = np.clip(np.floor(x), 0.0, w - 1.0)
    y0f = np.clip(np.floor(y), 0.0, h - 1.0)
    x0 = x0f.astype(np.intp)
    y0 = y0f.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    # Fractional offsets are 0 where the coordinate was clipped out of range,
    # so invalid columns never index past the image before they are zeroed.
    wx = np.where(valid, x - x0f, 0.0)
    wy = np.where(valid, y - y0f, 0.0)

    out = (
        src[:, y0, x0] * ((1.0 - wx) * (1.0 - wy))
        + src[:, y0, x1] * (wx * (1.0 - wy))
        + src[:, y1, x0] * ((1.0 - wx) * wy)
        + src[:, y1, x1] * (wx * wy)
    )
    out *= valid
    return out.astype(np.float32)


def bilinear_sample_grad(src, coords, upstream):
    """Analytic gradients of :func:`bilinear_sample_2d`.

    Args:
        src: Source tensor (C, H, W).
        coords: K (x, y) coordinates, as for the forward pass.
        upstream: (C, K) gradient of some scalar with respect to the
            sampling output.

    Returns:
        Tuple ``(d_src, d_coords)`` where ``d_src`` has the shape of src and
        ``d_coords`` is (K, 2) float32 holding (d/dx, d/dy). Out-of-range
        coordinates contribute zero to both.

    Raises:
        InvalidInputError: on shape mismatch between upstream and the
            forward output, or non-finite coordinates.
    """
    src = as_float32(src, "src")
    if src.ndim != 3:
        raise InvalidInputError(f"src must have 3 axes, got {src.ndim}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if not np.isfinite(coords).all():
        raise InvalidInputError("sample coordinates must be finite")
    c, h, w = src.shape
    k = coords.shape[0]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (c, k):
        raise InvalidInputError(
            f"upstream shape {upstream.shape} does not match sample output ({c}, {k})"
        )

    x, y = coords[:, 0], coords[:, 1]
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    up = upstream * valid

    x0f = np.clip(np.floor(x), 0.0, w - 1.0)
    y0f = np.clip(np.floor(y), 0.0, h - 1.0)
    x0 = x0f.astype(np.intp)
    y0 = y0f.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = np.where(valid, x - x0f, 0.0)
    wy = np.where(valid, y - y0f, 0.0)

    v00 = src[:, y0, x0].astype(np.float64)
    v01 = src[:, y0, x1].astype(np.float64)
    v10 = src[:, y1, x0].astype(np.float64)
    v11 = src[:, y1, x1].astype(np.float64)

    # d out / dx and d out / dy per channel, then contracted with upstream.
    dx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10)
    dy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01)
    d_coords = np.stack([(up * dx).sum(axis=0), (up * dy).sum(axis=0)], axis=1)

    d_src = np.zeros((c, h, w), dtype=np.float64)
    np.add.at(d_src, (slice(None), y0, x0), up * ((1.0 - wx) * (1.0 - wy)))
    np.add.at(d_src, (slice(None), y0, x1), up * (wx * (1.0 - wy)))
    np.add.at(d_src, (slice(None), y1, x0), up * ((1.0 - wx) * wy))
    np.add.at(d_src, (slice(None), y1, x1), up * (wx * wy))
    return d_src.astype(np.float32), d_coords.astype(np.float32)


def avg_pool_last_axis(src) -> np.ndarray:
    """Average adjacent pairs along the last axis, halving its extent."""
    src = as_float32(src, "src")
    d = src.shape[-1]
    if d % 2 != 0:
        raise InvalidInputError(f"last extent must be even for 2x pooling, got {d}")
    paired = src.reshape(src.shape[:-1] + (d // 2, 2))
    return ((paired[..., 0].astype(np.float64) + paired[..., 1]) * 0.5).astype(
        np.float32
    )


def im2col(inp: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (Cin, H, W) into patch columns of shape (H'*W', Cin*kh*kw)."""
    cin, h, w = inp.shape
    if padding:
        inp = np.pad(inp, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(inp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (Cin, H', W', kh, kw)
    _, ho, wo, _, _ = win.shape
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw)
    return np.ascontiguousarray(cols)


def conv_out_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def conv2d_forward(inp, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation convolution with zero padding.

    Args:
        inp: Input tensor (Cin, H, W).
        weights: Kernel tensor (Cout, Cin, kh, kw) with odd kh and kw.
        bias: (Cout,) bias added to every output pixel.
        stride: Spatial stride.
        padding: Zero padding applied on every border.

    Returns:
        (Cout, H', W') float32 output with
        H' = floor((H + 2*padding - kh)/stride) + 1.
    """
    inp = as_float32(inp, "input")
    weights = as_float32(weights, "weights")
    bias = as_float32(bias, "bias")
    if inp.ndim != 3 or weights.ndim != 4:
        raise InvalidInputError("conv2d expects input (Cin,H,W) and weights (Cout,Cin,kh,kw)")
    cout, cin, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidInputError(f"kernel extents must be odd, got {kh}x{kw}")
    if inp.shape[0] != cin:
        raise InvalidInputError(
            f"input has {inp.shape[0]} channels but weights expect {cin}"
        )
    if bias.shape != (cout,):
        raise InvalidInputError(f"bias must have shape ({cout},), got {bias.shape}")
    ho = conv_out_extent(inp.shape[1], kh, stride, padding)
    wo = conv_out_extent(inp.shape[2], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise InvalidInputError("output would be empty; reduce kernel/stride or pad more")

    cols = im2col(inp, kh, kw, stride, padding)
    out = cols @ weights.reshape(cout, cin * kh * kw).T  # (H'*W', Cout)
    out += bias
    return out.T.reshape(cout, ho, wo).copy()
