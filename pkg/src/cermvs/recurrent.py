"""Recurrent disparity refinement: encoders, conv-GRU, decoders, driver.

The update operator iterates a disparity field at feature resolution. Every
iteration looks correlation features up from the current cost-volume stack,
encodes them together with a shift-invariant disparity neighborhood feature
and the reference-view context, and feeds a 3x3 convolutional GRU. A linear
decoder turns the hidden state into a disparity increment; the GRU weights
are shared by all iterations while each cascade stage owns its decoder.

There is no upsampling layer: the network output stays at feature
resolution (1/4 of the image on each axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost_volume import build_stage1_volume, build_stage2_volume, fuse_views, lookup
from .errors import InvalidInputError, NumericalFailureError
from .fileio.tnsr import read_tnsr, write_tnsr
from .tensor_core import conv2d_forward

DOWNSIZE = 4  # fixed by the two stride-2 stages of the encoders

_NORM_EPS = 1e-5


@dataclass(frozen=True)
class Hyperparams:
    """Scalar checkpoint hyperparameters carried by the weight manifest."""

    t1: int = 8
    t2: int = 8
    hidden_dim: int = 128
    feature_dim: int = 64
    levels: int = 3
    radius: int = 11
    d_max: float = 0.0025
    coarse_increment: float = 0.0025 / 64
    fine_increment: float = 0.0025 / 320

    @property
    def coarse_bins(self) -> int:
        return round(self.d_max / self.coarse_increment)

    @property
    def total_iterations(self) -> int:
        return self.t1 + self.t2


@dataclass
class WeightSet:
    """All network parameters plus the hyperparameters they were built for."""

    params: dict
    hyper: Hyperparams

    def require(self, name: str) -> np.ndarray:
        try:
            return self.params[name]
        except KeyError:
            raise InvalidInputError(f"checkpoint is missing parameter {name!r}") from None


@dataclass
class UpdateState:
    """GRU hidden state, reference context, disparity, and iteration index."""

    h: np.ndarray
    ctx: np.ndarray
    d: np.ndarray
    t: int = 0


@dataclass
class RunRecord:
    """Per-iteration trace kept when fitting: predictions, hidden states,
    and the mask of pixels where the non-negativity clamp stayed inactive."""

    preds: list = field(default_factory=list)
    hiddens: list = field(default_factory=list)
    opens: list = field(default_factory=list)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _check_finite(arr, layer: str):
    if not np.isfinite(arr).all():
        raise NumericalFailureError(f"non-finite activation in {layer}")
    return arr


def _instance_norm(x, gamma, beta):
    mean = x.mean(axis=(1, 2), dtype=np.float64)[:, None, None]
    var = np.square(x.astype(np.float64) - mean).mean(axis=(1, 2))[:, None, None]
    out = (x - mean) / np.sqrt(var + _NORM_EPS)
    return (out * gamma[:, None, None] + beta[:, None, None]).astype(np.float32)


def _batch_norm(x, gamma, beta, mean, var):
    # Inference-time normalization with stored running statistics.
    scale = gamma / np.sqrt(var + _NORM_EPS)
    shift = beta - mean * scale
    return (x * scale[:, None, None] + shift[:, None, None]).astype(np.float32)


def _relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# encoders


def _conv(ws: WeightSet, name: str, x, stride=1, padding=1):
    return conv2d_forward(x, ws.require(f"{name}.w"), ws.require(f"{name}.b"), stride, padding)


def _norm(ws: WeightSet, name: str, x, kind: str):
    gamma = ws.require(f"{name}.gamma")
    beta = ws.require(f"{name}.beta")
    if kind == "instance":
        return _instance_norm(x, gamma, beta)
    return _batch_norm(x, gamma, beta, ws.require(f"{name}.mean"), ws.require(f"{name}.var"))


def _residual_block(ws: WeightSet, prefix: str, x, stride: int, kind: str):
    out = _relu(_norm(ws, f"{prefix}.norm1", _conv(ws, f"{prefix}.conv1", x, stride), kind))
    out = _norm(ws, f"{prefix}.norm2", _conv(ws, f"{prefix}.conv2", out), kind)
    if f"{prefix}.skip.w" in ws.params:
        x = _norm(ws, f"{prefix}.skipnorm", _conv(ws, f"{prefix}.skip", x, stride, 0), kind)
    return _relu(out + x)


def _encoder_forward(ws: WeightSet, prefix: str, image, kind: str):
    x = _relu(_norm(ws, f"{prefix}.stem.norm", _conv(ws, f"{prefix}.stem.conv", image), kind))
    for layer, stride in ((1, 1), (2, 2), (3, 2)):
        for block in range(2):
            s = stride if block == 0 else 1
            x = _residual_block(ws, f"{prefix}.layer{layer}.{block}", x, s, kind)
    x = _conv(ws, f"{prefix}.head.conv", x, 1, 0)
    return _check_finite(x, f"{prefix} head")


def normalize_image(image) -> np.ndarray:
    """uint8 (H, W, 3) image to the (3, H, W) float range the encoders expect."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError("expected an (H, W, 3) image")
    return (img.transpose(2, 0, 1).astype(np.float32) / 127.5) - 1.0


def extract_features(ws: WeightSet, image) -> np.ndarray:
    """Matching features (Df, H/4, W/4); instance-normalized encoder."""
    return _encoder_forward(ws, "fnet", normalize_image(image), "instance")


def extract_context(ws: WeightSet, image):
    """Context features and initial hidden state from the reference view.

    The context head emits 2*Dh channels; the first half (ReLU) is the
    per-pixel context input of every GRU step, the second half (tanh)
    initializes the hidden state.
    """
    out = _encoder_forward(ws, "cnet", normalize_image(image), "batch")
    dh = out.shape[0] // 2
    ctx = _relu(out[:dh])
    h0 = np.tanh(out[dh:])
    return ctx.astype(np.float32), h0.astype(np.float32)


# ---------------------------------------------------------------------------
# update operator


def encode_disparity(d) -> np.ndarray:
    """49-channel neighborhood-difference feature of a disparity field.

    Channel (dy, dx) in row-major order over [-3, 3]^2 holds
    d(y+dy, x+dx) - d(y, x); borders replicate the edge pixel. Adding a
    constant to the field leaves the output unchanged.
    """
    d = np.asarray(d, dtype=np.float32)
    if d.ndim != 2:
        raise InvalidInputError("disparity field must be 2-D")
    h, w = d.shape
    padded = np.pad(d, 3, mode="edge")
    out = np.empty((49, h, w), dtype=np.float32)
    for c, (dy, dx) in enumerate(
        (dy, dx) for dy in range(-3, 4) for dx in range(-3, 4)
    ):
        out[c] = padded[3 + dy : 3 + dy + h, 3 + dx : 3 + dx + w] - d
    return out


def _encode_correlation(ws: WeightSet, corr):
    x = _relu(_conv(ws, "enc_corr.conv1", corr))
    return _relu(_conv(ws, "enc_corr.conv2", x))


def gru_step(state: UpdateState, corr, ws: WeightSet) -> UpdateState:
    """One recurrent update of the hidden state.

    Builds the operator input from the disparity neighborhood feature, the
    encoded correlation lookup, and the context, then applies the
    sigmoid/tanh gated 3x3 convolutions. The disparity field itself is not
    changed here; decoding the increment is a separate step.
    """
    xd = _check_finite(_relu(_conv(ws, "enc_disp.conv", encode_disparity(state.d))),
                       "disparity encoder")
    xc = _check_finite(_encode_correlation(ws, corr), "correlation encoder")
    x = np.concatenate([xd, xc, state.ctx], axis=0)

    hx = np.concatenate([state.h, x], axis=0)
    z = _check_finite(_sigmoid(_conv(ws, "gru.wz", hx)), "update gate")
    r = _check_finite(_sigmoid(_conv(ws, "gru.wr", hx)), "reset gate")
    rhx = np.concatenate([r * state.h, x], axis=0)
    h_cand = _check_finite(np.tanh(_conv(ws, "gru.wh", rhx)), "candidate state")
    h_new = ((1.0 - z) * state.h + z * h_cand).astype(np.float32)
    _check_finite(h_new, "hidden state")
    return UpdateState(h=h_new, ctx=state.ctx, d=state.d, t=state.t + 1)


def decode_delta(state: UpdateState, ws: WeightSet, t1: int) -> np.ndarray:
    """Disparity increment from the hidden state; stage picks the decoder."""
    name = "dec1" if state.t <= t1 else "dec2"
    return _conv(ws, f"{name}.conv", state.h)[0]


def apply_delta(d, delta):
    """Add an increment to the disparity field and clamp at zero."""
    return np.maximum(d + delta, 0.0).astype(np.float32)


def run_inference(ref_image, nbr_images, cams, ws: WeightSet, record: RunRecord = None):
    """Predict a disparity field for one reference view.

    Args:
        ref_image: (H, W, 3) uint8 reference image; H and W divisible by 4.
        nbr_images: Neighbor images, same size.
        cams: Cameras, reference first, matching ``[ref] + nbr_images``.
        ws: Weights and hyperparameters.
        record: Optional RunRecord; when given, per-iteration predictions
            and hidden states are appended (used by checkpoint fitting).

    Returns:
        (H/4, W/4) float32 disparity field (inverse depth, 1/mm).
    """
    if not nbr_images:
        raise InvalidInputError("need at least one neighbor view")
    shape = np.asarray(ref_image).shape
    for img in nbr_images:
        if np.asarray(img).shape != shape:
            raise InvalidInputError("all views must share the image size")
    if shape[0] % DOWNSIZE or shape[1] % DOWNSIZE:
        raise InvalidInputError(f"image extents must be divisible by {DOWNSIZE}")
    if len(cams) != len(nbr_images) + 1:
        raise InvalidInputError("camera count must be neighbor count + 1")

    hp = ws.hyper
    ref_feat = extract_features(ws, ref_image)
    nbr_feats = [extract_features(ws, img) for img in nbr_images]
    ctx, h0 = extract_context(ws, ref_image)

    stack = build_stage1_volume(
        ref_feat, nbr_feats, cams, hp.coarse_bins, hp.d_max,
        levels=hp.levels, lookup_radius=hp.radius, downsize=DOWNSIZE,
    )
    d = np.zeros(ref_feat.shape[1:], dtype=np.float32)
    state = UpdateState(h=h0, ctx=ctx, d=d)

    for step in range(hp.total_iterations):
        if step == hp.t1:
            stack = build_stage2_volume(
                ref_feat, nbr_feats, cams, state.d, hp.fine_increment,
                levels=hp.levels, lookup_radius=hp.radius, downsize=DOWNSIZE,
            )
        corr = fuse_views(lookup(stack, state.d))
        state = gru_step(state, corr, ws)
        if not (np.abs(state.h) < 1.0).all():
            raise NumericalFailureError("hidden state left (-1, 1)")
        delta = decode_delta(state, ws, hp.t1)
        if record is not None:
            record.opens.append((state.d + delta) > 0)
            record.hiddens.append(state.h)
        state.d = apply_delta(state.d, delta)
        if record is not None:
            record.preds.append(state.d.copy())
    return state.d


# ---------------------------------------------------------------------------
# initialization and checkpoints


def _conv_shape_init(rng, cout, cin, k, gain=1.0):
    fan_in = cin * k * k
    w = rng.normal(0.0, gain / math.sqrt(fan_in), size=(cout, cin, k, k))
    return w.astype(np.float32), np.zeros(cout, dtype=np.float32)


def init_weights(
    seed: int,
    hyper: Hyperparams,
    widths=(48, 64, 96),
    enc_dim: int = 64,
    corr_mid: int = 96,
    decoder_gain: float = 1e-3,
) -> WeightSet:
    """Seeded random weights for the full network.

    ``widths`` are the channel counts of the three encoder stages; the GRU
    gate convolutions use a reduced gain so that, untrained, activations
    stay well inside the saturation range of their nonlinearities.
    """
    rng = np.random.default_rng(seed)
    params = {}

    def conv(name, cout, cin, k, gain=1.0):
        params[f"{name}.w"], params[f"{name}.b"] = _conv_shape_init(rng, cout, cin, k, gain)

    def norm(name, c, kind):
        params[f"{name}.gamma"] = np.ones(c, dtype=np.float32)
        params[f"{name}.beta"] = np.zeros(c, dtype=np.float32)
        if kind == "batch":
            params[f"{name}.mean"] = np.zeros(c, dtype=np.float32)
            params[f"{name}.var"] = np.ones(c, dtype=np.float32)

    w1, w2, w3 = widths
    for prefix, out_dim, kind in (
        ("fnet", hyper.feature_dim, "instance"),
        ("cnet", 2 * hyper.hidden_dim, "batch"),
    ):
        conv(f"{prefix}.stem.conv", w1, 3, 3)
        norm(f"{prefix}.stem.norm", w1, kind)
        plan = {1: (w1, w1, 1), 2: (w1, w2, 2), 3: (w2, w3, 2)}
        for layer, (cin, cout, stride) in plan.items():
            for block in range(2):
                bi = cin if block == 0 else cout
                s = stride if block == 0 else 1
                p = f"{prefix}.layer{layer}.{block}"
                conv(f"{p}.conv1", cout, bi, 3)
                norm(f"{p}.norm1", cout, kind)
                conv(f"{p}.conv2", cout, cout, 3)
                norm(f"{p}.norm2", cout, kind)
                if s != 1 or bi != cout:
                    conv(f"{p}.skip", cout, bi, 1)
                    norm(f"{p}.skipnorm", cout, kind)
        conv(f"{prefix}.head.conv", out_dim, w3, 1)

    corr_ch = hyper.radius * hyper.levels
    conv("enc_corr.conv1", corr_mid, corr_ch, 3)
    conv("enc_corr.conv2", enc_dim, corr_mid, 3)
    conv("enc_disp.conv", enc_dim, 49, 3)

    xdim = 2 * enc_dim + hyper.hidden_dim
    for gate in ("wz", "wr", "wh"):
        conv(f"gru.{gate}", hyper.hidden_dim, hyper.hidden_dim + xdim, 3, gain=0.5)
    conv("dec1.conv", 1, hyper.hidden_dim, 3, gain=decoder_gain)
    conv("dec2.conv", 1, hyper.hidden_dim, 3, gain=decoder_gain)
    return WeightSet(params=params, hyper=hyper)


_HYPER_FIELDS = {
    "t1": int,
    "t2": int,
    "hidden_dim": int,
    "feature_dim": int,
    "levels": int,
    "radius": int,
    "d_max": float,
    "coarse_increment": float,
    "fine_increment": float,
}


def save_checkpoint(directory, ws: WeightSet, manifest_name: str = "manifest.txt") -> Path:
    """Write a manifest plus one TNSR file per parameter; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, kind in _HYPER_FIELDS.items():
        value = getattr(ws.hyper, key)
        lines.append(f"{key} {value}" if kind is int else f"{key} {value!r}")
    for name in sorted(ws.params):
        fname = f"{name}.tnsr"
        write_tnsr(directory / fname, ws.params[name])
        lines.append(f"{name} {fname}")
    manifest = directory / manifest_name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_checkpoint(manifest_path) -> WeightSet:
    """Load a WeightSet from a manifest written by :func:`save_checkpoint`."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise InvalidInputError(f"no weight manifest at {manifest_path}")
    hyper_kwargs = {}
    params = {}
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        if key in _HYPER_FIELDS:
            hyper_kwargs[key] = _HYPER_FIELDS[key](value.strip().strip("'"))
        else:
            params[key] = read_tnsr(manifest_path.parent / value.strip())
    if not params:
        raise InvalidInputError(f"{manifest_path}: manifest lists no parameters")
    return WeightSet(params=params, hyper=Hyperparams(**hyper_kwargs))
