"""File formats and dataset plumbing.

Readers reject malformed inputs with positioned errors and never hand back a
partially constructed object.  All randomized operations are pure functions
of (input, seed).  Formats: IDX containers for digit corpora, 8-bit binary
PGM (P5) for images, JSON text for models and training configs, CSV for
traces and logs.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import math
import os
import tempfile

import numpy as np

from .errors import ConfigError, ParseError, PersistenceError, ShapeError
from .inference import CaConfig
from .learning import TrainConfig, LearnTrace
from .model import DataBatch, LabelHead, LayerParams, ModelParams
from .restoration import ImageGray

MODEL_FORMAT_VERSION = 1

IDX_UBYTE = 0x08

BERNOULLI = "bernoulli"
THRESHOLD = "threshold"


# ---------------------------------------------------------------------------
# atomic output


def _write_atomic(path: str, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str):
    _write_atomic(path, text.encode())


# ---------------------------------------------------------------------------
# IDX containers


@dataclass
class IdxTensor:
    """Unsigned-byte tensor in row-major order."""

    dims: tuple
    data: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.data = np.asarray(self.data, dtype=np.uint8).reshape(-1)
        if self.data.size != int(np.prod(self.dims)):
            raise ShapeError("payload length must equal the product of dims")

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)


def read_idx(path: str) -> IdxTensor:
    """Parse an IDX file (big-endian dims, unsigned-byte payload)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated magic at byte offset 0")
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"{path}: bad magic at byte offset 0")
    if raw[2] != IDX_UBYTE:
        raise ParseError(f"{path}: unsupported element type 0x{raw[2]:02x} at byte offset 2")
    ndim = raw[3]
    if ndim < 1:
        raise ParseError(f"{path}: zero dimensions at byte offset 3")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise ParseError(f"{path}: truncated dimension table at byte offset {len(raw)}")
    dims = tuple(int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    expected = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) != expected:
        raise ParseError(f"{path}: expected {expected} payload bytes, found {len(payload)} "
                         f"at byte offset {header_len}")
    return IdxTensor(dims, np.frombuffer(payload, dtype=np.uint8))


def write_idx(path: str, tensor: IdxTensor):
    head = bytes([0, 0, IDX_UBYTE, len(tensor.dims)])
    head += b"".join(int(d).to_bytes(4, "big") for d in tensor.dims)
    _write_atomic(path, head + tensor.data.tobytes())


def binarize(tensor: IdxTensor, mode: str = BERNOULLI, seed: int = 0) -> DataBatch:
    """Map byte intensities to a binary sample matrix.

    Bernoulli mode draws pixel ~ Bernoulli(intensity / 255) with the given
    seed; threshold mode maps intensities of 128 and above to 1.  Images keep
    their leading dimension as the sample axis and are flattened otherwise.
    """
    arr = tensor.array
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    X = arr.reshape(arr.shape[0], -1).astype(float)
    if mode == BERNOULLI:
        rng = np.random.default_rng(seed)
        out = (rng.random(X.shape) < X / 255.0).astype(float)
    elif mode == THRESHOLD:
        out = (X >= 128).astype(float)
    else:
        raise ConfigError(f"unknown binarization mode {mode!r}")
    return DataBatch(out)


def downsample2x(images: np.ndarray) -> np.ndarray:
    """2x2 mean pooling over the trailing two axes (sizes must be even)."""
    h, w = images.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError("image sides must be even for 2x pooling")
    r = images.reshape(*images.shape[:-2], h // 2, 2, w // 2, 2)
    return r.mean(axis=(-3, -1))


# ---------------------------------------------------------------------------
# patch sampling


@dataclass
class PatchSpec:
    patch_size: int
    count: int
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.count < 1:
            raise ConfigError("patch size and count must be positive")


def sample_patches(images: list[ImageGray], spec: PatchSpec) -> DataBatch:
    """Uniform draws (with replacement) over (image, top-left corner)."""
    if not images:
        raise ConfigError("no source images supplied")
    for img in images:
        if spec.patch_size > min(img.height, img.width):
            raise ConfigError("patch does not fit every source image")
    rng = np.random.default_rng(spec.seed)
    s = spec.patch_size
    out = np.empty((spec.count, s * s))
    which = rng.integers(0, len(images), spec.count)
    for k in range(spec.count):
        img = images[which[k]]
        r = int(rng.integers(0, img.height - s + 1))
        c = int(rng.integers(0, img.width - s + 1))
        out[k] = img.pixels[r:r + s, c:c + s].reshape(-1)
    return DataBatch(out)


# ---------------------------------------------------------------------------
# model persistence (versioned JSON text)


def _array_out(a: np.ndarray):
    return np.asarray(a, dtype=float).tolist()


def save_model(path: str, params: ModelParams):
    """Write the versioned JSON model file (full round-trip float precision)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "visible_kind": params.visible_kind,
        "layer_sizes": list(params.layer_sizes),
        "layers": [
            {"weights": _array_out(lp.weights), "biases": _array_out(lp.biases),
             **({"variances": _array_out(lp.variances)} if lp.variances is not None else {})}
            for lp in params.layers
        ],
        "top_prior": _array_out(params.top_prior),
    }
    if params.label_head is not None:
        doc["label_head"] = {"weights": _array_out(params.label_head.weights),
                             "biases": _array_out(params.label_head.biases)}
    write_text_atomic(path, json.dumps(doc))


def load_model(path: str) -> ModelParams:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise PersistenceError(f"{path}: unreadable model file: {e}") from e
    if not isinstance(doc, dict):
        raise PersistenceError(f"{path}: model file must hold a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise PersistenceError(
            f"{path}: unsupported format_version {version!r}; this build reads "
            f"version {MODEL_FORMAT_VERSION}")
    try:
        layers = [LayerParams(np.array(e["weights"], dtype=float),
                              np.array(e["biases"], dtype=float),
                              np.array(e["variances"], dtype=float) if "variances" in e else None)
                  for e in doc["layers"]]
        head = None
        if "label_head" in doc:
            head = LabelHead(np.array(doc["label_head"]["weights"], dtype=float),
                             np.array(doc["label_head"]["biases"], dtype=float))
        return ModelParams(doc["visible_kind"], doc["layer_sizes"], layers,
                           np.array(doc["top_prior"], dtype=float), label_head=head)
    except (KeyError, TypeError, ValueError, ConfigError, ShapeError) as e:
        raise PersistenceError(f"{path}: malformed model file: {e}") from e


def save_report(path: str, report):
    """Write an InferenceReport in the same JSON text convention as models."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "map_state": [layer.tolist() for layer in report.map_state.layers],
        "joint_log_prob": float(report.joint_log_prob),
        "iterations_used": int(report.iterations_used),
        "converged": bool(report.converged),
        "flips_used": int(report.flips_used),
    }
    if report.trace is not None:
        doc["trace"] = [float(v) for v in report.trace]
    write_text_atomic(path, json.dumps(doc))


def load_report(path: str) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise PersistenceError(f"{path}: unreadable report file: {e}") from e
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise PersistenceError(f"{path}: unsupported format_version "
                               f"{doc.get('format_version')!r}")
    return doc


# ---------------------------------------------------------------------------
# PGM images (binary P5, 8-bit)


def read_pgm(path: str) -> ImageGray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4:
        raise ParseError(f"{path}: truncated header at byte offset {pos}")
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (P5) file at byte offset 0")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise ParseError(f"{path}: bad header field: {e}") from e
    if not 0 < maxval < 256:
        raise ParseError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    payload = raw[pos:pos + width * height]
    if len(payload) != width * height:
        raise ParseError(f"{path}: expected {width * height} pixel bytes, found "
                         f"{len(payload)} at byte offset {pos}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width) / float(maxval)
    return ImageGray(pixels)


def write_pgm(path: str, image: ImageGray):
    pixels = np.clip(image.pixels, 0.0, 1.0)
    bytes_ = np.rint(pixels * 255.0).astype(np.uint8)
    head = f"P5\n{image.width} {image.height}\n255\n".encode()
    _write_atomic(path, head + bytes_.tobytes())


# ---------------------------------------------------------------------------
# CSV traces and logs


def write_trace_csv(path: str, trace: LearnTrace):
    lines = ["epoch,objective,seconds,param_norm"]
    for e, (o, s, n) in enumerate(zip(trace.objective, trace.seconds, trace.param_norm)):
        lines.append(f"{e},{o!r},{s!r},{n!r}")
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_rows_csv(path: str, rows: list[dict], columns: list[str]):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_csv_cell(row.get(c)) for c in columns))
    write_text_atomic(path, "\n".join(lines) + "\n")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# training config files


_CONFIG_KEYS = {
    "visible_kind", "hidden_sizes", "epochs", "lr", "batch_size", "seed",
    "m_step", "e_step", "ca", "weight_init_scale", "m_epochs", "in_epochs",
    "in_lr", "warmup_epochs", "converge_tol", "converge_patience",
    "finetune_epochs", "binarize", "patch",
}

_CA_KEYS = {"max_sweeps", "tol", "sweep_order", "restarts", "seed"}


def load_train_config(path: str):
    """Read a training run description; returns (TrainConfig, extras dict).

    Extras carry run-level settings that sit outside TrainConfig:
    hidden_sizes (required), finetune_epochs, and the binarize mode.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: unreadable config: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    if "hidden_sizes" not in doc or not doc["hidden_sizes"]:
        raise ConfigError(f"{path}: hidden_sizes is required")
    ca_doc = doc.get("ca", {})
    unknown = set(ca_doc) - _CA_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown ca keys {sorted(unknown)}")
    try:
        ca = CaConfig(**ca_doc)
        cfg = TrainConfig(
            epochs=int(doc.get("epochs", 50)),
            lr=float(doc.get("lr", 0.05)),
            batch_size=int(doc.get("batch_size", 100)),
            seed=int(doc.get("seed", 0)),
            m_step=doc.get("m_step", "sgd_binary"),
            e_step=doc.get("e_step", "aug_ca"),
            ca_cfg=ca,
            weight_init_scale=float(doc.get("weight_init_scale", 0.01)),
            m_epochs=int(doc.get("m_epochs", 1)),
            in_epochs=int(doc.get("in_epochs", 3)),
            in_lr=float(doc.get("in_lr", 0.1)),
            warmup_epochs=int(doc.get("warmup_epochs", 2)),
            converge_tol=float(doc.get("converge_tol", 1e-4)),
            converge_patience=int(doc.get("converge_patience", 3)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: bad config value: {e}") from e
    if "visible_kind" in doc and doc["visible_kind"] != cfg.visible_kind:
        raise ConfigError(f"{path}: visible_kind {doc['visible_kind']!r} conflicts "
                          f"with m_step {cfg.m_step!r}")
    extras = {
        "hidden_sizes": [int(n) for n in doc["hidden_sizes"]],
        "finetune_epochs": int(doc.get("finetune_epochs", 0)),
        "binarize": doc.get("binarize"),
        "patch": doc.get("patch"),
    }
    if extras["binarize"] is not None:
        b = extras["binarize"]
        if not isinstance(b, dict) or b.get("mode") not in (BERNOULLI, THRESHOLD):
            raise ConfigError(f"{path}: binarize.mode must be bernoulli or threshold")
    return cfg, extras


# ---------------------------------------------------------------------------
# bundled synthetic corpora (the package ships no dataset downloads)


def synthetic_digits(count: int, side: int = 14, seed: int = 0, n_prototypes: int = 10):
    """Digit-like grayscale corpus: random stroke prototypes plus jitter.

    Returns (IdxTensor of byte intensities, prototype labels).
    """
    rng = np.random.default_rng(seed)
    dirs = np.array([(0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)])
    protos = np.zeros((n_prototypes, side, side))
    for k in range(n_prototypes):
        img = np.zeros((side, side))
        for _ in range(rng.integers(2, 4)):
            r, c = rng.integers(2, side - 2, 2)
            d = dirs[rng.integers(0, 8)]
            for _ in range(rng.integers(10, 18)):
                img[r, c] = 1.0
                if rng.random() < 0.25:
                    d = dirs[rng.integers(0, 8)]
                r = max(1, min(side - 2, r + d[0]))
                c = max(1, min(side - 2, c + d[1]))
        padded = np.pad(img, 1)
        smooth = sum(padded[i:i + side, j:j + side] for i in range(3) for j in range(3)) / 9.0
        protos[k] = np.clip(1.6 * img + 0.9 * smooth, 0.0, 1.0)
    out = np.zeros((count, side, side))
    labels = rng.integers(0, n_prototypes, count)
    for m in range(count):
        img = protos[labels[m]]
        sr, sc = rng.integers(-1, 2, 2)
        img = np.roll(np.roll(img, sr, axis=0), sc, axis=1)
        out[m] = np.clip(img * rng.uniform(0.9, 1.0) + rng.uniform(0, 0.02, img.shape), 0, 1)
    tensor = IdxTensor((count, side, side), np.rint(out * 255).astype(np.uint8))
    return tensor, labels


def synthetic_textures(count: int, size: int = 32, seed: int = 0) -> list[ImageGray]:
    """Smooth oriented-wave textures with strong local patch structure."""
    rng = np.random.default_rng(seed)
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = []
    for _ in range(count):
        img = np.zeros((size, size))
        for _ in range(3):
            fr, fc = rng.uniform(-3, 3, 2)
            phase = rng.uniform(0, 2 * math.pi)
            img += rng.uniform(0.4, 1.0) * np.sin(2 * math.pi * (fr * rr + fc * cc) / size + phase)
        lo, hi = img.min(), img.max()
        out.append(ImageGray(0.1 + 0.8 * (img - lo) / (hi - lo)))
    return out


def make_text_mask(shape: tuple, seed: int = 0, coverage: float = 0.10) -> np.ndarray:
    """Scribble mask of short dashes, roughly the requested pixel coverage."""
    rng = np.random.default_rng(seed)
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    target = coverage * h * w
    while mask.sum() < target:
        r = int(rng.integers(1, h - 1))
        c = int(rng.integers(0, max(w - 6, 1)))
        length = int(rng.integers(3, 7))
        thickness = int(rng.integers(1, 3))
        mask[r:r + thickness, c:c + length] = True
    return mask
