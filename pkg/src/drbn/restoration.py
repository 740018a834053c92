"""Patch-prior image restoration, corruption synthesis, and generation.

The image-level objective sums the max-form patch log likelihoods over all
overlapping patches and couples to the corrupted observation through a
quadratic data term.  Optimization follows half-quadratic splitting: for a
rising coupling weight beta, auxiliary per-patch variables are set to the
closed-form compromise between the current patch content and the prior's
reconstruction mean (given the MAP latent state of the patch), then the image
is refit as a weighted average of the observation and the overlapping
auxiliaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .inference import CaConfig, InferenceNet, map_states_batch
from .model import GAUSSIAN, ModelParams, ancestral_sample, sigmoid

GAUSSIAN_NOISE = "gaussian"
BLOCK_NOISE = "block"
TEXT_OVERLAY = "text"

PSNR_CAP_DB = 99.0


@dataclass
class ImageGray:
    """Grayscale image; pixel values nominally in [0, 1], clamped at I/O."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ShapeError("image pixels must form a 2-d matrix")
        if not np.isfinite(self.pixels).all():
            raise ShapeError("image pixels must be finite")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class NoiseModel:
    """Corruption process: additive Gaussian on a pixel fraction, a noisy
    block at a random position, or a fixed overlay mask painted black."""

    kind: str
    sigma: float = 0.0
    fraction: float = 0.0
    block_size: int = 0
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN_NOISE, BLOCK_NOISE, TEXT_OVERLAY):
            raise ConfigError(f"unknown noise model {self.kind!r}")
        if self.kind == GAUSSIAN_NOISE and not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("corrupted fraction must lie in [0, 1]")
        if self.kind == TEXT_OVERLAY:
            if self.mask is None:
                raise ConfigError("text overlay needs a mask")
            self.mask = np.asarray(self.mask, dtype=bool)


def gaussian_noise(sigma: float, fraction: float) -> NoiseModel:
    return NoiseModel(GAUSSIAN_NOISE, sigma=sigma, fraction=fraction)


def block_noise(size: int, sigma: float) -> NoiseModel:
    return NoiseModel(BLOCK_NOISE, sigma=sigma, block_size=int(size))


def text_overlay(mask: np.ndarray) -> NoiseModel:
    return NoiseModel(TEXT_OVERLAY, mask=mask)


def default_beta_schedule(noise_sigma: float) -> list[float]:
    """Rising coupling ladder {1, 4, 8, 16, 32} relative to the noise precision."""
    base = 1.0 / max(noise_sigma, 1e-3) ** 2
    return [base * k for k in (1.0, 4.0, 8.0, 16.0, 32.0)]


@dataclass
class RestorationProblem:
    corrupted: ImageGray
    noise: NoiseModel
    lam: float = 1e6
    patch_size: int = 8
    stride: int = 1
    beta_schedule: list[float] = field(default_factory=lambda: default_beta_schedule(0.25))

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("data weight lambda must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")
        if self.patch_size > min(self.corrupted.height, self.corrupted.width):
            raise ConfigError("patch size exceeds the image")
        if not self.beta_schedule:
            raise ConfigError("beta schedule must be nonempty")


# ---------------------------------------------------------------------------
# patch plumbing


def patch_positions(height: int, width: int, size: int, stride: int) -> np.ndarray:
    rows = np.arange(0, height - size + 1, stride)
    cols = np.arange(0, width - size + 1, stride)
    return np.array([(r, c) for r in rows for c in cols], dtype=int)


def extract_patches(image: ImageGray, size: int, stride: int = 1):
    """All fully interior patches as flattened rows, with their positions."""
    if size > min(image.height, image.width):
        raise ShapeError("patch size exceeds the image")
    view = np.lib.stride_tricks.sliding_window_view(image.pixels, (size, size))
    view = view[::stride, ::stride]
    P = view.reshape(-1, size * size)
    return P, patch_positions(image.height, image.width, size, stride)


def assemble_patches(values: np.ndarray, positions: np.ndarray, shape: tuple, size: int):
    """Sum patch contents back onto the canvas; also counts overlaps per pixel."""
    accum = np.zeros(shape)
    counts = np.zeros(shape)
    for row, (r, c) in zip(values, positions):
        accum[r:r + size, c:c + size] += row.reshape(size, size)
        counts[r:r + size, c:c + size] += 1.0
    return accum, counts


# ---------------------------------------------------------------------------
# metrics and corruption


def psnr(a: ImageGray, b: ImageGray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images (99 dB cap at zero error)."""
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError("images must share dimensions")
    mse = float(((a.pixels - b.pixels) ** 2).mean())
    if mse < 1e-12:
        return PSNR_CAP_DB
    return float(10.0 * math.log10(1.0 / mse))


def corrupt(image: ImageGray, noise: NoiseModel, seed: int = 0):
    """Apply the noise model; returns (corrupted image, boolean mask).

    Pixel values are not clamped here, so the added-noise statistics stay
    measurable; clamping happens when images are written out.
    """
    rng = np.random.default_rng(seed)
    out = image.pixels.copy()
    mask = np.zeros(out.shape, dtype=bool)
    if noise.kind == GAUSSIAN_NOISE:
        n = out.size
        k = int(round(noise.fraction * n))
        if k > 0:
            idx = rng.choice(n, size=k, replace=False)
            flat = out.reshape(-1)
            flat[idx] += rng.normal(0.0, noise.sigma, k)
            mask.reshape(-1)[idx] = True
    elif noise.kind == BLOCK_NOISE:
        s = noise.block_size
        if s > min(image.height, image.width):
            raise ConfigError("block larger than the image")
        r = int(rng.integers(0, image.height - s + 1))
        c = int(rng.integers(0, image.width - s + 1))
        out[r:r + s, c:c + s] += rng.normal(0.0, noise.sigma, (s, s))
        mask[r:r + s, c:c + s] = True
    else:
        if noise.mask.shape != out.shape:
            raise ShapeError("overlay mask must match the image")
        out[noise.mask] = 0.0
        mask = noise.mask.copy()
    return ImageGray(out), mask


# ---------------------------------------------------------------------------
# patch-prior evaluation and restoration


def _patch_map(P: np.ndarray, prior: ModelParams, net: InferenceNet | None,
               cfg: CaConfig | None, map_method: str):
    method = map_method
    if method == "aug_ca" and net is None:
        method = "ca"
    return map_states_batch(P, prior, method=method, net=net, cfg=cfg)


def epll(image: ImageGray, prior: ModelParams, net: InferenceNet | None = None,
         cfg: CaConfig | None = None, map_method: str = "aug_ca",
         patch_size: int | None = None) -> float:
    """Sum of max-form patch log likelihoods over all overlapping patches."""
    size = patch_size or int(round(math.sqrt(prior.n_visible)))
    if size * size != prior.n_visible:
        raise ShapeError("prior width is not a square patch")
    P, _ = extract_patches(image, size, stride=1)
    _, lj = _patch_map(P, prior, net, cfg, map_method)
    return float(lj.sum())


def _data_weights(problem: RestorationProblem, shape) -> np.ndarray:
    """Per-pixel data-term weights: lambda, zeroed where an overlay mask
    marks pixels as carrying no signal."""
    w = np.full(shape, float(problem.lam))
    if problem.noise.kind == TEXT_OVERLAY and problem.noise.mask is not None:
        w[problem.noise.mask] = 0.0
    return w


def restore_hqs(problem: RestorationProblem, prior: ModelParams,
                net: InferenceNet | None = None, cfg: CaConfig | None = None,
                map_method: str = "aug_ca", clean: ImageGray | None = None):
    """Half-quadratic restoration; returns (restored image, per-step log rows).

    Each log row is a dict with beta, the image-level objective, and (when a
    clean reference is supplied) the PSNR against it.
    """
    if prior.visible_kind != GAUSSIAN:
        raise ConfigError("restoration requires a gaussian patch prior")
    size = problem.patch_size
    if size * size != prior.n_visible:
        raise ShapeError("prior width does not match the patch size")
    x_tilde = problem.corrupted.pixels
    lam = _data_weights(problem, x_tilde.shape)
    x = x_tilde.copy()
    W1 = prior.layers[0].weights
    b1 = prior.layers[0].biases
    var = prior.layers[0].variances
    log = []
    for step, beta in enumerate(problem.beta_schedule):
        if beta <= 0:
            raise ConfigError("beta values must be positive")
        P, positions = extract_patches(ImageGray(x), size, problem.stride)
        states, _ = _patch_map(P, prior, net, cfg, map_method)
        mu = states[0].astype(float) @ W1.T + b1
        z = (beta * P + mu / var) / (beta + 1.0 / var)
        accum, counts = assemble_patches(z, positions, x.shape, size)
        denom = lam + beta * counts
        safe = denom > 0
        x = np.where(safe, (lam * x_tilde + beta * accum) / np.where(safe, denom, 1.0), x)
        objective = float(0.5 * (lam * (x - x_tilde) ** 2).sum()
                          - epll(ImageGray(x), prior, net, cfg, map_method, size))
        if not np.isfinite(objective):
            raise NumericalError(f"objective became non-finite at beta step {step}")
        row = {"beta": float(beta), "objective": objective}
        if clean is not None:
            row["psnr"] = psnr(ImageGray(np.clip(x, 0.0, 1.0)), clean)
        log.append(row)
    return ImageGray(np.clip(x, 0.0, 1.0)), log


def reconstruct(x: np.ndarray, params: ModelParams, net: InferenceNet | None = None,
                cfg: CaConfig | None = None, map_method: str = "aug_ca"):
    """MAP latent state, then the most likely visible vector under it.

    Returns (reconstruction, map_states, joint_log_prob) for the flat input.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    states, lj = _patch_map(X, params, net, cfg, map_method)
    act = states[0].astype(float) @ params.layers[0].weights.T + params.layers[0].biases
    if params.visible_kind == GAUSSIAN:
        out = act
    else:
        out = (sigmoid(act) >= 0.5).astype(float)
    return out[0] if np.asarray(x).ndim == 1 else out, states, lj


def generate(params: ModelParams, seed: int, count: int, shape: tuple) -> list[ImageGray]:
    """Ancestral draws emitting the visible conditional mean, as images."""
    h, w = shape
    if h * w != params.n_visible:
        raise ShapeError("requested geometry does not match the model width")
    _, states = ancestral_sample(params, rng_seed=seed, count=count)
    lp = params.layers[0]
    out = []
    for s in states:
        act = lp.weights @ s.layers[0].astype(float) + lp.biases
        mean = act if params.visible_kind == GAUSSIAN else sigmoid(act)
        out.append(ImageGray(mean.reshape(h, w)))
    return out
