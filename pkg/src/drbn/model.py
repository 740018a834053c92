"""Parameters and probability evaluations for (deep) regression Bayesian networks.

A regression Bayesian network (RBN) is a two-layer directed model: binary
latent units with independent sigmoid priors generate visible units whose
conditional is either Gaussian with mean linear in the latents or Bernoulli
with a sigmoid of that linear activation.  Stacking latent layers gives the
deep variant (DRBN); every link points downward and only the top layer keeps
an unconditional prior.

All evaluation functions here are pure; sampling takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedOperationError

BINARY = "binary"
GAUSSIAN = "gaussian"

# Logits are clipped here before exponentiation; at 30 the probability error
# is below 1e-13, far under every tolerance used in this package.
LOGIT_CLIP = 30.0

# Conditional variances never drop below this floor.
VARIANCE_FLOOR = 1e-4


def sigmoid(a):
    """Clipped logistic function, elementwise; output strictly inside (0, 1)."""
    a = np.clip(a, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-a))


def softplus(a):
    """log(1 + e^a) via the overflow-safe branch formulation."""
    a = np.asarray(a, dtype=float)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def log_sigmoid(a):
    return -softplus(-np.asarray(a, dtype=float))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return float(out.reshape(())) if axis is None else np.squeeze(out, axis=axis)


def bernoulli_log_prob(v, act):
    """Sum over units of log Bernoulli(v | sigm(act)); v in {0,1}, rows = samples."""
    return (v * act - softplus(act)).sum(axis=-1)


def gaussian_log_prob(x, mean, var):
    return (-0.5 * np.log(2.0 * math.pi * var) - (x - mean) ** 2 / (2.0 * var)).sum(axis=-1)


@dataclass
class LabelHead:
    """Categorical softmax readout attached to the top latent layer."""

    weights: np.ndarray  # (n_classes, n_top)
    biases: np.ndarray   # (n_classes,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("label head weights (n_classes, n_top) and biases (n_classes,) disagree")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


@dataclass
class LayerParams:
    """Weights of one directed layer: upper (columns) generates lower (rows)."""

    weights: np.ndarray                 # (n_lower, n_upper)
    biases: np.ndarray                  # (n_lower,)
    variances: np.ndarray | None = None  # (n_lower,), bottom Gaussian layer only

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 2:
            raise ShapeError("layer weights must be a matrix (n_lower, n_upper)")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("layer biases length must equal the lower layer size")
        if self.variances is not None:
            self.variances = np.asarray(self.variances, dtype=float)
            if self.variances.shape != self.biases.shape:
                raise ShapeError("variance vector length must equal the lower layer size")
            if not np.all(self.variances > 0):
                raise ConfigError("variances must be strictly positive")

    @property
    def n_lower(self) -> int:
        return self.weights.shape[0]

    @property
    def n_upper(self) -> int:
        return self.weights.shape[1]


@dataclass
class ModelParams:
    """Full parameter set of an RBN/DRBN.

    layer_sizes is [n_visible, n_h1, ..., n_hL]; layers[l] connects
    layer_sizes[l] (lower, generated) to layer_sizes[l+1] (upper, generating).
    top_prior holds the prior logits of the top latent layer.
    """

    visible_kind: str
    layer_sizes: list[int]
    layers: list[LayerParams]
    top_prior: np.ndarray
    label_head: LabelHead | None = None

    def __post_init__(self):
        if self.visible_kind not in (BINARY, GAUSSIAN):
            raise ConfigError(f"unknown visible kind {self.visible_kind!r}")
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ConfigError("need at least one latent layer")
        if len(self.layers) != len(self.layer_sizes) - 1:
            raise ShapeError("one LayerParams required per adjacent layer pair")
        for l, lp in enumerate(self.layers):
            if lp.n_lower != self.layer_sizes[l] or lp.n_upper != self.layer_sizes[l + 1]:
                raise ShapeError(f"layer {l} is {lp.n_lower}x{lp.n_upper}, "
                                 f"expected {self.layer_sizes[l]}x{self.layer_sizes[l + 1]}")
            if lp.variances is not None and (l != 0 or self.visible_kind != GAUSSIAN):
                raise ConfigError("variances are only valid on the bottom layer of a gaussian model")
        if self.visible_kind == GAUSSIAN and self.layers[0].variances is None:
            raise ConfigError("gaussian visible kind requires a variance vector on the bottom layer")
        self.top_prior = np.asarray(self.top_prior, dtype=float)
        if self.top_prior.shape != (self.layer_sizes[-1],):
            raise ShapeError("top prior length must equal the top layer size")
        if self.label_head is not None and self.label_head.weights.shape[1] != self.layer_sizes[-1]:
            raise ShapeError("label head width must equal the top layer size")

    @property
    def n_visible(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_latent_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def latent_sizes(self) -> list[int]:
        return self.layer_sizes[1:]


@dataclass
class LatentState:
    """One binary configuration per latent layer, bottom first."""

    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.asarray(h).astype(np.uint8) for h in self.layers]
        for h in self.layers:
            if h.ndim != 1 or not np.isin(h, (0, 1)).all():
                raise ShapeError("latent layers must be flat 0/1 vectors")

    def copy(self) -> "LatentState":
        return LatentState([h.copy() for h in self.layers])


@dataclass
class DataBatch:
    """Visible vectors (rows), optionally with integer class labels."""

    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2:
            raise ShapeError("data vectors must form a 2-d matrix (samples x dims)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.vectors.shape[0],):
                raise ShapeError("labels length must equal the sample count")

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _check_state(params: ModelParams, layers: list[np.ndarray]):
    if len(layers) != params.n_latent_layers:
        raise ShapeError("latent state layer count does not match the model")
    for h, n in zip(layers, params.latent_sizes):
        if h.shape[-1] != n:
            raise ShapeError("latent layer width does not match the model")


def latent_prior_prob(d_j: float) -> float:
    """Prior probability that a top-layer latent unit with logit d_j is on."""
    if not math.isfinite(d_j):
        raise ValueError("prior logit must be finite")
    return float(sigmoid(d_j))


def cond_log_prob_visible(x: np.ndarray, h1: np.ndarray, params: ModelParams) -> float:
    """log P(x | h1) summed over visible units, per the visible kind."""
    x = np.asarray(x, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    lp = params.layers[0]
    if x.shape[-1] != params.n_visible or h1.shape[-1] != lp.n_upper:
        raise ShapeError("visible or latent vector width does not match the model")
    act = h1 @ lp.weights.T + lp.biases
    if params.visible_kind == GAUSSIAN:
        if lp.variances is None:
            raise ConfigError("gaussian visible kind requires variances")
        return float(gaussian_log_prob(x, act, lp.variances))
    return float(bernoulli_log_prob(x, act))


def joint_log_prob_batch(X: np.ndarray, states: list[np.ndarray], params: ModelParams) -> np.ndarray:
    """log P(x, h^1, ..., h^L) for a batch; X is (M, n_d), states[l] is (M, n_l)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    states = [np.atleast_2d(np.asarray(h, dtype=float)) for h in states]
    _check_state(params, states)
    if X.shape[1] != params.n_visible:
        raise ShapeError("visible width does not match the model")
    top = states[-1]
    d = params.top_prior
    total = top @ d - softplus(d).sum()
    for l in range(params.n_latent_layers - 1, 0, -1):
        lp = params.layers[l]
        act = states[l] @ lp.weights.T + lp.biases
        total = total + bernoulli_log_prob(states[l - 1], act)
    lp = params.layers[0]
    act = states[0] @ lp.weights.T + lp.biases
    if params.visible_kind == GAUSSIAN:
        total = total + gaussian_log_prob(X, act, lp.variances)
    else:
        total = total + bernoulli_log_prob(X, act)
    return total


def joint_log_prob(x: np.ndarray, state: LatentState, params: ModelParams) -> float:
    """log of the full joint over the visible vector and every latent layer."""
    return float(joint_log_prob_batch(x, state.layers, params)[0])


def energy(x: np.ndarray, h: np.ndarray, params: ModelParams) -> float:
    """Quadratic energy of a single-latent-layer Gaussian model.

    Satisfies joint_log_prob = -energy - log_partition_local for every (x, h).
    """
    if params.visible_kind != GAUSSIAN:
        raise UnsupportedOperationError("the energy form is defined for the gaussian visible kind only")
    if params.n_latent_layers != 1:
        raise UnsupportedOperationError("the energy form is defined for a single latent layer")
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    lp = params.layers[0]
    if x.shape != (lp.n_lower,) or h.shape != (lp.n_upper,):
        raise ShapeError("energy input widths do not match the model")
    wh = lp.weights @ h
    r = x - lp.biases
    var = lp.variances
    return float((r ** 2 / (2.0 * var)).sum()
                 - (r / var * wh).sum()
                 - params.top_prior @ h
                 + (wh ** 2 / (2.0 * var)).sum())


def log_partition_local(params: ModelParams) -> float:
    """log of the closed-form normalizer pairing with `energy`."""
    if params.visible_kind != GAUSSIAN or params.n_latent_layers != 1:
        raise UnsupportedOperationError("local partition pairs with the gaussian single-layer energy")
    lp = params.layers[0]
    return float(0.5 * lp.n_lower * math.log(2.0 * math.pi)
                 + 0.5 * np.log(lp.variances).sum()
                 + softplus(params.top_prior).sum())


def ancestral_sample(params: ModelParams, rng_seed: int, count: int):
    """Draw `count` joint samples in topological order (top layer first).

    Returns (DataBatch, list of LatentState); deterministic in rng_seed.
    """
    if count < 1:
        raise ConfigError("sample count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    layers = [None] * params.n_latent_layers
    p_top = sigmoid(params.top_prior)
    layers[-1] = (rng.random((count, params.layer_sizes[-1])) < p_top).astype(np.uint8)
    for l in range(params.n_latent_layers - 1, 0, -1):
        lp = params.layers[l]
        p = sigmoid(layers[l] @ lp.weights.T + lp.biases)
        layers[l - 1] = (rng.random(p.shape) < p).astype(np.uint8)
    lp = params.layers[0]
    act = layers[0] @ lp.weights.T + lp.biases
    if params.visible_kind == GAUSSIAN:
        X = act + rng.standard_normal(act.shape) * np.sqrt(lp.variances)
    else:
        X = (rng.random(act.shape) < sigmoid(act)).astype(float)
    states = [LatentState([layers[l][m] for l in range(params.n_latent_layers)])
              for m in range(count)]
    return DataBatch(X), states


def label_logits(hL: np.ndarray, params: ModelParams) -> np.ndarray:
    if params.label_head is None:
        raise ConfigError("model has no label head")
    hL = np.asarray(hL, dtype=float)
    return hL @ params.label_head.weights.T + params.label_head.biases


def label_log_posterior(y: int, hL: np.ndarray, params: ModelParams) -> float:
    """log softmax of the label head at class y, given the top-layer state."""
    z = label_logits(hL, params)
    if not 0 <= y < z.shape[-1]:
        raise ConfigError(f"label {y} outside [0, {z.shape[-1]})")
    return float(z[..., y] - logsumexp(z, axis=-1))
