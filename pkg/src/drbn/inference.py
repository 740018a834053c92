"""Posterior, MAP, and likelihood queries for (deep) regression Bayesian networks.

MAP inference runs coordinate ascent over latent units: each update sets one
unit to the argmax of its full conditional given the rest of the state, so the
joint probability never decreases.  The per-unit conditional is evaluated from
a cache of child-layer pre-activations, which a flip updates with one add or
subtract per child unit; every update therefore costs O(n_children) regardless
of the latent layer width.

The augmented variant initializes coordinate ascent from a factorized
inference network q(h_j | input) = sigm(v_j . input + s_j) trained to maximize
the usual evidence lower bound with a score-function gradient estimator.

Exact enumeration of the posterior and the marginal is provided as a
verification oracle for models whose total latent count fits under a cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EnumerationCapError, ShapeError, StaleCacheError
from .model import (
    BINARY,
    GAUSSIAN,
    DataBatch,
    LatentState,
    ModelParams,
    joint_log_prob_batch,
    log_sigmoid,
    logsumexp,
    sigmoid,
    softplus,
)

DEFAULT_ENUM_CAP = 20

FIXED = "fixed"
RANDOM_PERMUTATION = "seeded-random-permutation"


@dataclass
class CaConfig:
    """Coordinate-ascent controls.

    tol = 0 stops on the first sweep that flips nothing; a positive tol also
    stops once the per-sweep joint improvement falls to tol or below.
    """

    max_sweeps: int = 50
    tol: float = 0.0
    sweep_order: str = FIXED
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be at least 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.sweep_order not in (FIXED, RANDOM_PERMUTATION):
            raise ConfigError(f"unknown sweep order {self.sweep_order!r}")


@dataclass
class InferenceReport:
    """Outcome of one MAP search."""

    map_state: LatentState
    joint_log_prob: float
    iterations_used: int
    converged: bool
    trace: list[float] | None = None
    flips_used: int = 0


@dataclass
class InferenceNet:
    """Per-layer factorized posterior approximation; layer l reads layer l-1."""

    weights: list[np.ndarray]   # (n_h_l, n_input_l) each
    biases: list[np.ndarray]
    bound_trace: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(v, dtype=float) for v in self.weights]
        self.biases = [np.asarray(s, dtype=float) for s in self.biases]
        if len(self.weights) != len(self.biases):
            raise ShapeError("inference net needs one bias vector per weight matrix")


# ---------------------------------------------------------------------------
# exact enumeration oracles


def enumerate_states(n: int) -> np.ndarray:
    """All 2^n binary configurations, one per row; unit j is bit j."""
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def _check_cap(params: ModelParams, cap: int):
    total = sum(params.latent_sizes)
    if total > cap:
        raise EnumerationCapError(
            f"model has {total} latent variables, above the enumeration cap of {cap}")


def _split_layers(configs: np.ndarray, params: ModelParams) -> list[np.ndarray]:
    out, off = [], 0
    for n in params.latent_sizes:
        out.append(configs[:, off:off + n])
        off += n
    return out


@dataclass
class ExactPosterior:
    """Enumerated posterior table over all latent configurations."""

    configs: np.ndarray      # (K, total_latents), layer 1 in the low columns
    log_joint: np.ndarray    # (K,)
    log_marginal: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_joint - self.log_marginal)

    def state(self, k: int, params: ModelParams) -> LatentState:
        return LatentState([seg[0] for seg in _split_layers(self.configs[k:k + 1], params)])

    def argmax_state(self, params: ModelParams) -> LatentState:
        return self.state(int(np.argmax(self.log_joint)), params)


def exact_posterior(x: np.ndarray, params: ModelParams, cap: int = DEFAULT_ENUM_CAP) -> ExactPosterior:
    """Full table of P(h | x) by enumeration; refuses above the latent cap."""
    _check_cap(params, cap)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    configs = enumerate_states(sum(params.latent_sizes))
    layers = _split_layers(configs, params)
    lj = np.empty(len(configs))
    for lo in range(0, len(configs), 8192):
        hi = min(lo + 8192, len(configs))
        block = [h[lo:hi] for h in layers]
        lj[lo:hi] = joint_log_prob_batch(np.repeat(x, hi - lo, axis=0), block, params)
    return ExactPosterior(configs, lj, float(logsumexp(lj)))


def exact_marginal(x: np.ndarray, params: ModelParams, cap: int = DEFAULT_ENUM_CAP) -> float:
    """log P(x) = log sum over all latent configurations of the joint."""
    return exact_posterior(x, params, cap).log_marginal


def exact_map(x: np.ndarray, params: ModelParams, cap: int = DEFAULT_ENUM_CAP) -> InferenceReport:
    post = exact_posterior(x, params, cap)
    k = int(np.argmax(post.log_joint))
    return InferenceReport(post.state(k, params), float(post.log_joint[k]),
                           iterations_used=0, converged=True)


# ---------------------------------------------------------------------------
# coordinate ascent


def _random_state_batch(rng, sizes, m) -> list[np.ndarray]:
    return [(rng.random((m, n)) < 0.5).astype(np.uint8) for n in sizes]


def _label_flip_delta(z, u_col, y, hj):
    """Change of log softmax(z)[y] when unit j with head column u_col flips to 1."""
    z0 = z - hj[:, None] * u_col
    z1 = z0 + u_col
    return u_col[y] - (logsumexp(z1, axis=1) - logsumexp(z0, axis=1))


def _ca_sweeps(X, params, states, cfg, order_rng, labels=None, record_trace=False):
    """Coordinate-ascent sweeps over a batch, updating `states` in place.

    Returns (sweeps_run, total_flips, converged, trace or None).  Sweeps stop
    for the whole batch once no sample flips any unit.
    """
    M = X.shape[0]
    L = params.n_latent_layers
    gaussian = params.visible_kind == GAUSSIAN
    head = params.label_head if labels is not None else None
    if labels is not None and params.label_head is None:
        raise ConfigError("label-aware inference requires a label head")
    trace = None
    if record_trace:
        trace = [float(joint_log_prob_batch(X, states, params).mean())]

    total_flips = 0
    converged = False
    sweeps = 0
    for _ in range(cfg.max_sweeps):
        sweeps += 1
        flips = 0
        for l in range(1, L + 1):
            li = l - 1
            lower = params.layers[li]           # connects child layer (l-1) below
            child = X if l == 1 else states[li - 1].astype(float)
            w_dn, b_dn = lower.weights, lower.biases
            dn_act = states[li].astype(float) @ w_dn.T + b_dn
            if l == L:
                up = np.broadcast_to(params.top_prior, (M, params.layer_sizes[-1]))
            else:
                upper = params.layers[li + 1]
                up = states[li + 1].astype(float) @ upper.weights.T + upper.biases
            z = None
            if head is not None and l == L:
                z = states[li].astype(float) @ head.weights.T + head.biases
            n_l = params.layer_sizes[l]
            order = np.arange(n_l) if cfg.sweep_order == FIXED else order_rng.permutation(n_l)
            gaussian_child = gaussian and l == 1
            var = lower.variances if gaussian_child else None
            for j in order:
                w_col = w_dn[:, j]
                hj = states[li][:, j].astype(float)
                a0 = dn_act - hj[:, None] * w_col
                if gaussian_child:
                    delta = ((child - a0) * (w_col / var)).sum(axis=1) - 0.5 * (w_col ** 2 / var).sum()
                else:
                    a1 = a0 + w_col
                    delta = child @ w_col - softplus(a1).sum(axis=1) + softplus(a0).sum(axis=1)
                logit_j = up[:, j] + delta
                if z is not None:
                    logit_j = logit_j + _label_flip_delta(z, head.weights[:, j], labels, hj)
                new = (logit_j >= 0.0).astype(np.uint8)
                changed = new != states[li][:, j]
                if changed.any():
                    sgn = new[changed].astype(float) * 2.0 - 1.0
                    dn_act[changed] += sgn[:, None] * w_col
                    if z is not None:
                        z[changed] += sgn[:, None] * head.weights[:, j]
                    states[li][:, j] = new
                    flips += int(changed.sum())
        total_flips += flips
        if record_trace:
            trace.append(float(joint_log_prob_batch(X, states, params).mean()))
        if flips == 0:
            converged = True
            break
        if record_trace and cfg.tol > 0 and trace[-1] - trace[-2] <= cfg.tol:
            converged = True
            break
    return sweeps, total_flips, converged, trace


def ca_map(x: np.ndarray, params: ModelParams, init: LatentState, cfg: CaConfig | None = None,
           label: int | None = None) -> InferenceReport:
    """MAP search by coordinate ascent from `init`, best of cfg.restarts runs.

    Restart r > 0 starts from a Bernoulli(0.5) state seeded by (cfg.seed, r).
    The report carries the winning run's per-sweep joint trace, which is
    non-decreasing by construction.
    """
    cfg = cfg or CaConfig()
    x = np.asarray(x, dtype=float).reshape(1, -1)
    labels = None if label is None else np.array([label])
    best = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        if r == 0:
            states = [h.reshape(1, -1).copy() for h in init.layers]
        else:
            states = _random_state_batch(rng, params.latent_sizes, 1)
        sweeps, flips, converged, trace = _ca_sweeps(
            x, params, states, cfg, rng, labels=labels, record_trace=True)
        lj = float(joint_log_prob_batch(x, states, params)[0])
        report = InferenceReport(
            LatentState([h[0] for h in states]), lj, sweeps, converged,
            trace=trace, flips_used=flips)
        if best is None or report.joint_log_prob > best.joint_log_prob:
            best = report
    return best


def ca_map_batch(X: np.ndarray, params: ModelParams, init: list[np.ndarray],
                 cfg: CaConfig | None = None, labels=None):
    """Batched coordinate ascent; states are updated per sample independently.

    Returns (states, joint_log_probs, sweeps_run).  `init` is consumed.
    """
    cfg = cfg or CaConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng([cfg.seed, 0])
    sweeps, _, _, _ = _ca_sweeps(X, params, init, cfg, rng, labels=labels)
    return init, joint_log_prob_batch(X, init, params), sweeps


def map_states_batch(X: np.ndarray, params: ModelParams, method: str = "ca",
                     net: InferenceNet | None = None, cfg: CaConfig | None = None,
                     labels=None, cap: int = DEFAULT_ENUM_CAP):
    """Per-sample MAP states for a whole batch with the chosen routine.

    method "ca" uses cfg.restarts random starts; "aug_ca" starts from the
    inference net plus cfg.restarts - 1 random starts; "exact" enumerates.
    The per-sample best run is kept.
    """
    cfg = cfg or CaConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M = X.shape[0]
    if method == "exact":
        states = [np.empty((M, n), dtype=np.uint8) for n in params.latent_sizes]
        for m in range(M):
            rep = exact_map(X[m], params, cap)
            for l, h in enumerate(rep.map_state.layers):
                states[l][m] = h
        return states, joint_log_prob_batch(X, states, params)
    if method not in ("ca", "aug_ca"):
        raise ConfigError(f"unknown map method {method!r}")

    inits = []
    if method == "aug_ca":
        if net is None:
            raise ConfigError("aug_ca needs a trained inference net")
        inits.append([q.copy() for q in inference_net_states_batch(X, net)])
        n_random = cfg.restarts - 1
    else:
        n_random = cfg.restarts
    for r in range(n_random):
        rng = np.random.default_rng([cfg.seed, 17, r])
        inits.append(_random_state_batch(rng, params.latent_sizes, M))

    best_states, best_lj = None, None
    for init in inits:
        states, lj, _ = ca_map_batch(X, params, init, cfg, labels=labels)
        if best_states is None:
            best_states, best_lj = states, lj
        else:
            better = lj > best_lj
            for l in range(len(best_states)):
                best_states[l][better] = states[l][better]
            best_lj = np.maximum(best_lj, lj)
    return best_states, best_lj


# ---------------------------------------------------------------------------
# single-flip conditionals and the recursive ratio cache


class FlipCache:
    """Child-layer pre-activations a_i = w_i . h + b_i for a single-layer model.

    Built once in O(n_d * n_h); each accepted flip updates it with one add or
    subtract per visible unit.  `ops` counts scalar array elements touched by
    ratio evaluations and flips, for complexity probes.
    """

    def __init__(self, x: np.ndarray, params: ModelParams, h: np.ndarray, debug: bool = False):
        if params.n_latent_layers != 1:
            raise ConfigError("the flip cache covers single-latent-layer models")
        self.params = params
        self.x = np.asarray(x, dtype=float)
        lp = params.layers[0]
        if self.x.shape != (lp.n_lower,):
            raise ShapeError("input width does not match the model")
        self.act = lp.weights @ np.asarray(h, dtype=float) + lp.biases
        self.debug = debug
        self.ops = 0

    def check(self, h: np.ndarray):
        lp = self.params.layers[0]
        fresh = lp.weights @ np.asarray(h, dtype=float) + lp.biases
        if not np.allclose(fresh, self.act, atol=1e-8):
            raise StaleCacheError("cached activations disagree with the current state")

    def flip(self, j: int, new_value: int, old_value: int):
        """Apply one accepted unit change to the cached activations."""
        delta = float(new_value) - float(old_value)
        if delta != 0.0:
            self.act += delta * self.params.layers[0].weights[:, j]
        self.ops += self.act.size


def ca_flip_logit(j: int, x: np.ndarray, h_current: np.ndarray, cache: FlipCache) -> float:
    """Log odds of unit j being on given everything else, from the cache.

    Equals joint(h_j=1) - joint(h_j=0) up to floating-point roundoff while
    costing O(n_d) instead of two full joint evaluations.
    """
    params = cache.params
    if cache.debug:
        cache.check(h_current)
    lp = params.layers[0]
    w_col = lp.weights[:, j]
    hj = float(h_current[j])
    a0 = cache.act - hj * w_col
    if params.visible_kind == GAUSSIAN:
        var = lp.variances
        delta = float(((cache.x - a0) * (w_col / var)).sum() - 0.5 * (w_col ** 2 / var).sum())
        cache.ops += 4 * a0.size
    else:
        a1 = a0 + w_col
        delta = float(cache.x @ w_col - softplus(a1).sum() + softplus(a0).sum())
        cache.ops += 4 * a0.size
    return float(params.top_prior[j] + delta)


def ca_flip_ratio(j: int, x: np.ndarray, h_current: np.ndarray, cache: FlipCache) -> float:
    """P(h_j = 1 | x, h_-j) from cached activations via the odds ratio.

    Numerically equivalent to recomputing two full joints and forming the
    same conditional, at O(n_d) cost per call; the caller applies accepted
    flips through cache.flip.
    """
    return float(sigmoid(ca_flip_logit(j, x, h_current, cache)))


def pseudo_likelihood_posterior(x: np.ndarray, params: ModelParams, h_ref: LatentState) -> list[np.ndarray]:
    """Local conditionals P(h_j = 1 | h_ref without j, x), one vector per layer.

    Every entry depends only on the fixed reference state, so the locals are
    independently computable (and trivially parallelizable).
    """
    x = np.asarray(x, dtype=float)
    layers_ref = [np.asarray(h, dtype=float) for h in h_ref.layers]
    if len(layers_ref) != params.n_latent_layers:
        raise ShapeError("reference state layer count does not match the model")
    L = params.n_latent_layers
    out = []
    for l in range(1, L + 1):
        li = l - 1
        lower = params.layers[li]
        child = x if l == 1 else layers_ref[li - 1]
        h_l = layers_ref[li]
        dn_act = lower.weights @ h_l + lower.biases
        if l == L:
            up = params.top_prior
        else:
            upper = params.layers[li + 1]
            up = upper.weights @ layers_ref[li + 1] + upper.biases
        # rows: candidate unit j; columns: child units
        a0 = dn_act[None, :] - h_l[:, None] * lower.weights.T
        if params.visible_kind == GAUSSIAN and l == 1:
            var = lower.variances
            delta = ((child - a0) * (lower.weights.T / var)).sum(axis=1) \
                - 0.5 * (lower.weights.T ** 2 / var).sum(axis=1)
        else:
            a1 = a0 + lower.weights.T
            delta = lower.weights.T @ child - softplus(a1).sum(axis=1) + softplus(a0).sum(axis=1)
        out.append(sigmoid(up + delta))
    return out


# ---------------------------------------------------------------------------
# inference network


def _net_layer_probs(inputs: np.ndarray, v: np.ndarray, s: np.ndarray) -> np.ndarray:
    return sigmoid(inputs @ v.T + s)


def inference_net_probs(x: np.ndarray, net: InferenceNet) -> list[np.ndarray]:
    """Per-layer unit probabilities; upper layers read the thresholded layer below."""
    cur = np.asarray(x, dtype=float)
    out = []
    for v, s in zip(net.weights, net.biases):
        q = _net_layer_probs(cur, v, s)
        out.append(q)
        cur = (q >= 0.5).astype(float)
    return out


def inference_net_states_batch(X: np.ndarray, net: InferenceNet) -> list[np.ndarray]:
    cur = np.atleast_2d(np.asarray(X, dtype=float))
    states = []
    for v, s in zip(net.weights, net.biases):
        q = _net_layer_probs(cur, v, s)
        cur = (q >= 0.5).astype(float)
        states.append(cur.astype(np.uint8))
    return states


def inference_net_map(x: np.ndarray, net: InferenceNet) -> LatentState:
    """Factorized MAP: threshold every unit at 0.5 (ties map to 1)."""
    return LatentState([q >= 0.5 for q in inference_net_probs(x, net)])


def _mean_prior_logits(params: ModelParams, l: int) -> np.ndarray:
    """Top-down mean-propagation surrogate for the prior logits of layer l."""
    if l == params.n_latent_layers:
        return params.top_prior.copy()
    m = sigmoid(params.top_prior)
    for k in range(params.n_latent_layers - 1, l - 1, -1):
        lp = params.layers[k]
        act = lp.weights @ m + lp.biases
        if k == l:
            return act
        m = sigmoid(act)
    raise ConfigError("layer index out of range")


def _train_single_layer_net(params, X, epochs, lr, rng, batch_size, baseline_decay):
    """Score-function ascent on the evidence lower bound for one latent layer."""
    n_d, n_h = params.n_visible, params.latent_sizes[0]
    v = np.zeros((n_h, n_d))
    s = np.zeros(n_h)
    baseline = None
    trace = []
    M = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(M)
        epoch_bound, seen = 0.0, 0
        for lo in range(0, M, batch_size):
            idx = order[lo:lo + batch_size]
            xb = X[idx]
            act = xb @ v.T + s
            q = sigmoid(act)
            h = (rng.random(q.shape) < q).astype(float)
            log_q = (h * log_sigmoid(act) + (1 - h) * log_sigmoid(-act)).sum(axis=1)
            ell = joint_log_prob_batch(xb, [h], params) - log_q
            if baseline is None:
                baseline = float(ell.mean())
            signal = ell - baseline
            baseline = baseline_decay * baseline + (1 - baseline_decay) * float(ell.mean())
            g = signal[:, None] * (h - q)
            v += lr * (g.T @ xb) / len(idx)
            s += lr * g.mean(axis=0)
            epoch_bound += float(ell.sum())
            seen += len(idx)
        trace.append(epoch_bound / seen)
    return v, s, trace


def train_inference_net(params: ModelParams, data: DataBatch, epochs: int = 30,
                        lr: float = 0.1, rng_seed: int = 0, batch_size: int = 100,
                        baseline_decay: float = 0.9) -> InferenceNet:
    """Fit the factorized net by stochastic ascent of the lower bound.

    Uses the likelihood-ratio (score function) estimator with an exponential
    moving-average baseline.  Deep models are handled layer by layer, bottom
    up, each layer trained on the thresholded states of the one below against
    that layer's sub-model (mean-propagated prior logits above it).
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    rng = np.random.default_rng(rng_seed)
    X = data.vectors
    weights, biases, traces = [], [], []
    for l in range(1, params.n_latent_layers + 1):
        li = l - 1
        sub = ModelParams(
            BINARY if l > 1 else params.visible_kind,
            [params.layer_sizes[li], params.layer_sizes[l]],
            [params.layers[li]],
            _mean_prior_logits(params, l))
        v, s, tr = _train_single_layer_net(sub, X, epochs, lr, rng, batch_size, baseline_decay)
        weights.append(v)
        biases.append(s)
        traces.append(tr)
        X = (sigmoid(X @ v.T + s) >= 0.5).astype(float)
    return InferenceNet(weights, biases, bound_trace=traces)


def inference_net_bound(x: np.ndarray, params: ModelParams, net: InferenceNet,
                        cap: int = DEFAULT_ENUM_CAP) -> float:
    """Exact evidence lower bound of the net at x, by enumeration.

    Single-latent-layer models only; always at most the exact log marginal.
    """
    if params.n_latent_layers != 1:
        raise ConfigError("the enumerated bound covers single-latent-layer models")
    _check_cap(params, cap)
    x = np.asarray(x, dtype=float)
    act = net.weights[0] @ x + net.biases[0]
    configs = enumerate_states(params.latent_sizes[0]).astype(float)
    log_q = configs @ log_sigmoid(act) + (1 - configs) @ log_sigmoid(-act)
    lj = joint_log_prob_batch(np.repeat(x[None, :], len(configs), axis=0), [configs], params)
    return float(np.exp(log_q) @ (lj - log_q))


def aug_ca_map(x: np.ndarray, params: ModelParams, net: InferenceNet,
               cfg: CaConfig | None = None, label: int | None = None) -> InferenceReport:
    """Coordinate ascent initialized at the inference net's thresholded state."""
    if net is None:
        raise ConfigError("aug_ca needs a trained inference net")
    return ca_map(x, params, inference_net_map(x, net), cfg, label=label)


def marginal_log_likelihood_max(x: np.ndarray, params: ModelParams, map_source: str = "ca",
                                net: InferenceNet | None = None, cfg: CaConfig | None = None,
                                cap: int = DEFAULT_ENUM_CAP) -> float:
    """Max-form likelihood: the joint at the MAP state of the chosen routine.

    Always a lower bound on the exact log marginal (a max never exceeds the
    sum it replaces).
    """
    cfg = cfg or CaConfig()
    if map_source == "exact":
        return exact_map(x, params, cap).joint_log_prob
    if map_source == "aug_ca":
        return aug_ca_map(x, params, net, cfg).joint_log_prob
    if map_source == "ca":
        rng = np.random.default_rng([cfg.seed, 23])
        init = LatentState([h[0] for h in _random_state_batch(rng, params.latent_sizes, 1)])
        return ca_map(x, params, init, cfg).joint_log_prob
    raise ConfigError(f"unknown map source {map_source!r}")
