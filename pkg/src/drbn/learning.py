"""Parameter estimation for (deep) regression Bayesian networks.

Unsupervised learning alternates two steps: a MAP assignment of every
sample's latent state under the current parameters, then a parameter update
maximizing the summed joint log probability of the (sample, assignment)
pairs.  The assignment step reuses coordinate ascent (warm-started from the
previous epoch, optionally augmented by the inference net once it has warmed
up); the update step is closed-form ridge regression for Gaussian visibles
and stochastic gradient ascent for binary visibles.

Deep models are pre-trained greedily bottom-up and then fine-tuned globally
over the whole latent stack.  A variational baseline (inference-net lower
bound, score-function gradients) and an exact enumerated-likelihood method
are included for benchmark comparisons on small models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import time

import numpy as np

from .errors import ConfigError, EnumerationCapError, ShapeError, TrainingError
from .inference import (
    DEFAULT_ENUM_CAP,
    CaConfig,
    InferenceNet,
    _random_state_batch,
    ca_map_batch,
    enumerate_states,
    inference_net_states_batch,
    map_states_batch,
    train_inference_net,
)
from .model import (
    BINARY,
    GAUSSIAN,
    VARIANCE_FLOOR,
    DataBatch,
    LabelHead,
    LatentState,
    LayerParams,
    ModelParams,
    joint_log_prob_batch,
    log_sigmoid,
    logit,
    logsumexp,
    sigmoid,
)

CLOSED_FORM_GAUSSIAN = "closed_form_gaussian"
SGD_BINARY = "sgd_binary"

M_STEP_KINDS = {CLOSED_FORM_GAUSSIAN: GAUSSIAN, SGD_BINARY: BINARY}

RIDGE = 1e-6
PRIOR_MEAN_CLIP = 1e-3


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 100
    seed: int = 0
    m_step: str = SGD_BINARY
    e_step: str = "aug_ca"
    ca_cfg: CaConfig = field(default_factory=CaConfig)
    weight_init_scale: float = 0.01
    m_epochs: int = 1             # gradient passes per update step
    in_epochs: int = 3            # inference-net refresh budget per epoch
    in_lr: float = 0.1
    warmup_epochs: int = 2        # plain CA until the net is worth training
    converge_tol: float = 1e-4    # nats/sample
    converge_patience: int = 3

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.m_step not in M_STEP_KINDS:
            raise ConfigError(f"unknown m_step {self.m_step!r}")
        if self.e_step not in ("ca", "aug_ca"):
            raise ConfigError(f"unknown e_step {self.e_step!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    @property
    def visible_kind(self) -> str:
        return M_STEP_KINDS[self.m_step]


@dataclass
class LearnTrace:
    objective: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    param_norm: list[float] = field(default_factory=list)

    def append(self, obj: float, sec: float, norm: float):
        self.objective.append(float(obj))
        self.seconds.append(float(sec))
        self.param_norm.append(float(norm))

    def __len__(self) -> int:
        return len(self.objective)


# ---------------------------------------------------------------------------
# gradients of the assigned-joint objective


@dataclass
class ParamGrad:
    layers: list[tuple]           # (dW, db, dlogvar or None) per layer
    top: np.ndarray
    label: tuple | None = None    # (dU, dc)


def _as_state_arrays(states, M=None):
    if isinstance(states, list) and states and isinstance(states[0], LatentState):
        L = len(states[0].layers)
        return [np.stack([s.layers[l] for s in states]).astype(float) for l in range(L)]
    return [np.atleast_2d(np.asarray(h, dtype=float)) for h in states]


def learning_objective(params: ModelParams, X, states, labels=None) -> float:
    """Sum over samples of log P(x, h*) (+ log P(y | h*) when labels given)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    states = _as_state_arrays(states)
    total = joint_log_prob_batch(X, states, params)
    if labels is not None:
        head = params.label_head
        if head is None:
            raise ConfigError("labels supplied but the model has no label head")
        z = states[-1] @ head.weights.T + head.biases
        total = total + z[np.arange(len(z)), labels] - logsumexp(z, axis=1)
    return float(total.sum())


def joint_grad(params: ModelParams, X, states, weights=None, labels=None) -> ParamGrad:
    """Gradient of `learning_objective` in all parameters.

    Gaussian variances are differentiated in log space.  `weights` scales
    per-sample contributions (used by the enumerated-posterior methods).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    states = _as_state_arrays(states)
    M = X.shape[0]
    w = np.ones(M) if weights is None else np.asarray(weights, dtype=float)
    grads = []
    for l in range(params.n_latent_layers):
        child = X if l == 0 else states[l - 1]
        upper = states[l]
        lp = params.layers[l]
        act = upper @ lp.weights.T + lp.biases
        dlv = None
        if l == 0 and params.visible_kind == GAUSSIAN:
            r = (child - act) / lp.variances * w[:, None]
            dlv = (0.5 * ((child - act) ** 2 / lp.variances - 1.0) * w[:, None]).sum(axis=0)
        else:
            r = (child - sigmoid(act)) * w[:, None]
        grads.append((r.T @ upper, r.sum(axis=0), dlv))
    top = states[-1]
    dtop = ((top - sigmoid(params.top_prior)) * w[:, None]).sum(axis=0)
    label = None
    if labels is not None:
        head = params.label_head
        if head is None:
            raise ConfigError("labels supplied but the model has no label head")
        z = top @ head.weights.T + head.biases
        p = np.exp(z - logsumexp(z, axis=1)[:, None])
        g = -p
        g[np.arange(M), labels] += 1.0
        g = g * w[:, None]
        label = (g.T @ top, g.sum(axis=0))
    return ParamGrad(grads, dtop, label)


def apply_grad(params: ModelParams, grad: ParamGrad, scale: float) -> ModelParams:
    layers = []
    for lp, (dW, db, dlv) in zip(params.layers, grad.layers):
        var = lp.variances
        if dlv is not None:
            var = np.maximum(np.exp(np.log(lp.variances) + scale * dlv), VARIANCE_FLOOR)
        elif var is not None:
            var = var.copy()
        layers.append(LayerParams(lp.weights + scale * dW, lp.biases + scale * db, var))
    head = params.label_head
    if grad.label is not None:
        head = LabelHead(head.weights + scale * grad.label[0], head.biases + scale * grad.label[1])
    elif head is not None:
        head = LabelHead(head.weights.copy(), head.biases.copy())
    return ModelParams(params.visible_kind, list(params.layer_sizes), layers,
                       params.top_prior + scale * grad.top, label_head=head)


def flatten_params(params: ModelParams, include_label: bool = True) -> np.ndarray:
    """Pack all learnable coordinates into one vector (variances as log)."""
    parts = []
    for lp in params.layers:
        parts.append(lp.weights.ravel())
        parts.append(lp.biases)
        if lp.variances is not None:
            parts.append(np.log(lp.variances))
    parts.append(params.top_prior)
    if include_label and params.label_head is not None:
        parts.append(params.label_head.weights.ravel())
        parts.append(params.label_head.biases)
    return np.concatenate(parts)


def unflatten_params(vec: np.ndarray, like: ModelParams, include_label: bool = True) -> ModelParams:
    vec = np.asarray(vec, dtype=float)
    pos = 0

    def take(n):
        nonlocal pos
        out = vec[pos:pos + n]
        pos += n
        return out

    layers = []
    for lp in like.layers:
        W = take(lp.weights.size).reshape(lp.weights.shape)
        b = take(lp.biases.size).copy()
        var = np.exp(take(lp.variances.size)) if lp.variances is not None else None
        layers.append(LayerParams(W.copy(), b, var))
    top = take(like.top_prior.size).copy()
    head = like.label_head
    if include_label and head is not None:
        U = take(head.weights.size).reshape(head.weights.shape).copy()
        c = take(head.biases.size).copy()
        head = LabelHead(U, c)
    elif head is not None:
        head = LabelHead(head.weights.copy(), head.biases.copy())
    if pos != vec.size:
        raise ShapeError("flat vector length does not match the model")
    return ModelParams(like.visible_kind, list(like.layer_sizes), layers, top, label_head=head)


def flatten_grad(grad: ParamGrad, params: ModelParams, include_label: bool = True) -> np.ndarray:
    parts = []
    for (dW, db, dlv), lp in zip(grad.layers, params.layers):
        parts.append(dW.ravel())
        parts.append(db)
        if lp.variances is not None:
            parts.append(dlv if dlv is not None else np.zeros_like(lp.variances))
    parts.append(grad.top)
    if include_label and params.label_head is not None:
        if grad.label is not None:
            parts.append(grad.label[0].ravel())
            parts.append(grad.label[1])
        else:
            parts.append(np.zeros(params.label_head.weights.size))
            parts.append(np.zeros(params.label_head.biases.size))
    return np.concatenate(parts)


def param_norm(params: ModelParams) -> float:
    return float(np.linalg.norm(flatten_params(params)))


# ---------------------------------------------------------------------------
# update steps


def m_step_gaussian(data: DataBatch, assignments, ridge: float = RIDGE):
    """Closed-form update for Gaussian visibles.

    Per visible unit, (w_i, b_i) solve the ridge least-squares regression of
    x_i on [h; 1]; the variance is the mean squared residual (floored); the
    prior logits are the logit of the clipped assignment means.
    """
    X = data.vectors
    H = _as_state_arrays(assignments)[0] if not isinstance(assignments, np.ndarray) \
        else np.asarray(assignments, dtype=float)
    if H.shape[0] != X.shape[0]:
        raise ShapeError("one assignment per sample required")
    M, n_h = H.shape
    phi = np.hstack([H, np.ones((M, 1))])
    G = phi.T @ phi + ridge * np.eye(n_h + 1)
    try:
        beta = np.linalg.solve(G, phi.T @ X)
    except np.linalg.LinAlgError as e:
        raise TrainingError(f"normal equations singular despite ridge: {e}") from e
    W = beta[:n_h].T
    b = beta[n_h]
    resid = X - phi @ beta
    var = np.maximum((resid ** 2).mean(axis=0), VARIANCE_FLOOR)
    d = logit(np.clip(H.mean(axis=0), PRIOR_MEAN_CLIP, 1 - PRIOR_MEAN_CLIP))
    return LayerParams(W, b, var), d


def m_step_binary_sgd(data: DataBatch, assignments, lr: float, epochs: int, seed,
                      layer: LayerParams, top_prior: np.ndarray, batch_size: int = 100):
    """Stochastic gradient ascent on the assigned joint for binary visibles.

    Refines the given (layer, top_prior) in place of a closed form; zero
    epochs returns them unchanged.  Deterministic in `seed`.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    X = data.vectors
    H = _as_state_arrays(assignments)[0] if not isinstance(assignments, np.ndarray) \
        else np.asarray(assignments, dtype=float)
    params = ModelParams(BINARY, [X.shape[1], H.shape[1]],
                         [LayerParams(layer.weights.copy(), layer.biases.copy())],
                         np.array(top_prior, dtype=float))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for lo in range(0, X.shape[0], batch_size):
            idx = order[lo:lo + batch_size]
            g = joint_grad(params, X[idx], [H[idx]])
            params = apply_grad(params, g, lr / len(idx))
    return params.layers[0], params.top_prior


# ---------------------------------------------------------------------------
# two-step (assign, maximize) training


def init_params(sizes, visible_kind: str, data: DataBatch, cfg: TrainConfig) -> ModelParams:
    """Uniform small random weights, zero biases and prior logits.

    Gaussian models start at the per-dimension data variance (floored).
    """
    sizes = [int(n) for n in sizes]
    rng = np.random.default_rng(cfg.seed)
    scale = cfg.weight_init_scale
    layers = []
    for l in range(len(sizes) - 1):
        W = rng.uniform(-scale, scale, (sizes[l], sizes[l + 1]))
        var = None
        if l == 0 and visible_kind == GAUSSIAN:
            var = np.maximum(data.vectors.var(axis=0), VARIANCE_FLOOR)
        layers.append(LayerParams(W, np.zeros(sizes[l]), var))
    return ModelParams(visible_kind, sizes, layers, np.zeros(sizes[-1]))


def _assign_step(X, params, cfg: TrainConfig, epoch: int, prev=None, net=None, labels=None):
    """Best-of-candidates MAP assignments: previous state, net state, random."""
    M = X.shape[0]
    inits = []
    if prev is not None:
        inits.append([h.copy() for h in prev])
    if net is not None:
        inits.append(inference_net_states_batch(X, net))
    r = 0
    while len(inits) < max(cfg.ca_cfg.restarts, 1):
        rng = np.random.default_rng([cfg.seed, 1009, epoch, r])
        inits.append(_random_state_batch(rng, params.latent_sizes, M))
        r += 1
    best_states, best_lj = None, None
    for init in inits:
        states, lj, _ = ca_map_batch(X, params, init, cfg.ca_cfg, labels=labels)
        if best_states is None:
            best_states, best_lj = states, lj
        else:
            better = lj > best_lj
            for l in range(len(states)):
                best_states[l][better] = states[l][better]
            best_lj = np.maximum(best_lj, lj)
    return best_states, best_lj


def _maybe_net(params, data, cfg: TrainConfig, epoch: int):
    if cfg.e_step != "aug_ca" or epoch < cfg.warmup_epochs:
        return None
    return train_inference_net(params, data, epochs=cfg.in_epochs, lr=cfg.in_lr,
                               rng_seed=[cfg.seed, 7, epoch], batch_size=cfg.batch_size)


def _converged(objs, cfg: TrainConfig) -> bool:
    k = cfg.converge_patience
    if len(objs) < k + 1:
        return False
    recent = np.diff(objs[-(k + 1):])
    return bool((recent < cfg.converge_tol).all())


def _check_finite(value: float, epoch: int):
    if not np.isfinite(value):
        raise TrainingError(f"objective became non-finite at epoch {epoch}")


def _fit_rbn(data: DataBatch, sizes, cfg: TrainConfig):
    if len(sizes) != 2:
        raise ConfigError("two layer sizes expected: (n_visible, n_hidden)")
    if sizes[0] != data.vectors.shape[1]:
        raise ShapeError("visible size does not match the data")
    if len(data) == 0:
        raise ConfigError("training data is empty")
    kind = cfg.visible_kind
    params = init_params(sizes, kind, data, cfg)
    X = data.vectors
    trace = LearnTrace()
    states, net = None, None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        net = _maybe_net(params, data, cfg, epoch) or net
        states, lj = _assign_step(X, params, cfg, epoch, prev=states, net=net)
        obj = float(lj.mean())
        _check_finite(obj, epoch)
        if kind == GAUSSIAN:
            layer, d = m_step_gaussian(data, states[0])
        else:
            layer, d = m_step_binary_sgd(data, states[0], cfg.lr, cfg.m_epochs,
                                         [cfg.seed, 13, epoch], params.layers[0],
                                         params.top_prior, cfg.batch_size)
        params = ModelParams(kind, list(params.layer_sizes), [layer], d)
        trace.append(obj, time.perf_counter() - t0, param_norm(params))
        if _converged(trace.objective, cfg):
            break
    if states is None:  # zero-epoch run still yields assignments for stacking
        states, _ = _assign_step(X, params, cfg, 0, prev=None, net=net)
    return params, trace, net, states


def fit_rbn_unsupervised(data: DataBatch, sizes, cfg: TrainConfig):
    """Two-step maximum-likelihood training of a single-latent-layer model."""
    params, trace, _, _ = _fit_rbn(data, sizes, cfg)
    return params, trace


def pretrain_layerwise(data: DataBatch, sizes, cfg: TrainConfig) -> ModelParams:
    """Greedy bottom-up training; layers below the one being fit are frozen.

    The input to layer l is the MAP assignment of layer l-1 under the model
    trained so far.
    """
    sizes = [int(n) for n in sizes]
    if len(sizes) < 2:
        raise ConfigError("need at least (n_visible, n_hidden)")
    params, _, net, states = _fit_rbn(data, sizes[:2], cfg)
    layers = [params.layers[0]]
    top = params.top_prior
    inputs = DataBatch(states[0].astype(float))
    for l in range(2, len(sizes)):
        sub_cfg = replace(cfg, m_step=SGD_BINARY, ca_cfg=cfg.ca_cfg)
        sub, _, net, states = _fit_rbn(inputs, sizes[l - 1:l + 1], sub_cfg)
        layers.append(sub.layers[0])
        top = sub.top_prior
        inputs = DataBatch(states[0].astype(float))
    return ModelParams(cfg.visible_kind, sizes, layers, top)


def finetune_global(params: ModelParams, data: DataBatch, cfg: TrainConfig):
    """Joint refinement of every layer on full-stack MAP assignments."""
    X = data.vectors
    trace = LearnTrace()
    params = unflatten_params(flatten_params(params), params)  # private copy
    states, net = None, None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        net = _maybe_net(params, data, cfg, epoch) or net
        states, lj = _assign_step(X, params, cfg, epoch, prev=states, net=net)
        obj = float(lj.mean())
        _check_finite(obj, epoch)
        rng = np.random.default_rng([cfg.seed, 29, epoch])
        for _ in range(cfg.m_epochs):
            order = rng.permutation(X.shape[0])
            for lo in range(0, X.shape[0], cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                g = joint_grad(params, X[idx], [h[idx] for h in states])
                params = apply_grad(params, g, cfg.lr / len(idx))
        trace.append(obj, time.perf_counter() - t0, param_norm(params))
        if _converged(trace.objective, cfg):
            break
    return params, trace


def finetune_supervised(params: ModelParams, data: DataBatch, cfg: TrainConfig,
                        n_classes: int | None = None):
    """Discriminative refinement on labeled data.

    The assignment step maximizes the label-weighted joint (coordinate ascent
    with the label factor attached to the top layer); the update step ascends
    the same objective in all parameters including the label head.  The trace
    records the mean label log posterior at the assignments.
    """
    if data.labels is None:
        raise ConfigError("supervised fine-tuning requires labels")
    y = data.labels
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if params.label_head is None:
        head = LabelHead(np.zeros((n_classes, params.layer_sizes[-1])), np.zeros(n_classes))
        params = ModelParams(params.visible_kind, list(params.layer_sizes),
                             params.layers, params.top_prior, label_head=head)
    params = unflatten_params(flatten_params(params), params)
    X = data.vectors
    trace = LearnTrace()
    states, net = None, None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        net = _maybe_net(params, data, cfg, epoch) or net
        states, _ = _assign_step(X, params, cfg, epoch, prev=states, net=net, labels=y)
        head = params.label_head
        z = states[-1].astype(float) @ head.weights.T + head.biases
        label_obj = float((z[np.arange(len(z)), y] - logsumexp(z, axis=1)).mean())
        _check_finite(label_obj, epoch)
        rng = np.random.default_rng([cfg.seed, 37, epoch])
        for _ in range(cfg.m_epochs):
            order = rng.permutation(X.shape[0])
            for lo in range(0, X.shape[0], cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                g = joint_grad(params, X[idx], [h[idx] for h in states], labels=y[idx])
                params = apply_grad(params, g, cfg.lr / len(idx))
        trace.append(label_obj, time.perf_counter() - t0, param_norm(params))
    return params, trace


def classify(params: ModelParams, X, net: InferenceNet | None = None,
             cfg: CaConfig | None = None) -> np.ndarray:
    """Predict labels: MAP latent state, then the label head's argmax."""
    if params.label_head is None:
        raise ConfigError("classification requires a label head")
    method = "aug_ca" if net is not None else "ca"
    states, _ = map_states_batch(np.atleast_2d(X), params, method=method, net=net, cfg=cfg)
    z = states[-1].astype(float) @ params.label_head.weights.T + params.label_head.biases
    return np.argmax(z, axis=1)


# ---------------------------------------------------------------------------
# enumerated-likelihood evaluation and the two comparison baselines


def _config_layers(params: ModelParams):
    configs = enumerate_states(sum(params.latent_sizes))
    out, off = [], 0
    for n in params.latent_sizes:
        out.append(configs[:, off:off + n].astype(float))
        off += n
    return out


def joint_table(params: ModelParams, X, cap: int = DEFAULT_ENUM_CAP) -> np.ndarray:
    """(samples x configurations) joint log probabilities by enumeration."""
    total = sum(params.latent_sizes)
    if total > cap:
        raise EnumerationCapError(
            f"model has {total} latent variables, above the enumeration cap of {cap}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if params.n_latent_layers == 1 and params.visible_kind == BINARY:
        # one matmul over all configurations instead of a per-config pass
        H = _config_layers(params)[0]
        lp = params.layers[0]
        act = H @ lp.weights.T + lp.biases            # (K, n_d)
        sp = np.maximum(act, 0) + np.log1p(np.exp(-np.abs(act)))
        prior = H @ params.top_prior - (np.maximum(params.top_prior, 0)
                                        + np.log1p(np.exp(-np.abs(params.top_prior)))).sum()
        return X @ act.T - sp.sum(axis=1)[None, :] + prior[None, :]
    layers = _config_layers(params)
    K = layers[0].shape[0]
    out = np.empty((X.shape[0], K))
    for k in range(K):
        state = [np.repeat(h[k:k + 1], X.shape[0], axis=0) for h in layers]
        out[:, k] = joint_log_prob_batch(X, state, params)
    return out


def exact_mean_log_likelihood(params: ModelParams, X, cap: int = DEFAULT_ENUM_CAP) -> float:
    """Mean over samples of the exact log marginal, by enumeration."""
    return float(logsumexp(joint_table(params, X, cap), axis=1).mean())


def exact_loglik_grad(params: ModelParams, X, cap: int = DEFAULT_ENUM_CAP) -> ParamGrad:
    """Gradient of the summed exact log marginal: posterior-weighted joint grads."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    table = joint_table(params, X, cap)
    post = np.exp(table - logsumexp(table, axis=1)[:, None])
    layers = _config_layers(params)
    grad = None
    for k in range(layers[0].shape[0]):
        state = [np.repeat(h[k:k + 1], X.shape[0], axis=0) for h in layers]
        g = joint_grad(params, X, state, weights=post[:, k])
        if grad is None:
            grad = g
        else:
            grad = ParamGrad(
                [(a0 + b0, a1 + b1, None if a2 is None else a2 + b2)
                 for (a0, a1, a2), (b0, b1, b2) in zip(grad.layers, g.layers)],
                grad.top + g.top)
    return grad


def fit_exact_tiny(data: DataBatch, sizes, cfg: TrainConfig, cap: int = DEFAULT_ENUM_CAP):
    """Gradient ascent on the exact enumerated log likelihood (small models)."""
    if sizes[1] > cap:
        raise EnumerationCapError(
            f"{sizes[1]} latent variables exceed the enumeration cap of {cap}")
    params = init_params(sizes, cfg.visible_kind, data, cfg)
    X = data.vectors
    trace = LearnTrace()
    rng = np.random.default_rng([cfg.seed, 41])
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for _ in range(cfg.m_epochs):
            order = rng.permutation(X.shape[0])
            for lo in range(0, X.shape[0], cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                g = exact_loglik_grad(params, X[idx], cap)
                params = apply_grad(params, g, cfg.lr / len(idx))
        obj = exact_mean_log_likelihood(params, X, cap)
        _check_finite(obj, epoch)
        trace.append(obj, time.perf_counter() - t0, param_norm(params))
        if _converged(trace.objective, cfg):
            break
    return params, trace


def variational_bound_exact(params: ModelParams, net: InferenceNet, X,
                            cap: int = DEFAULT_ENUM_CAP) -> float:
    """Summed exact lower bound of the factorized net (single latent layer)."""
    if params.n_latent_layers != 1:
        raise ConfigError("the enumerated bound covers single-latent-layer models")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    table = joint_table(params, X, cap)
    H = _config_layers(params)[0]
    act = X @ net.weights[0].T + net.biases[0]
    log_q = log_sigmoid(act) @ H.T + log_sigmoid(-act) @ (1 - H).T
    q = np.exp(log_q)
    return float((q * (table - log_q)).sum())


def variational_bound_grad(params: ModelParams, net: InferenceNet, X,
                           cap: int = DEFAULT_ENUM_CAP):
    """Exact gradient of the summed bound in (model, net) parameters.

    Returns (ParamGrad, dV, ds).  The net part is the enumerated form of the
    score-function estimator's expectation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    table = joint_table(params, X, cap)
    H = _config_layers(params)[0]
    act = X @ net.weights[0].T + net.biases[0]
    q = sigmoid(act)
    log_q = log_sigmoid(act) @ H.T + log_sigmoid(-act) @ (1 - H).T
    Q = np.exp(log_q)
    grad = None
    for k in range(H.shape[0]):
        state = [np.repeat(H[k:k + 1], X.shape[0], axis=0)]
        g = joint_grad(params, X, state, weights=Q[:, k])
        grad = g if grad is None else ParamGrad(
            [(a0 + b0, a1 + b1, None) for (a0, a1, _), (b0, b1, _) in zip(grad.layers, g.layers)],
            grad.top + g.top)
    A = Q * (table - log_q)                     # (M, K)
    S = A @ H - q * A.sum(axis=1, keepdims=True)  # (M, n_h)
    return grad, S.T @ X, S.sum(axis=0)


def fit_variational_baseline(data: DataBatch, sizes, cfg: TrainConfig):
    """Joint ascent of the inference-net lower bound in model and net.

    Model gradients use the sampled latent state; net gradients use the
    score-function estimator with a moving-average baseline.  Returns
    (params, trace, net); the trace records the per-epoch mean sampled bound.
    """
    if cfg.visible_kind != BINARY:
        raise ConfigError("the variational baseline covers binary visibles")
    params = init_params(sizes, BINARY, data, cfg)
    n_d, n_h = sizes
    V = np.zeros((n_h, n_d))
    s = np.zeros(n_h)
    X = data.vectors
    rng = np.random.default_rng([cfg.seed, 43])
    baseline = None
    trace = LearnTrace()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(X.shape[0])
        epoch_bound, seen = 0.0, 0
        for lo in range(0, X.shape[0], cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = X[idx]
            act = xb @ V.T + s
            q = sigmoid(act)
            h = (rng.random(q.shape) < q).astype(float)
            log_q = (h * log_sigmoid(act) + (1 - h) * log_sigmoid(-act)).sum(axis=1)
            ell = joint_log_prob_batch(xb, [h], params) - log_q
            if baseline is None:
                baseline = float(ell.mean())
            signal = ell - baseline
            baseline = 0.9 * baseline + 0.1 * float(ell.mean())
            g = joint_grad(params, xb, [h])
            params = apply_grad(params, g, cfg.lr / len(idx))
            gq = signal[:, None] * (h - q)
            V += cfg.lr * (gq.T @ xb) / len(idx)
            s += cfg.lr * gq.mean(axis=0)
            epoch_bound += float(ell.sum())
            seen += len(idx)
        obj = epoch_bound / seen
        _check_finite(obj, epoch)
        trace.append(obj, time.perf_counter() - t0, param_norm(params))
    return params, trace, InferenceNet([V], [s])


# ---------------------------------------------------------------------------
# matched-budget benchmark


METHODS = ("exact", "maxmax", "variational")


def evaluate_mean_log_likelihood(params: ModelParams, X, seed: int = 0,
                                 exact_eval_max_hidden: int = 12,
                                 cap: int = DEFAULT_ENUM_CAP, restarts: int = 4) -> tuple:
    """Exact enumeration when the model is small enough, else the max form.

    Returns (value, evaluator_name); the same evaluator applies to every
    method at a given size, keeping comparisons fair.
    """
    total = sum(params.latent_sizes)
    if total <= exact_eval_max_hidden:
        return exact_mean_log_likelihood(params, X, cap), "exact"
    cfg = CaConfig(restarts=restarts, seed=seed)
    _, lj = map_states_batch(X, params, method="ca", cfg=cfg)
    return float(lj.mean()), "map"


def benchmark_learning(data: DataBatch, hidden_sizes, methods, cfg: TrainConfig,
                       seeds, cap: int = DEFAULT_ENUM_CAP,
                       exact_eval_max_hidden: int = 12) -> list[dict]:
    """Train each method at each width with matched budgets; report medians.

    One output row per (hidden size, method): the median over seeds of the
    mean log likelihood, under the shared evaluator for that size.
    """
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if not methods:
        raise ConfigError("no methods requested")
    n_d = data.vectors.shape[1]
    rows = []
    for n_h in hidden_sizes:
        for method in methods:
            if method == "exact" and n_h > cap:
                raise EnumerationCapError(
                    f"exact learning at {n_h} hidden units exceeds the enumeration cap of {cap}")
            vals = []
            evaluator = None
            for seed in seeds:
                run_cfg = replace(cfg, seed=int(seed))
                if method == "exact":
                    params, _ = fit_exact_tiny(data, (n_d, n_h), run_cfg, cap)
                elif method == "maxmax":
                    params, _ = fit_rbn_unsupervised(data, (n_d, n_h), run_cfg)
                else:
                    params, _, _ = fit_variational_baseline(data, (n_d, n_h), run_cfg)
                val, evaluator = evaluate_mean_log_likelihood(
                    params, data.vectors, seed=int(seed),
                    exact_eval_max_hidden=exact_eval_max_hidden, cap=cap)
                vals.append(val)
            rows.append({"n_h": int(n_h), "method": method, "evaluator": evaluator,
                         "mean_log_likelihood": float(np.median(vals)),
                         "seeds": len(list(seeds))})
    return rows
