"""Feedforward embedder with optional output batch normalization.

The network is ``input -> [affine -> ReLU]* -> affine -> BN?`` and produces a
``d``-dimensional embedding. Its leading ``M * Q`` coordinates feed the
attribute heads and the remaining ``d - M * Q`` feed the identity head and
the triplet term.

Checkpoint format (``.npz``, version 1)::

    format      "jointembed-checkpoint"
    version     1
    config      JSON-encoded ModelConfig
    W{i}, b{i}  affine layer i, W of shape (fan_in, fan_out)
    bn_gamma, bn_beta, bn_mean, bn_var   output normalization (if enabled)
    head_id     identity head, (d - M*Q, c)
    head_attr   attribute heads, (M, Q, 2) (if M > 0)
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimMismatch, ParseError, SlicePlanOverflow, ValidationError
from .losses import HeadWeights, SlicePlan

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_FORMAT = "jointembed-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    embed_dim: int
    n_classes: int
    hidden_dims: tuple = ()
    batch_norm_output: bool = True
    M: int = 0
    Q: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or self.embed_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ValidationError("layer widths must be positive")
        if self.n_classes < 2:
            raise ValidationError("need at least 2 identity classes")
        if self.M < 0 or self.Q <= 0:
            raise ValidationError(f"invalid attribute layout M={self.M}, Q={self.Q}")
        if self.embed_dim - self.M * self.Q <= 0:
            raise SlicePlanOverflow(
                f"M*Q = {self.M * self.Q} leaves no identity slice in a {self.embed_dim}-dim embedding"
            )

    @property
    def slice_plan(self):
        return SlicePlan(self.M, self.Q)

    @property
    def id_dim(self):
        return self.embed_dim - self.M * self.Q

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.embed_dim)


@dataclass
class ModelParams:
    weights: list
    biases: list
    heads: HeadWeights
    bn_gamma: np.ndarray | None = None
    bn_beta: np.ndarray | None = None
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def trainable(self):
        """Named views of every trainable array (mutating them updates the model)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        if self.bn_gamma is not None:
            out["bn_gamma"] = self.bn_gamma
            out["bn_beta"] = self.bn_beta
        out["head_id"] = self.heads.identity
        if self.heads.attributes is not None:
            out["head_attr"] = self.heads.attributes
        return out

    def copy(self):
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.heads.copy(),
            *(None if a is None else a.copy() for a in (self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var)),
        )


def init_params(cfg, seed):
    """Variance-scaled uniform init; unit-norm head columns. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    dims = cfg.layer_dims
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        limit = np.sqrt((3.0 if last else 6.0) / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    head_id = rng.standard_normal((cfg.id_dim, cfg.n_classes))
    head_id /= np.linalg.norm(head_id, axis=0, keepdims=True)
    head_attr = None
    if cfg.M > 0:
        head_attr = rng.standard_normal((cfg.M, cfg.Q, 2))
        head_attr /= np.linalg.norm(head_attr, axis=1, keepdims=True)
    params = ModelParams(weights, biases, HeadWeights(head_id, head_attr))
    if cfg.batch_norm_output:
        d = cfg.embed_dim
        params.bn_gamma = np.ones(d)
        params.bn_beta = np.zeros(d)
        params.bn_mean = np.zeros(d)
        params.bn_var = np.ones(d)
    return params


def forward(params, cfg, raw, training=False):
    """Embed raw features.

    Args:
        raw: ``(N, input_dim)`` array, or a single ``(input_dim,)`` vector.
        training: normalize the output with batch statistics (``N >= 2``)
            instead of the frozen running statistics.

    Returns:
        ``(embeddings, cache)``; the cache feeds :func:`backward` and holds the
        batch statistics under ``"batch_mean"`` / ``"batch_var"``.
    """
    x = np.asarray(raw, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise DimMismatch(f"expected inputs of width {cfg.input_dim}, got shape {np.shape(raw)}")
    acts = [x]
    pre = []
    h = x
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    cache = {"acts": acts, "pre": pre, "training": training, "single": single}
    if cfg.batch_norm_output:
        if training:
            if h.shape[0] < 2:
                raise ValidationError("training-mode normalization needs at least 2 samples")
            mean = h.mean(axis=0)
            var = h.var(axis=0)
            cache["batch_mean"], cache["batch_var"] = mean, var
        else:
            mean, var = params.bn_mean, params.bn_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (h - mean) * inv_std
        cache["xhat"], cache["inv_std"] = xhat, inv_std
        h = params.bn_gamma * xhat + params.bn_beta
    return (h[0] if single else h), cache


def backward(params, cfg, cache, grad_emb):
    """Gradients of a loss w.r.t. the network parameters given ``dL/d embedding``.

    Returns ``(grads, grad_raw)`` where ``grads`` uses the names of
    :meth:`ModelParams.trainable` (heads excluded).
    """
    g = np.asarray(grad_emb, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    grads = {}
    if cfg.batch_norm_output:
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        grads["bn_gamma"] = np.sum(g * xhat, axis=0)
        grads["bn_beta"] = np.sum(g, axis=0)
        dxhat = g * params.bn_gamma
        if cache["training"]:
            n = g.shape[0]
            g = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        else:
            g = dxhat * inv_std
    acts, pre = cache["acts"], cache["pre"]
    n_layers = len(params.weights)
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:
            g = g * (pre[i] > 0.0)
        grads[f"W{i}"] = acts[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return grads, (g[0] if cache["single"] else g)


def update_running_stats(params, cache, momentum=BN_MOMENTUM):
    """Fold one training batch's statistics into the running estimates."""
    if "batch_mean" not in cache:
        return
    n = cache["acts"][0].shape[0]
    unbiased = cache["batch_var"] * n / max(n - 1, 1)
    params.bn_mean *= 1.0 - momentum
    params.bn_mean += momentum * cache["batch_mean"]
    params.bn_var *= 1.0 - momentum
    params.bn_var += momentum * unbiased


def split_embedding(embedding, cfg):
    """Split into ``(f_id, [f_attr_0, ..., f_attr_{M-1}])`` along the last axis."""
    e = np.asarray(embedding)
    d = e.shape[-1]
    if cfg.M * cfg.Q > d:
        raise SlicePlanOverflow(f"M*Q = {cfg.M * cfg.Q} exceeds embedding width {d}")
    plan = SlicePlan(cfg.M, cfg.Q)
    attrs = [e[..., plan.attr_slice(k)] for k in range(cfg.M)]
    return e[..., plan.id_slice()], attrs


def identity_embedding(params, cfg, raw):
    """Frozen-mode embedding restricted to the identity slice (used at test time)."""
    emb, _ = forward(params, cfg, raw, training=False)
    return split_embedding(emb, cfg)[0]


def save_checkpoint(path, params, cfg, meta=None):
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "version": np.array(CHECKPOINT_VERSION),
        "config": np.array(json.dumps(asdict(cfg))),
        "meta": np.array(json.dumps(meta or {})),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
        if getattr(params, name) is not None:
            arrays[name] = getattr(params, name)
    arrays["head_id"] = params.heads.identity
    if params.heads.attributes is not None:
        arrays["head_attr"] = params.heads.attributes
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(params, cfg, meta)`` from a checkpoint written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != CHECKPOINT_FORMAT:
            raise ParseError(f"{path} is not a jointembed checkpoint")
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {int(z['version'])}")
        cfg = ModelConfig(**json.loads(str(z["config"])))
        meta = json.loads(str(z["meta"]))
        n_layers = len(cfg.layer_dims) - 1
        params = ModelParams(
            [z[f"W{i}"].copy() for i in range(n_layers)],
            [z[f"b{i}"].copy() for i in range(n_layers)],
            HeadWeights(z["head_id"].copy(), z["head_attr"].copy() if "head_attr" in z else None),
        )
        if cfg.batch_norm_output:
            for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
                setattr(params, name, z[name].copy())
    return params, cfg, meta
