"""Forward values and hand-derived gradients of the embedding losses.

Every loss takes a :class:`BatchEmbeddings` (plus head weights for the
classification terms) and returns a :class:`LossOutput` holding the scalar
value and the gradients w.r.t. the embeddings and each head.

Conventions:

* Head weights are stored unnormalized; columns are projected onto the unit
  sphere inside every forward pass and gradients flow through that
  projection.
* Attribute head ``k`` is a ``(Q, 2)`` matrix whose column ``b`` scores the
  class "attribute bit == b", so column 1 means "present".
* Attribute slices sit at the leading ``M * Q`` embedding coordinates and the
  identity slice holds the rest.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py, kernels
from .errors import (
    BadPKShape,
    DimMismatch,
    InvalidLabel,
    MissingAttributes,
    NoValidTriplet,
    SlicePlanOverflow,
    ValidationError,
)
from .numerics import (
    COS_CLAMP,
    l2_normalize_backward,
    l2_normalize_rows,
    log_sum_exp_rows,
    pairwise_euclidean,
    softmax_rows,
)

log = logging.getLogger(__name__)

SURROGATES = ("hinge", "softplus")
REDUCTIONS = ("sum", "mean")


@dataclass
class LossConfig:
    s: float = 30.0
    m: float = 0.0
    triplet_margin: float = 0.3
    gamma: float = 0.0
    lam: float = 0.0
    surrogate: str = "hinge"
    normalize_triplet_features: bool = False
    reduction: str = "sum"
    use_softmax: bool = True
    attr_s: float | None = None
    attr_m: float | None = None

    def __post_init__(self):
        if not self.s > 0:
            raise ValidationError(f"temperature s must be > 0, got {self.s}")
        if not 0 <= self.m < math.pi / 2:
            raise ValidationError(f"angular margin m must lie in [0, pi/2), got {self.m}")
        if self.triplet_margin < 0 or self.gamma < 0 or self.lam < 0:
            raise ValidationError("triplet_margin, gamma and lam must be non-negative")
        if self.surrogate not in SURROGATES:
            raise ValidationError(f"surrogate must be one of {SURROGATES}")
        if self.reduction not in REDUCTIONS:
            raise ValidationError(f"reduction must be one of {REDUCTIONS}")

    @property
    def attribute_s(self):
        return self.s if self.attr_s is None else self.attr_s

    @property
    def attribute_m(self):
        return self.m if self.attr_m is None else self.attr_m


@dataclass(frozen=True)
class SlicePlan:
    """``M`` attribute slices of width ``Q`` at the front of the embedding."""

    M: int = 0
    Q: int = 16

    @property
    def attr_width(self):
        return self.M * self.Q

    def check(self, d):
        if self.M < 0 or self.Q <= 0:
            raise SlicePlanOverflow(f"invalid slice plan M={self.M}, Q={self.Q}")
        if self.attr_width > d:
            raise SlicePlanOverflow(f"M*Q = {self.attr_width} exceeds embedding width {d}")

    def attr_slice(self, k):
        return slice(k * self.Q, (k + 1) * self.Q)

    def id_slice(self):
        return slice(self.attr_width, None)


@dataclass
class BatchEmbeddings:
    embeddings: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray | None = None
    pk_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2 or self.labels.shape != (self.embeddings.shape[0],):
            raise DimMismatch(
                f"embeddings {self.embeddings.shape} and labels {self.labels.shape} disagree"
            )
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=np.int64)
            if self.attributes.ndim != 2 or self.attributes.shape[0] != self.labels.shape[0]:
                raise DimMismatch(f"attributes shape {self.attributes.shape} does not match batch")

    @property
    def n(self):
        return self.embeddings.shape[0]

    def with_embeddings(self, embeddings):
        return BatchEmbeddings(embeddings, self.labels, self.attributes, self.pk_shape)


@dataclass
class HeadWeights:
    identity: np.ndarray
    attributes: np.ndarray | None = None

    def copy(self):
        return HeadWeights(
            self.identity.copy(), None if self.attributes is None else self.attributes.copy()
        )


@dataclass
class LossOutput:
    value: float
    grad_embeddings: np.ndarray
    grad_identity: np.ndarray | None = None
    grad_attributes: np.ndarray | None = None
    grad_bias: np.ndarray | None = None
    components: dict = field(default_factory=dict)
    terms: np.ndarray | None = None
    state: tuple = ()


# ---------------------------------------------------------------------------
# classification losses


def _check_labels(labels, c):
    if c < 2:
        raise InvalidLabel(f"need at least 2 classes, got {c}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidLabel(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")


def softmax_ce(batch, heads, bias=None):
    """Plain softmax cross-entropy over logits ``x W + b``, averaged over the batch."""
    x = batch.embeddings
    w = np.asarray(heads.identity, dtype=np.float64)
    if w.shape[0] != x.shape[1]:
        raise DimMismatch(f"head has {w.shape[0]} rows, embeddings have width {x.shape[1]}")
    c = w.shape[1]
    _check_labels(batch.labels, c)
    n = batch.n
    logits = x @ w
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (c,):
            raise DimMismatch(f"bias must have shape ({c},)")
        logits = logits + bias
    rows = np.arange(n)
    per_sample = log_sum_exp_rows(logits) - logits[rows, batch.labels]
    dlogits = softmax_rows(logits)
    dlogits[rows, batch.labels] -= 1.0
    dlogits /= n
    return LossOutput(
        value=float(np.mean(per_sample)),
        grad_embeddings=dlogits @ w.T,
        grad_identity=x.T @ dlogits,
        grad_bias=None if bias is None else dlogits.sum(axis=0),
        terms=per_sample,
    )


def _am_core(x, labels, w, s, m):
    """Additive angular margin softmax on raw ``x`` (N, d) and ``w`` (d, c).

    Returns ``(value, grad_x, grad_w, per_sample)``.
    """
    n = x.shape[0]
    c = w.shape[1]
    if w.shape[0] != x.shape[1]:
        raise DimMismatch(f"head has {w.shape[0]} rows, embeddings have width {x.shape[1]}")
    _check_labels(labels, c)
    xn, xnorm = l2_normalize_rows(x)
    wn, wnorm = l2_normalize_rows(w.T)
    cos_raw = xn @ wn.T
    cos = np.clip(cos_raw, -COS_CLAMP, COS_CLAMP)
    rows = np.arange(n)
    t = cos[rows, labels]
    sin_t = np.sqrt(1.0 - t * t)
    cos_m, sin_m = math.cos(m), math.sin(m)
    logits = s * cos
    logits[rows, labels] = s * (t * cos_m - sin_t * sin_m)
    if m > 0:
        wrapped = int(np.count_nonzero(np.arccos(t) + m > math.pi))
        if wrapped:
            log.debug("angular margin pushed %d target angles past pi", wrapped)

    per_sample = log_sum_exp_rows(logits) - logits[rows, labels]
    dlogits = softmax_rows(logits)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    dcos = s * dlogits
    dcos[rows, labels] *= cos_m + sin_m * t / sin_t
    dcos[np.abs(cos_raw) > COS_CLAMP] = 0.0

    grad_x = l2_normalize_backward(dcos @ wn, xn, xnorm)
    grad_w = l2_normalize_backward(dcos.T @ xn, wn, wnorm).T
    return float(np.mean(per_sample)), grad_x, grad_w, per_sample


def am_softmax(batch, heads, cfg):
    """Additive angular margin softmax over the whole embedding."""
    value, gx, gw, per_sample = _am_core(
        batch.embeddings, batch.labels, np.asarray(heads.identity, dtype=np.float64), cfg.s, cfg.m
    )
    return LossOutput(value, gx, grad_identity=gw, terms=per_sample, components={"am": value})


def attribute_am(batch, heads, cfg, plan):
    """Sum over attributes of a two-way angular margin loss on each slice."""
    if batch.attributes is None or heads.attributes is None:
        raise MissingAttributes("attribute loss needs attribute labels and attribute heads")
    x = batch.embeddings
    plan.check(x.shape[1])
    if batch.attributes.shape[1] != plan.M or heads.attributes.shape != (plan.M, plan.Q, 2):
        raise DimMismatch(
            f"expected {plan.M} attributes with heads of shape ({plan.M}, {plan.Q}, 2), "
            f"got labels {batch.attributes.shape} and heads {heads.attributes.shape}"
        )
    grad_x = np.zeros_like(x)
    grad_heads = np.zeros_like(heads.attributes, dtype=np.float64)
    value = 0.0
    for k in range(plan.M):
        sl = plan.attr_slice(k)
        v, gx, gw, _ = _am_core(
            x[:, sl], batch.attributes[:, k], heads.attributes[k], cfg.attribute_s, cfg.attribute_m
        )
        value += v
        grad_x[:, sl] = gx
        grad_heads[k] = gw
    return LossOutput(value, grad_x, grad_attributes=grad_heads, components={"attr": value})


# ---------------------------------------------------------------------------
# metric losses


def _scalar_map(fn, z):
    return np.array([fn(v) for v in z.ravel().tolist()], dtype=np.float64).reshape(z.shape)


def surrogate(z, kind):
    """Hinge ``max(z, 0)`` or softplus ``log(1 + e^z)``, elementwise.

    Softplus goes through the same libm-based scalar routine as the triplet
    kernels. numpy's vectorised ``exp`` can differ from libm in the last bit,
    and mixing the two would make batch-hard and batch-all terms disagree.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "hinge":
        return np.where(z > 0.0, z, 0.0)
    return _scalar_map(_kernels_py.softplus, z)


def surrogate_grad(z, kind):
    z = np.asarray(z, dtype=np.float64)
    if kind == "hinge":
        return (z > 0.0).astype(np.float64)
    return _scalar_map(_kernels_py.sigmoid, z)


def _triplet_features(batch, cfg):
    x = batch.embeddings
    if cfg.normalize_triplet_features:
        u, norms = l2_normalize_rows(x)
        return u, (u, norms)
    return x, None


def _distance_backward(feat, dist, coef, norm_cache):
    """Gradient of ``sum coef[a, b] * D(a, b)`` w.r.t. the raw embeddings."""
    safe = np.where(dist > 0.0, dist, 1.0)
    g = np.where(dist > 0.0, coef / safe, 0.0)
    rs = g.sum(axis=1)
    cs = g.sum(axis=0)
    grad = (rs + cs)[:, None] * feat - g @ feat - g.T @ feat
    if norm_cache is not None:
        u, norms = norm_cache
        grad = l2_normalize_backward(grad, u, norms)
    return grad


def check_pk(batch):
    """Validate the P x K structure of a batch; returns ``(P, K)``."""
    if batch.pk_shape is None:
        raise BadPKShape("batch hard mining needs pk_shape")
    p, k = batch.pk_shape
    if p < 2 or k < 2:
        raise BadPKShape(f"need P >= 2 and K >= 2, got P={p}, K={k}")
    if p * k != batch.n:
        raise BadPKShape(f"P*K = {p * k} but batch holds {batch.n} samples")
    ids, counts = np.unique(batch.labels, return_counts=True)
    if len(ids) != p or np.any(counts != k):
        raise BadPKShape(f"expected {p} identities with {k} samples each")
    return p, k


def triplet_all(batch, cfg, backend=None):
    """Surrogate triplet loss summed over every valid (anchor, positive, negative)."""
    feat, cache = _triplet_features(batch, cfg)
    dist = pairwise_euclidean(feat)
    value, coef, count = kernels.triplet_all(
        dist, batch.labels, cfg.triplet_margin, cfg.surrogate == "softplus", backend=backend
    )
    if count == 0:
        raise NoValidTriplet("batch contains no (anchor, positive, negative) triplet")
    if cfg.reduction == "mean":
        value /= count
        coef = coef / count
    grad = _distance_backward(feat, dist, coef, cache)
    state = (coef != 0).tobytes() if cfg.surrogate == "hinge" else ()
    return LossOutput(float(value), grad, components={"triplet": float(value)}, state=state)


def batch_hard(batch, cfg, backend=None):
    """Batch-hard triplet loss: per anchor, farthest positive vs nearest negative."""
    check_pk(batch)
    feat, cache = _triplet_features(batch, cfg)
    dist = pairwise_euclidean(feat)
    pos, neg = kernels.batch_hard_select(dist, batch.labels, backend=backend)
    rows = np.arange(batch.n)
    z = cfg.triplet_margin + dist[rows, pos] - dist[rows, neg]
    terms = surrogate(z, cfg.surrogate)
    g = surrogate_grad(z, cfg.surrogate)
    value = math.fsum(terms)
    if cfg.reduction == "mean":
        value /= batch.n
        g = g / batch.n
    coef = np.zeros_like(dist)
    np.add.at(coef, (rows, pos), g)
    np.add.at(coef, (rows, neg), -g)
    grad = _distance_backward(feat, dist, coef, cache)
    state = (tuple(pos), tuple(neg))
    if cfg.surrogate == "hinge":
        state += (tuple(z > 0.0),)
    return LossOutput(value, grad, components={"bh": value}, terms=terms, state=state)


# ---------------------------------------------------------------------------
# combinations


def joint(batch, heads, cfg, backend=None):
    """Angular-margin softmax plus ``gamma`` times batch hard.

    With ``cfg.use_softmax`` off only the metric term is kept (the BH-only
    ablation), and with ``gamma == 0`` only the softmax term.
    """
    x = batch.embeddings
    grad = np.zeros_like(x)
    value = 0.0
    comps = {"am": 0.0, "bh": 0.0}
    grad_id = None
    state = ()
    if cfg.use_softmax:
        am = am_softmax(batch, heads, cfg)
        value += am.value
        grad += am.grad_embeddings
        grad_id = am.grad_identity
        comps["am"] = am.value
    if cfg.gamma > 0:
        bh = batch_hard(batch, cfg, backend=backend)
        value += cfg.gamma * bh.value
        grad += cfg.gamma * bh.grad_embeddings
        comps["bh"] = bh.value
        state = bh.state
    if grad_id is None:
        grad_id = np.zeros_like(np.asarray(heads.identity, dtype=np.float64))
    return LossOutput(value, grad, grad_identity=grad_id, components=comps, state=state)


def full_joint(batch, heads, cfg, plan, backend=None):
    """Identity softmax + ``lam`` * attribute loss + ``gamma`` * batch hard.

    The identity softmax and batch-hard terms see only the identity slice;
    the attribute loss sees only the attribute slices.
    """
    x = batch.embeddings
    plan.check(x.shape[1])
    id_sl = plan.id_slice()
    if x[:, id_sl].shape[1] == 0:
        raise SlicePlanOverflow("identity slice is empty")
    id_batch = BatchEmbeddings(x[:, id_sl], batch.labels, None, batch.pk_shape)
    core = joint(id_batch, heads, cfg, backend=backend)
    grad = np.zeros_like(x)
    grad[:, id_sl] = core.grad_embeddings
    value = core.value
    comps = dict(core.components, attr=0.0)
    grad_attr = None
    if plan.M > 0:
        if cfg.lam > 0:
            attr = attribute_am(batch, heads, cfg, plan)
            value += cfg.lam * attr.value
            grad += cfg.lam * attr.grad_embeddings
            grad_attr = cfg.lam * attr.grad_attributes
            comps["attr"] = attr.value
        else:
            grad_attr = np.zeros_like(heads.attributes, dtype=np.float64)
    return LossOutput(
        value,
        grad,
        grad_identity=core.grad_identity,
        grad_attributes=grad_attr,
        components=comps,
        state=core.state,
    )
