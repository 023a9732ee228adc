"""Adam training loop with linear warmup and step decay over P x K batches."""

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigConflict, NonFiniteLoss, OutOfRange, ShapeMismatch, ValidationError
from .losses import BatchEmbeddings, LossConfig, full_joint
from .model import backward, forward, init_params, split_embedding, update_running_stats
from .sampler import index_by_identity, plan_epoch

log = logging.getLogger(__name__)

VARIANTS = ("AM0", "AM", "BH", "AM0BH1", "AMBH", "AM0BH", "AM0BHsp", "AM0BH_Attr")
ABLATION_VARIANTS = VARIANTS[:-1]
LOG_COLUMNS = ("epoch", "step", "lr", "loss_total", "loss_am", "loss_bh", "loss_attr")

# gamma for the joint loss, then (lambda, gamma) for the attribute variant
PRESETS = {
    "market": {"gamma": 0.43, "attr": (0.25, 0.54)},
    "duke": {"gamma": 0.5, "attr": (0.2, 0.33)},
    "msmt": {"gamma": 0.4, "attr": None},
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    warmup_epochs: int = 20
    base_lr: float = 1e-3
    start_lr: float = 1e-5
    decay: tuple = ((90, 1e-4), (130, 1e-5))
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_variant: str = "AM0BH"
    am_margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        decay = tuple(sorted((int(e), float(v)) for e, v in self.decay))
        object.__setattr__(self, "decay", decay)
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ValidationError("need epochs >= 1 and 0 <= warmup_epochs < epochs")
        if self.base_lr <= 0 or self.start_lr <= 0 or any(v <= 0 for _, v in decay):
            raise ValidationError("learning rates must be positive")
        lrs = [self.base_lr] + [v for _, v in decay]
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ValidationError("learning rate must not increase after warmup")
        if any(e < self.warmup_epochs for e, _ in decay):
            raise ValidationError("decay epochs must come after warmup")
        if self.loss_variant not in VARIANTS:
            raise ValidationError(f"unknown loss variant {self.loss_variant!r}; choose from {VARIANTS}")


def lr_at(epoch, cfg):
    """Learning rate for ``epoch`` (0-based): linear warmup, then step decay."""
    if not 0 <= epoch < cfg.epochs:
        raise OutOfRange(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.start_lr + (epoch / cfg.warmup_epochs) * (cfg.base_lr - cfg.start_lr)
    lr = cfg.base_lr
    for start, value in cfg.decay:
        if epoch >= start:
            lr = value
    return lr


def variant_loss_config(variant, base, am_margin=0.5):
    """Specialize ``base`` for one of the named loss combinations.

    ``base.gamma`` and ``base.lam`` carry the weights for the variants that
    use them; the BH-only variant drops the softmax and uses weight 1.
    """
    common = dict(normalize_triplet_features=False, surrogate="hinge", use_softmax=True, lam=0.0)
    if variant == "AM0":
        return replace(base, **common, m=0.0, gamma=0.0)
    if variant == "AM":
        return replace(base, **common, m=am_margin, gamma=0.0)
    if variant == "BH":
        return replace(base, **dict(common, use_softmax=False), m=0.0, gamma=1.0)
    if variant in ("AM0BH", "AMBH", "AM0BH1", "AM0BHsp", "AM0BH_Attr") and base.gamma <= 0:
        log.warning("%s run with gamma=0 has no metric term", variant)
    if variant == "AMBH":
        return replace(base, **common, m=am_margin)
    if variant == "AM0BH":
        return replace(base, **common, m=0.0)
    if variant == "AM0BH1":
        return replace(base, **dict(common, normalize_triplet_features=True), m=0.0)
    if variant == "AM0BHsp":
        return replace(base, **dict(common, surrogate="softplus"), m=0.0)
    if variant == "AM0BH_Attr":
        if base.lam <= 0:
            raise ConfigConflict("AM0BH_Attr needs lam > 0")
        return replace(base, **dict(common, lam=base.lam), m=0.0)
    raise ValidationError(f"unknown loss variant {variant!r}")


def apply_preset(name, variant, base):
    """Return ``base`` with the named dataset preset's gamma (and lambda) applied."""
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    if variant == "AM0BH_Attr":
        if preset["attr"] is None:
            raise ConfigConflict(f"preset {name!r} has no attribute configuration")
        lam, gamma = preset["attr"]
        return replace(base, lam=lam, gamma=gamma)
    return replace(base, gamma=preset["gamma"])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainState:
    params: object
    m: dict
    v: dict
    t: int = 0
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params):
        arrays = params.trainable()
        return cls(
            params,
            {k: np.zeros_like(a) for k, a in arrays.items()},
            {k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_step(state, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every trainable array, in place."""
    arrays = state.params.trainable()
    for name, p in arrays.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if np.shape(g) != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {np.shape(g)}, expected {p.shape}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in arrays.items():
        g = grads.get(name)
        m, v = state.m[name], state.v[name]
        m *= beta1
        v *= beta2
        if g is not None:
            m += (1.0 - beta1) * g
            v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    params: object
    rows: list
    epoch_losses: list
    classes: np.ndarray
    loss_cfg: LossConfig


def check_configs(ds, model_cfg, train_cfg, sampler_cfg, loss_cfg):
    """Cross-field validation; raises ConfigConflict."""
    variant = train_cfg.loss_variant
    if variant == "AM0BH_Attr":
        if model_cfg.M == 0 or ds.M == 0:
            raise ConfigConflict("AM0BH_Attr needs a dataset and model with attributes (M > 0)")
        if loss_cfg.lam <= 0:
            raise ConfigConflict("AM0BH_Attr needs lam > 0")
    elif model_cfg.M > 0:
        raise ConfigConflict(f"variant {variant} has no attribute term but the model reserves M={model_cfg.M} slices")
    if model_cfg.M > ds.M:
        raise ConfigConflict(f"model expects {model_cfg.M} attributes, dataset has {ds.M}")
    if model_cfg.input_dim != ds.input_dim:
        raise ConfigConflict(f"model input_dim {model_cfg.input_dim} != dataset width {ds.input_dim}")
    n_train = len(np.unique(ds.ids[ds.split == "train"]))
    if model_cfg.n_classes != n_train:
        raise ConfigConflict(f"model has {model_cfg.n_classes} classes, dataset has {n_train} train identities")
    if n_train < sampler_cfg.P:
        raise ConfigConflict(f"P={sampler_cfg.P} exceeds the {n_train} training identities")


def train(ds, model_cfg, train_cfg, sampler_cfg, loss_cfg, on_epoch_end=None, log_path=None, backend=None):
    """Train an embedder on the ``train`` split of ``ds``.

    ``loss_cfg`` supplies the scalars (s, margins, gamma, lambda); the
    variant named in ``train_cfg`` decides which terms are active.
    ``on_epoch_end(epoch, params)`` is called before the first epoch
    (with ``epoch=-1``) and after every epoch.

    Raises:
        ConfigConflict: inconsistent configs.
        NonFiniteLoss: a batch produced NaN/Inf; training stops immediately.
    """
    cfg = variant_loss_config(train_cfg.loss_variant, loss_cfg, train_cfg.am_margin)
    check_configs(ds, model_cfg, train_cfg, sampler_cfg, cfg)
    train_split = ds.subset("train")
    labels, classes = ds.train_labels()
    attrs = train_split.attributes[:, : model_cfg.M]
    plan_layout = model_cfg.slice_plan
    by_id = index_by_identity(labels)
    rng = np.random.default_rng(sampler_cfg.seed)

    params = init_params(model_cfg, train_cfg.seed)
    state = TrainState.fresh(params)
    rows = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        if on_epoch_end is not None:
            on_epoch_end(-1, params)
        for epoch in range(train_cfg.epochs):
            lr = lr_at(epoch, train_cfg)
            plan = plan_epoch(by_id, sampler_cfg, rng)
            totals = []
            for idx in plan:
                emb, cache = forward(params, model_cfg, train_split.features[idx], training=True)
                batch = BatchEmbeddings(
                    emb, labels[idx], attrs[idx] if model_cfg.M else None, (plan.P, plan.K)
                )
                out = full_joint(batch, params.heads, cfg, plan_layout, backend=backend)
                if not np.isfinite(out.value) or not np.all(np.isfinite(out.grad_embeddings)):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch}, step {state.step}",
                        {"epoch": epoch, "step": state.step, "components": out.components,
                         "embedding_max_abs": float(np.max(np.abs(emb))), "lr": lr},
                    )
                grads, _ = backward(params, model_cfg, cache, out.grad_embeddings)
                grads["head_id"] = out.grad_identity
                if out.grad_attributes is not None:
                    grads["head_attr"] = out.grad_attributes
                adam_step(state, grads, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
                update_running_stats(params, cache)
                c = out.components
                row = (epoch, state.step, lr, out.value, c.get("am", 0.0), c.get("bh", 0.0), c.get("attr", 0.0))
                rows.append(row)
                if writer is not None:
                    writer.writerow([row[0], row[1]] + [format(v, ".17g") for v in row[2:]])
                totals.append(out.value)
                state.step += 1
            state.epoch = epoch + 1
            state.history.append(float(np.mean(totals)))
            log.info("epoch %d lr %.3g loss %.5f", epoch, lr, state.history[-1])
            if on_epoch_end is not None:
                on_epoch_end(epoch, params)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params, rows, state.history, classes, cfg)


def predict_attributes(params, model_cfg, raw):
    """Predicted attribute bits ``(n, M)``: the closer of the two head columns per slice."""
    emb, _ = forward(params, model_cfg, raw, training=False)
    _, slices = split_embedding(emb, model_cfg)
    out = np.zeros((emb.shape[0], model_cfg.M), dtype=np.int64)
    for k, f in enumerate(slices):
        w = params.heads.attributes[k]
        w = w / np.linalg.norm(w, axis=0, keepdims=True)
        out[:, k] = np.argmax(f @ w, axis=1)
    return out
