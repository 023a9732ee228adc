"""Finite-difference verification of every analytic gradient.

Each case draws a random configuration, evaluates the analytic gradients,
and compares them with central differences block by block (embeddings,
identity head, attribute heads, ...). Coordinates within ``1e-4`` of a hinge
or selection boundary are skipped.
"""

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .model import ModelConfig, backward, forward, init_params
from .numerics import finite_diff_grad, kink_mask, max_relative_error

TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    trials: int
    skipped_coords: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def _pk_batch(rng, p_choices=(2, 3), k_choices=(2, 3), d=None, scale=1.0):
    p = int(rng.choice(p_choices))
    k = int(rng.choice(k_choices))
    d = int(rng.integers(2, 6)) if d is None else d
    labels = np.repeat(np.arange(p), k)
    emb = scale * rng.standard_normal((p * k, d))
    return L.BatchEmbeddings(emb, labels, pk_shape=(p, k))


def _case_softmax_ce(rng):
    n, d, c = (int(v) for v in rng.integers(2, 6, size=3))
    params = {
        "x": rng.standard_normal((n, d)),
        "w": rng.standard_normal((d, c)),
        "b": rng.standard_normal(c),
    }
    labels = rng.integers(0, c, size=n)

    def run(p):
        out = L.softmax_ce(L.BatchEmbeddings(p["x"], labels), L.HeadWeights(p["w"]), bias=p["b"])
        return out, {"x": out.grad_embeddings, "w": out.grad_identity, "b": out.grad_bias}

    return params, run


def _case_am_softmax(rng):
    n, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    c = int(rng.integers(2, 6))
    cfg = L.LossConfig(s=float(rng.uniform(1.0, 30.0)), m=float(rng.choice([0.0, rng.uniform(0.05, 0.6)])))
    params = {"x": rng.standard_normal((n, d)), "w": rng.standard_normal((d, c))}
    labels = rng.integers(0, c, size=n)

    def run(p):
        out = L.am_softmax(L.BatchEmbeddings(p["x"], labels), L.HeadWeights(p["w"]), cfg)
        return out, {"x": out.grad_embeddings, "w": out.grad_identity}

    return params, run


def _case_attribute_am(rng):
    m_attr, q = int(rng.integers(1, 4)), int(rng.integers(2, 5))
    n, extra = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    plan = L.SlicePlan(m_attr, q)
    cfg = L.LossConfig(s=float(rng.uniform(1.0, 16.0)), m=float(rng.uniform(0.0, 0.5)))
    params = {
        "x": rng.standard_normal((n, m_attr * q + extra)),
        "wa": rng.standard_normal((m_attr, q, 2)),
    }
    attrs = rng.integers(0, 2, size=(n, m_attr))
    labels = np.zeros(n, dtype=np.int64)

    def run(p):
        batch = L.BatchEmbeddings(p["x"], labels, attrs)
        out = L.attribute_am(batch, L.HeadWeights(np.zeros((1, 2)), p["wa"]), cfg, plan)
        return out, {"x": out.grad_embeddings, "wa": out.grad_attributes}

    return params, run


def _metric_case(fn, surrogate, normalize=False, reduction=None):
    def case(rng):
        batch = _pk_batch(rng)
        cfg = L.LossConfig(
            triplet_margin=float(rng.uniform(0.1, 1.0)),
            surrogate=surrogate,
            normalize_triplet_features=normalize,
            reduction=reduction or str(rng.choice(["sum", "mean"])),
        )
        params = {"x": batch.embeddings}

        def run(p):
            out = fn(batch.with_embeddings(p["x"]), cfg)
            return out, {"x": out.grad_embeddings}

        return params, run

    return case


def _case_joint(rng):
    batch = _pk_batch(rng)
    c = int(batch.labels.max()) + 1 + int(rng.integers(0, 3))
    d = batch.embeddings.shape[1]
    cfg = L.LossConfig(
        s=float(rng.uniform(2.0, 30.0)),
        m=float(rng.choice([0.0, 0.5])),
        gamma=float(rng.uniform(0.1, 1.0)),
        triplet_margin=float(rng.uniform(0.1, 1.0)),
        surrogate=str(rng.choice(["hinge", "softplus"])),
        normalize_triplet_features=bool(rng.integers(0, 2)),
        reduction=str(rng.choice(["sum", "mean"])),
    )
    params = {"x": batch.embeddings, "w": rng.standard_normal((d, c))}

    def run(p):
        out = L.joint(batch.with_embeddings(p["x"]), L.HeadWeights(p["w"]), cfg)
        return out, {"x": out.grad_embeddings, "w": out.grad_identity}

    return params, run


def _case_full_joint(rng):
    m_attr, q = int(rng.integers(1, 3)), int(rng.integers(2, 4))
    plan = L.SlicePlan(m_attr, q)
    batch = _pk_batch(rng, d=m_attr * q + int(rng.integers(2, 5)))
    n, d = batch.embeddings.shape
    c = int(batch.labels.max()) + 1
    cfg = L.LossConfig(
        s=float(rng.uniform(2.0, 20.0)),
        m=float(rng.choice([0.0, 0.5])),
        gamma=float(rng.uniform(0.1, 1.0)),
        lam=float(rng.uniform(0.1, 1.0)),
        surrogate=str(rng.choice(["hinge", "softplus"])),
        reduction=str(rng.choice(["sum", "mean"])),
    )
    attrs = rng.integers(0, 2, size=(n, m_attr))
    params = {
        "x": batch.embeddings,
        "w": rng.standard_normal((d - m_attr * q, c)),
        "wa": rng.standard_normal((m_attr, q, 2)),
    }

    def run(p):
        b = L.BatchEmbeddings(p["x"], batch.labels, attrs, batch.pk_shape)
        out = L.full_joint(b, L.HeadWeights(p["w"], p["wa"]), cfg, plan)
        return out, {"x": out.grad_embeddings, "w": out.grad_identity, "wa": out.grad_attributes}

    return params, run


def _case_model(rng):
    """Loss through the embedder down to its first-layer weights."""
    m_attr = int(rng.integers(0, 2))
    q = 2
    mcfg = ModelConfig(
        input_dim=int(rng.integers(2, 7)),
        hidden_dims=(int(rng.integers(3, 7)),),
        embed_dim=m_attr * q + int(rng.integers(2, 5)),
        n_classes=3,
        batch_norm_output=bool(rng.integers(0, 2)),
        M=m_attr,
        Q=q,
    )
    p_ids, k = 3, 2
    labels = np.repeat(np.arange(p_ids), k)
    while True:
        # redraw when every hidden unit is dead for some sample (zero embedding)
        model = init_params(mcfg, int(rng.integers(0, 2**31)))
        raw = rng.standard_normal((p_ids * k, mcfg.input_dim))
        emb, _ = forward(model, mcfg, raw, training=True)
        if np.min(np.linalg.norm(emb, axis=1)) > 1e-3:
            break
    attrs = rng.integers(0, 2, size=(p_ids * k, m_attr)) if m_attr else None
    cfg = L.LossConfig(s=8.0, gamma=0.5, lam=0.5 if m_attr else 0.0, surrogate="softplus", reduction="mean")
    plan = mcfg.slice_plan
    params = {"W0": model.weights[0], "W1": model.weights[1], "b0": model.biases[0]}

    def run(p):
        model.weights[0], model.weights[1], model.biases[0] = p["W0"], p["W1"], p["b0"]
        emb, cache = forward(model, mcfg, raw, training=True)
        out = L.full_joint(L.BatchEmbeddings(emb, labels, attrs, (p_ids, k)), model.heads, cfg, plan)
        grads, _ = backward(model, mcfg, cache, out.grad_embeddings)
        relu = tuple((z > 0).tobytes() for z in cache["pre"][:-1])
        out.state = (out.state, relu)
        return out, {"W0": grads["W0"], "W1": grads["W1"], "b0": grads["b0"]}

    return params, run


CASES = {
    "softmax_ce": (_case_softmax_ce, TOLERANCE),
    "am_softmax": (_case_am_softmax, TOLERANCE),
    "attribute_am": (_case_attribute_am, TOLERANCE),
    "triplet_all_hinge": (_metric_case(L.triplet_all, "hinge"), TOLERANCE),
    "triplet_all_softplus": (_metric_case(L.triplet_all, "softplus"), TOLERANCE),
    "batch_hard_hinge": (_metric_case(L.batch_hard, "hinge"), TOLERANCE),
    "batch_hard_softplus": (_metric_case(L.batch_hard, "softplus"), TOLERANCE),
    "batch_hard_normalized": (_metric_case(L.batch_hard, "hinge", normalize=True), TOLERANCE),
    "joint": (_case_joint, TOLERANCE),
    "full_joint": (_case_full_joint, TOLERANCE),
    "model_end_to_end": (_case_model, MODEL_TOLERANCE),
}


def check_case(name, trials=100, seed=0, h=1e-6, corrupt=False):
    """Run ``trials`` random configurations of one case.

    With ``corrupt`` the analytic gradient is deliberately perturbed (a
    negative control that must fail).
    """
    make, tol = CASES[name]
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst = 0.0
    skipped = 0
    for _ in range(trials):
        params, run = make(rng)
        params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        out, analytic = run(params)
        for key in params:
            base = params[key]

            def value_at(x, key=key):
                return run({**params, key: x})[0].value

            def state_at(x, key=key):
                return run({**params, key: x})[0].state

            skip = kink_mask(state_at, base) if out.state else None
            if skip is not None:
                skipped += int(skip.sum())
            numeric = finite_diff_grad(value_at, base, h=h, skip=skip)
            grad = np.asarray(analytic[key], dtype=np.float64)
            if corrupt:
                grad = grad * 1.01 + 1e-3 * np.max(np.abs(grad))
            worst = max(worst, max_relative_error(grad, numeric))
    return CheckResult(name, worst, trials, skipped, tol)


def run_all(trials=100, seed=0, corrupt=None, names=None):
    """Check every case; ``corrupt`` names one case to sabotage."""
    return [
        check_case(name, trials=trials, seed=seed, corrupt=(name == corrupt))
        for name in (names or CASES)
    ]


def format_report(results):
    lines = [f"{'loss':24s} {'max_rel_err':>12s} {'tol':>8s}  status"]
    for r in results:
        lines.append(
            f"{r.name:24s} {r.max_rel_err:12.3e} {r.tolerance:8.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
