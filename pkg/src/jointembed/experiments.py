"""Train-then-evaluate helpers behind the ablation and sweep commands."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .evaluation import evaluate_dataset
from .model import identity_embedding
from .trainer import ABLATION_VARIANTS, predict_attributes, train

SWEEP_AXES = ("Q", "P", "K", "gamma", "lambda")
_AXIS_FIELDS = {"Q": "Q", "P": "P", "K": "K", "gamma": "gamma", "lambda": "lam"}


@dataclass
class RunOutcome:
    result: object  # TrainResult
    model_cfg: object
    report: object  # EvalReport
    attribute_accuracy: float | None = None


def attribute_accuracy(params, model_cfg, ds, split=("probe", "gallery")):
    """Fraction of attribute bits predicted correctly on the given splits."""
    keep = np.isin(ds.split, split)
    pred = predict_attributes(params, model_cfg, ds.features[keep])
    return float(np.mean(pred == ds.attributes[keep][:, : model_cfg.M]))


def train_and_evaluate(run_cfg, ds, seed=None, log_path=None, backend=None):
    """Train ``run_cfg.loss_variant`` on ``ds`` and evaluate on its test splits.

    ``seed`` overrides the model-init and sampler seed (repeats of a run).
    """
    model_cfg = run_cfg.model_config(ds)
    result = train(
        ds, model_cfg, run_cfg.train_config(seed), run_cfg.sampler_config(seed),
        run_cfg.loss_config(), log_path=log_path, backend=backend,
    )
    report = evaluate_dataset(
        lambda x: identity_embedding(result.params, model_cfg, x), ds,
        max_k=run_cfg.max_rank, backend=backend,
    )
    acc = attribute_accuracy(result.params, model_cfg, ds) if model_cfg.M else None
    return RunOutcome(result, model_cfg, report, acc)


def summarize(reports, ranks=(1, 5, 10)):
    """Per-column ``(mean, std)`` over repeats; std is the population std."""
    cols = {f"Rank-{k}": [r.rank(k) for r in reports] for k in ranks if k <= len(reports[0].cmc)}
    cols["mAP"] = [r.map for r in reports]
    return {name: (float(np.mean(v)), float(np.std(v))) for name, v in cols.items()}


def ablate(run_cfg, ds, repeats, variants=ABLATION_VARIANTS, on_run=None):
    """Train every variant ``repeats`` times (seeds ``seed .. seed+repeats-1``).

    Returns ``{variant: [EvalReport, ...]}``.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    out = {}
    for variant in variants:
        cfg = run_cfg.replace(loss_variant=variant)
        out[variant] = []
        for r in range(repeats):
            outcome = train_and_evaluate(cfg, ds, seed=run_cfg.seed + r)
            out[variant].append(outcome.report)
            if on_run is not None:
                on_run(variant, r, outcome)
    return out


def check_sweep_axis(axis, run_cfg):
    if axis not in SWEEP_AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if axis in ("Q", "lambda") and not run_cfg.uses_attributes:
        raise ValidationError(f"axis {axis} only affects the AM0BH_Attr variant, not {run_cfg.loss_variant}")
    if axis == "gamma" and run_cfg.loss_variant in ("AM0", "AM", "BH"):
        raise ValidationError(f"axis gamma has no effect on variant {run_cfg.loss_variant}")


def sweep(run_cfg, ds, axis, values, on_run=None):
    """One run per value of ``axis``; every other setting stays as configured.

    Returns rows ``(value, rank1, mAP)``.
    """
    check_sweep_axis(axis, run_cfg)
    if not values:
        raise ValidationError("sweep needs at least one value")
    field = _AXIS_FIELDS[axis]
    kind = int if axis in ("Q", "P", "K") else float
    rows = []
    for value in values:
        cfg = dataclasses.replace(run_cfg, **{field: kind(value)})
        outcome = train_and_evaluate(cfg, ds)
        rows.append((kind(value), outcome.report.rank(1), outcome.report.map))
        if on_run is not None:
            on_run(value, outcome)
    return rows


def sweep_svg(rows, axis, width=480, height=320):
    """A two-series (rank-1, mAP) line chart as a standalone SVG string."""
    pad = 48
    xs = np.array([r[0] for r in rows], dtype=float)
    lo, hi = float(xs.min()), float(xs.max())
    span = hi - lo or 1.0

    def px(x):
        return pad + (x - lo) / span * (width - 2 * pad)

    def py(y):
        return height - pad - y * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{py(0)}" x2="{width - pad}" y2="{py(0)}" stroke="black"/>',
        f'<line x1="{pad}" y1="{py(0)}" x2="{pad}" y2="{py(1)}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{pad - 6}" y="{py(tick) + 4:.1f}" text-anchor="end">{tick:.2f}</text>')
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{py(0) + 16:.1f}" text-anchor="middle">{x:g}</text>')
    for col, color, label in ((1, "#1f77b4", "rank-1"), (2, "#d62728", "mAP")):
        pts = " ".join(f"{px(r[0]):.1f},{py(r[col]):.1f}" for r in rows)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for r in rows:
            parts.append(f'<circle cx="{px(r[0]):.1f}" cy="{py(r[col]):.1f}" r="3" fill="{color}"/>')
        y = pad - 24 + 14 * (col - 1)
        parts.append(f'<text x="{width - pad}" y="{y}" text-anchor="end" fill="{color}">{label}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">{axis}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
