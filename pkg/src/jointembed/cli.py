"""``jointembed`` command-line entry point.

Subcommands: synth, train, eval, gradcheck, ablate, sweep. Every key of the
flat run configuration is also a kebab-case flag (``--gamma 0.5``,
``--hidden-dims 64,32``, ``--decay 36:1e-4,52:1e-5``) that overrides the
config file. Outputs go to ``--output-dir``, defaulting to
``$JOINTEMBED_OUTPUT_ROOT/<command>`` (``runs/<command>`` if unset).

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import config as C
from . import gradcheck as G
from .data import generate, read_dataset, write_dataset
from .errors import JointEmbedError, ValidationError
from .evaluation import REPORT_RANKS, evaluate, evaluate_dataset, markdown_table, write_report_csv
from .experiments import (
    SWEEP_AXES,
    ablate,
    attribute_accuracy,
    check_sweep_axis,
    summarize,
    sweep,
    sweep_svg,
    train_and_evaluate,
)
from .kernels import BACKEND
from .model import identity_embedding, load_checkpoint, save_checkpoint
from .trainer import PRESETS

OUTPUT_ROOT_ENV = "JOINTEMBED_OUTPUT_ROOT"
log = logging.getLogger("jointembed")


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input, so they exit with 1 rather than 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", default="benchmark",
                   help="JSON config file, or the name of a bundled config (benchmark, benchmark_attr, demo)")
    g.add_argument("--preset", choices=sorted(PRESETS), help="dataset preset for gamma (and lambda)")
    g.add_argument("--output-dir", help="output directory")
    for f in fields(C.RunConfig):
        if f.name == "preset":
            continue
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", metavar="VALUE")


def build_parser():
    parser = _Parser(prog="jointembed", description="Joint angular-margin and batch-hard embedding learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    _add_config_flags(p)
    p.add_argument("--out", help="dataset path (default: <output-dir>/dataset.csv)")

    p = sub.add_parser("train", help="train one variant and write a checkpoint and loss log")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's probe/gallery split")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _add_config_flags(p)
    p.add_argument("--trials", type=int, default=100, help="random configurations per loss")
    p.add_argument("--only", help="comma-separated subset of checks")
    p.add_argument("--corrupt", metavar="CHECK", help="sabotage one check's analytic gradient (negative control)")

    p = sub.add_parser("ablate", help="train the seven loss combinations and tabulate mean +- std")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("sweep", help="vary one setting and record rank-1 and mAP")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--svg", action="store_true", help="also write an SVG line chart")
    return parser


# ---------------------------------------------------------------------------
# plumbing


def resolve_config(args):
    """Config file (or bundled name), then preset, then flag overrides."""
    source = args.config
    if os.path.exists(source):
        cfg = C.load(source)
    elif os.sep in source or source.endswith(".json"):
        raise ValidationError(f"config file {source!r} not found")
    else:
        cfg = C.bundled(source)
    changes = {}
    if args.preset:
        changes["preset"] = args.preset
    for f in fields(C.RunConfig):
        text = getattr(args, f"set_{f.name}", None)
        if text is not None:
            changes[f.name] = C.parse_value(f.name, text)
    return C.from_dict(changes, cfg) if changes else cfg


def output_dir(args):
    if args.output_dir:
        path = Path(args.output_dir)
    else:
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(path):
    if not os.path.isfile(path):
        raise ValidationError(f"dataset file {path!r} not found")
    return read_dataset(path)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return format(v, ".6f") if isinstance(v, float) else v


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg, out):
    ds = generate(cfg.synth_config())
    path = Path(args.out) if args.out else out / "dataset.csv"
    write_dataset(ds, path)
    # raw-feature retrieval shows how much the camera nuisance hides identity
    probe, gallery = ds.subset("probe"), ds.subset("gallery")
    raw = evaluate(probe.features, probe.ids, probe.cameras, gallery.features, gallery.ids, gallery.cameras)
    print(f"wrote {path}")
    for split in ("train", "probe", "gallery"):
        sub = ds.subset(split)
        print(f"  {split:8s} {len(sub):6d} samples  {len(np.unique(sub.ids)):4d} identities")
    print(f"  cameras {ds.cameras.max() + 1}  attributes {ds.M}  input_dim {ds.input_dim}")
    print(f"  raw-feature rank-1 {raw.rank(1):.4f}  mAP {raw.map:.4f}")
    return 0


def cmd_train(args, cfg, out):
    ds = _load_dataset(args.dataset)
    outcome = train_and_evaluate(cfg, ds, log_path=out / "metrics.csv")
    meta = {"loss_variant": cfg.loss_variant, "classes": outcome.result.classes.tolist(), "seed": cfg.seed}
    save_checkpoint(out / "checkpoint.npz", outcome.result.params, outcome.model_cfg, meta)
    rep = outcome.report
    print(f"{cfg.loss_variant}: final epoch loss {outcome.result.epoch_losses[-1]:.6f}")
    print(f"  test rank-1 {rep.rank(1):.4f}  mAP {rep.map:.4f}")
    if outcome.attribute_accuracy is not None:
        print(f"  attribute accuracy {outcome.attribute_accuracy:.4f}")
    print(f"wrote {out / 'checkpoint.npz'} and {out / 'metrics.csv'}")
    return 0


def cmd_eval(args, cfg, out):
    if not os.path.isfile(args.checkpoint):
        raise ValidationError(f"checkpoint {args.checkpoint!r} not found")
    params, model_cfg, meta = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.dataset)
    if ds.input_dim != model_cfg.input_dim:
        raise ValidationError(f"dataset width {ds.input_dim} does not match the checkpoint's {model_cfg.input_dim}")
    rep = evaluate_dataset(lambda x: identity_embedding(params, model_cfg, x), ds, max_k=cfg.max_rank)
    write_report_csv(rep, out / "eval.csv")
    name = meta.get("loss_variant", "model")
    table = markdown_table([(name, rep)], ranks=[k for k in REPORT_RANKS if k <= cfg.max_rank])
    if model_cfg.M:
        acc = attribute_accuracy(params, model_cfg, ds)
        table += f"\nAttribute accuracy: {100 * acc:.2f}\n"
    (out / "eval.md").write_text(table)
    print(table, end="")
    return 0


def cmd_gradcheck(args, cfg, out):
    names = args.only.split(",") if args.only else list(G.CASES)
    unknown = [n for n in names + ([args.corrupt] if args.corrupt else []) if n not in G.CASES]
    if unknown:
        raise ValidationError(f"unknown checks {unknown}; choose from {sorted(G.CASES)}")
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    results = G.run_all(trials=args.trials, seed=cfg.seed, corrupt=args.corrupt, names=names)
    report = G.format_report(results)
    (out / "gradcheck.txt").write_text(report + "\n")
    print(report)
    return 0 if all(r.passed for r in results) else 2


def cmd_ablate(args, cfg, out):
    ds = _load_dataset(args.dataset)
    runs = []

    def record(variant, r, outcome):
        rep = outcome.report
        runs.append((variant, r, cfg.seed + r, rep.rank(1), rep.rank(5) if len(rep.cmc) >= 5 else "", rep.map))
        log.info("%s repeat %d: rank-1 %.4f mAP %.4f", variant, r, rep.rank(1), rep.map)

    reports = ablate(cfg, ds, args.repeats, on_run=record)
    stats = [(v, summarize(reps)) for v, reps in reports.items()]
    _write_rows(out / "ablation_runs.csv", ("variant", "repeat", "seed", "rank1", "rank5", "map"),
                [[_fmt(c) for c in row] for row in runs])
    cols = list(stats[0][1])
    _write_rows(
        out / "ablation.csv",
        ["variant"] + [f"{c}_{s}" for c in cols for s in ("mean", "std")],
        [[v] + [f"{x:.6f}" for c in cols for x in st[c]] for v, st in stats],
    )
    ranks = [k for k in REPORT_RANKS if k <= cfg.max_rank]
    table = markdown_table(stats, ranks=ranks)
    (out / "ablation.md").write_text(table)
    print(table, end="")
    return 0


def cmd_sweep(args, cfg, out):
    check_sweep_axis(args.axis, cfg)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    ds = _load_dataset(args.dataset)
    rows = sweep(cfg, ds, args.axis, values)
    path = out / f"sweep_{args.axis}.csv"
    _write_rows(path, ("value", "rank1", "map"), [(f"{v:g}", f"{r1:.6f}", f"{m:.6f}") for v, r1, m in rows])
    for v, r1, m in rows:
        print(f"{args.axis}={v:g}  rank-1 {r1:.4f}  mAP {m:.4f}")
    if args.svg:
        (out / f"sweep_{args.axis}.svg").write_text(sweep_svg(rows, args.axis))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    log.info("kernel backend: %s", BACKEND)
    try:
        cfg = resolve_config(args)
        out = output_dir(args)
        C.save(cfg, out / "config.json")
        return COMMANDS[args.command](args, cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (JointEmbedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
