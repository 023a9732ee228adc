"""Cross-camera retrieval evaluation: cosine ranking, CMC and mAP.

A gallery item that shares both identity and camera with the probe is
dropped before ranking; everything else is ranked by descending cosine
similarity, ties going to the lower gallery index.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyGalleryAfterFilter, NoRelevant
from .numerics import cosine_matrix, l2_normalize


@dataclass
class EvalItem:
    embedding: np.ndarray
    identity: int
    camera: int


@dataclass
class EvalReport:
    cmc: np.ndarray  # cmc[k-1] = rank-k accuracy
    map: float
    ap: np.ndarray  # per query
    first_hit: np.ndarray  # 1-based rank of the first correct match, per query

    def rank(self, k):
        return float(self.cmc[k - 1])

    def same_as(self, other):
        return (
            self.map == other.map
            and np.array_equal(self.cmc, other.cmc)
            and np.array_equal(self.ap, other.ap)
            and np.array_equal(self.first_hit, other.first_hit)
        )


def rank_gallery(probe, gallery):
    """Order the gallery for one probe; returns gallery indices, best first.

    Raises:
        EmptyGalleryAfterFilter: every gallery item shares id and camera with the probe.
    """
    keep = [i for i, g in enumerate(gallery) if not (g.identity == probe.identity and g.camera == probe.camera)]
    if not keep:
        raise EmptyGalleryAfterFilter("no gallery item left after same-view filtering")
    p, _ = l2_normalize(probe.embedding)
    sims = np.array([float(np.dot(p, l2_normalize(gallery[i].embedding)[0])) for i in keep])
    order = np.argsort(-sims, kind="stable")
    return [keep[j] for j in order]


def average_precision(flags):
    """Non-interpolated AP of a ranked 0/1 relevance list."""
    hits = 0
    total = 0.0
    for r, rel in enumerate(flags, start=1):
        if rel:
            hits += 1
            total += hits / r
    if hits == 0:
        raise NoRelevant("ranking contains no relevant item")
    return total / hits


def cmc(flag_lists, max_k):
    """CMC curve: fraction of queries whose first hit lies at rank <= k."""
    first = []
    for q, flags in enumerate(flag_lists):
        hit = next((r for r, rel in enumerate(flags, start=1) if rel), None)
        if hit is None:
            raise NoRelevant(f"query {q} has no relevant candidate")
        first.append(hit)
    return _cmc_from_first(np.asarray(first), max_k)


def _cmc_from_first(first, max_k):
    ks = np.arange(1, max_k + 1)
    return np.array([np.count_nonzero(first <= k) for k in ks], dtype=np.float64) / len(first)


def evaluate(probe_emb, probe_ids, probe_cams, gallery_emb, gallery_ids, gallery_cams, max_k=10, backend=None):
    """Evaluate every probe against the gallery.

    Embeddings are l2-normalized internally. Raises EmptyGalleryAfterFilter or
    NoRelevant naming the offending query index.
    """
    sims = cosine_matrix(probe_emb, gallery_emb)
    order = np.argsort(-sims, axis=1, kind="stable")
    ap, first, kept = kernels.query_metrics(
        order, probe_ids, probe_cams, gallery_ids, gallery_cams, backend=backend
    )
    for q in range(len(ap)):
        if kept[q] == 0:
            raise EmptyGalleryAfterFilter(f"query {q}: no gallery item left after same-view filtering")
        if first[q] == 0:
            raise NoRelevant(f"query {q}: no cross-view match for identity {probe_ids[q]} in the gallery")
    # fsum is correctly rounded, so mAP does not depend on query order
    return EvalReport(_cmc_from_first(first, max_k), math.fsum(ap) / len(ap), ap, first)


def evaluate_dataset(embed, ds, max_k=10, backend=None):
    """Run :func:`evaluate` on the probe/gallery splits of ``ds``.

    ``embed`` maps raw features ``(n, input_dim)`` to embeddings.
    """
    probe, gallery = ds.subset("probe"), ds.subset("gallery")
    return evaluate(
        embed(probe.features), probe.ids, probe.cameras,
        embed(gallery.features), gallery.ids, gallery.cameras,
        max_k=max_k, backend=backend,
    )


REPORT_RANKS = (1, 5, 10)


def write_report_csv(report, path):
    with open(path, "w") as fh:
        fh.write("metric,value\n")
        for k in range(1, len(report.cmc) + 1):
            fh.write(f"rank_{k},{report.cmc[k - 1]:.6f}\n")
        fh.write(f"map,{report.map:.6f}\n")


def markdown_table(rows, ranks=REPORT_RANKS):
    """Render ``[(name, report_or_stats), ...]`` as a Rank-k / mAP table.

    Each value is either an :class:`EvalReport` or a dict mapping column
    name to ``(mean, std)``.
    """
    cols = [f"Rank-{k}" for k in ranks] + ["mAP"]
    lines = ["| Method | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for name, item in rows:
        if isinstance(item, EvalReport):
            cells = [f"{100 * item.rank(k):.2f}" for k in ranks if k <= len(item.cmc)]
            cells.append(f"{100 * item.map:.2f}")
        else:
            cells = [f"{100 * item[c][0]:.2f} ± {100 * item[c][1]:.2f}" for c in cols]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
