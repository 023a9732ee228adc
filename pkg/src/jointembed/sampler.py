"""P x K identity-balanced batch planning."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewIdentities, ValidationError

POLICIES = ("resample", "skip_identity")


@dataclass(frozen=True)
class SamplerConfig:
    P: int = 4
    K: int = 8
    seed: int = 0
    replacement_policy: str = "resample"

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise ValidationError(f"P and K must both be >= 2, got P={self.P}, K={self.K}")
        if self.replacement_policy not in POLICIES:
            raise ValidationError(f"replacement_policy must be one of {POLICIES}")


@dataclass(frozen=True)
class EpochPlan:
    batches: tuple  # tuple of int64 arrays, each of length P*K
    P: int
    K: int

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def batch_size(cfg):
    return cfg.P * cfg.K


def index_by_identity(labels):
    """Map each identity to the sorted list of its sample indices."""
    labels = np.asarray(labels)
    out = {}
    for i, y in enumerate(labels.tolist()):
        out.setdefault(y, []).append(i)
    return out


def plan_epoch(by_identity, cfg, rng=None):
    """Lay out one epoch of P x K batches.

    Identities are drawn without replacement from a shuffled pool; when the
    pool runs dry mid-batch it is reshuffled (excluding identities already in
    the current batch). An epoch has ``ceil(n_identities / P)`` batches.

    Args:
        by_identity: mapping identity -> list of sample indices.
        cfg: a :class:`SamplerConfig`.
        rng: optional ``numpy.random.Generator``; defaults to one seeded from
            ``cfg.seed`` so that a fixed config yields a fixed plan.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ids = sorted(k for k, v in by_identity.items() if len(v) > 0)
    if cfg.replacement_policy == "skip_identity":
        ids = [k for k in ids if len(by_identity[k]) >= cfg.K]
    if len(ids) < cfg.P:
        raise TooFewIdentities(f"need at least P={cfg.P} usable identities, have {len(ids)}")

    n_batches = math.ceil(len(ids) / cfg.P)
    pool = []
    batches = []
    for _ in range(n_batches):
        chosen = []
        while len(chosen) < cfg.P:
            if not pool:
                pool = [ids[j] for j in rng.permutation(len(ids))]
                pool = [k for k in pool if k not in chosen]
            chosen.append(pool.pop(0))
        idx = []
        for ident in chosen:
            samples = np.asarray(by_identity[ident], dtype=np.int64)
            replace = len(samples) < cfg.K
            idx.append(rng.choice(samples, size=cfg.K, replace=replace))
        batches.append(np.concatenate(idx))
    return EpochPlan(tuple(batches), cfg.P, cfg.K)
