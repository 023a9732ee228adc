"""Synthetic identity datasets, dataset CSV I/O and Market-1501 filename parsing.

The generator stands in for a re-identification dataset: every identity has a
latent center, every camera applies its own fixed affine map to it, and each
sample adds Gaussian noise. Camera offsets (``nuisance_scale``) dominate raw
feature similarity, so matching across cameras requires a learned embedding.
"""

import csv
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BadFilename, InvariantViolation, ParseError, ValidationError

SPLITS = ("train", "probe", "gallery")


@dataclass(frozen=True)
class SynthConfig:
    n_train_identities: int = 50
    n_test_identities: int = 50
    samples_per_identity: tuple = (8, 24)
    test_samples_per_identity: int = 16
    input_dim: int = 32
    n_cameras: int = 4
    M: int = 0
    identity_spread: float = 1.0
    nuisance_scale: float = 4.0
    camera_mixing: float = 0.3
    noise_sigma: float = 0.3
    attribute_strength: float = 3.0
    seed: int = 0

    def __post_init__(self):
        spi = self.samples_per_identity
        if isinstance(spi, (int, np.integer)):
            spi = (int(spi), int(spi))
        spi = tuple(int(v) for v in spi)
        object.__setattr__(self, "samples_per_identity", spi)
        if self.n_train_identities < 2:
            raise ValidationError("need at least 2 training identities")
        if self.n_test_identities < 0:
            raise ValidationError("n_test_identities must be >= 0")
        if self.n_cameras < 2:
            raise ValidationError("need at least 2 cameras")
        if len(spi) != 2 or spi[0] < 1 or spi[1] < spi[0]:
            raise ValidationError(f"samples_per_identity must be n or (lo, hi), got {spi}")
        if self.n_test_identities and self.test_samples_per_identity < 2 * self.n_cameras:
            raise ValidationError("test_samples_per_identity must be >= 2 * n_cameras")
        if min(self.identity_spread, self.nuisance_scale, self.camera_mixing, self.noise_sigma, self.attribute_strength) < 0:
            raise ValidationError("scales must be non-negative")
        if self.input_dim < 1 or self.M < 0:
            raise ValidationError("input_dim must be >= 1 and M >= 0")

    @property
    def n_identities(self):
        return self.n_train_identities + self.n_test_identities


@dataclass
class Dataset:
    features: np.ndarray  # (n, input_dim) float64
    ids: np.ndarray  # (n,) int64
    cameras: np.ndarray  # (n,) int64
    attributes: np.ndarray  # (n, M) int64
    split: np.ndarray  # (n,) str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.cameras = np.asarray(self.cameras, dtype=np.int64)
        attrs = np.asarray(self.attributes, dtype=np.int64)
        if attrs.ndim != 2 or attrs.shape[0] != len(self.ids):
            attrs = attrs.reshape(len(self.ids), -1) if attrs.size else np.zeros((len(self.ids), 0), np.int64)
        self.attributes = attrs
        self.split = np.asarray(self.split, dtype=str)

    def __len__(self):
        return len(self.ids)

    @property
    def M(self):
        return self.attributes.shape[1]

    @property
    def input_dim(self):
        return self.features.shape[1]

    def subset(self, split):
        keep = self.split == split
        return Dataset(
            self.features[keep], self.ids[keep], self.cameras[keep], self.attributes[keep], self.split[keep]
        )

    def train_labels(self):
        """Dense ``0..c-1`` labels for the train split plus the id for each label."""
        train = self.subset("train")
        classes, dense = np.unique(train.ids, return_inverse=True)
        return dense.astype(np.int64), classes

    def equals(self, other):
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.cameras, other.cameras)
            and np.array_equal(self.attributes, other.attributes)
            and np.array_equal(self.split, other.split)
        )

    def validate(self):
        """Check the re-identification split invariants; raise InvariantViolation."""
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise InvariantViolation(f"unknown split tags {sorted(bad)}")
        train_ids = set(self.ids[self.split == "train"].tolist())
        test_mask = self.split != "train"
        test_ids = set(self.ids[test_mask].tolist())
        overlap = train_ids & test_ids
        if overlap:
            raise InvariantViolation(f"identities in both train and test: {sorted(overlap)[:5]}")
        for ident in sorted(test_ids):
            cams = np.unique(self.cameras[test_mask & (self.ids == ident)])
            if len(cams) < 2:
                raise InvariantViolation(f"test identity {ident} is seen by fewer than 2 cameras")
        for ident in np.unique(self.ids):
            rows = self.attributes[self.ids == ident]
            if len(rows) and np.any(rows != rows[0]):
                raise InvariantViolation(f"attributes vary within identity {ident}")
        return self


def _camera_sequence(n, n_cameras, rng):
    """Cycle through a random camera order so every camera is used evenly."""
    order = rng.permutation(n_cameras)
    return order[np.arange(n) % n_cameras]


def _draw_world(cfg, rng):
    """Identity centers, camera maps and attribute bits, in a fixed draw order."""
    dim = cfg.input_dim
    centers = cfg.identity_spread * rng.standard_normal((cfg.n_identities, dim))
    mixes = np.eye(dim) + cfg.camera_mixing * rng.standard_normal((cfg.n_cameras, dim, dim)) / np.sqrt(dim)
    offsets = cfg.nuisance_scale * rng.standard_normal((cfg.n_cameras, dim))
    attrs = rng.integers(0, 2, size=(cfg.n_identities, cfg.M))
    if cfg.M:
        basis = rng.standard_normal((dim, cfg.M))
        if cfg.M <= dim:
            basis, _ = np.linalg.qr(basis)
            centers = centers - (centers @ basis) @ basis.T
        else:
            basis /= np.linalg.norm(basis, axis=0, keepdims=True)
        centers = centers + cfg.attribute_strength * (2 * attrs - 1) @ basis.T
    return centers, mixes, offsets, attrs.astype(np.int64)


def generate(cfg):
    """Draw a synthetic dataset; deterministic for a given config.

    Identity ``i`` gets center ``c_i ~ spread * N(0, I)``; camera ``k`` has map
    ``x -> A_k x + t_k`` with ``A_k = I + mixing * E_k / sqrt(D)`` and
    ``t_k ~ nuisance_scale * N(0, I)``. Each identity also draws ``M`` random
    attribute bits, written into its center as ``+-attribute_strength`` along
    fixed orthonormal directions, so attributes are constant per identity and
    visible in appearance.
    """
    rng = np.random.default_rng(cfg.seed)
    centers, mixes, offsets, attrs_by_id = _draw_world(cfg, rng)
    dim = cfg.input_dim

    lo, hi = cfg.samples_per_identity
    feats, ids, cams, attrs, split = [], [], [], [], []
    for ident in range(cfg.n_identities):
        is_test = ident >= cfg.n_train_identities
        if is_test:
            n = cfg.test_samples_per_identity
        elif lo == hi:
            n = lo
        else:
            # log-uniform counts give a long tail of rare identities
            n = int(np.floor(np.exp(rng.uniform(np.log(lo), np.log(hi + 1)))))
        cam = _camera_sequence(n, cfg.n_cameras, rng)
        mapped = np.einsum("nij,j->ni", mixes[cam], centers[ident]) + offsets[cam]
        x = mapped + cfg.noise_sigma * rng.standard_normal((n, dim))
        tags = np.full(n, "train", dtype=object)
        if is_test:
            tags[:] = "gallery"
            for k in range(cfg.n_cameras):
                tags[np.flatnonzero(cam == k)[0]] = "probe"
        feats.append(x)
        ids.append(np.full(n, ident))
        cams.append(cam)
        attrs.append(np.repeat(attrs_by_id[ident][None, :], n, axis=0))
        split.append(tags)
    ds = Dataset(
        np.concatenate(feats),
        np.concatenate(ids),
        np.concatenate(cams),
        np.concatenate(attrs),
        np.concatenate(split).astype(str),
    )
    return ds.validate()


def camera_mapped_centers(cfg):
    """The noiseless ``A_k c_i + t_k`` for every (identity, camera) pair, shape (n_id, n_cam, D)."""
    centers, mixes, offsets, _ = _draw_world(cfg, np.random.default_rng(cfg.seed))
    return np.einsum("kij,nj->nki", mixes, centers) + offsets[None, :, :]


# ---------------------------------------------------------------------------
# CSV I/O


def _header(m, dim):
    return ["id", "camera", "split"] + [f"attr_{j}" for j in range(m)] + [f"x_{j}" for j in range(dim)]


def write_dataset(ds, path):
    """Write ``ds`` as CSV; floats use 17 significant digits so reads are exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(ds.M, ds.input_dim))
        for i in range(len(ds)):
            w.writerow(
                [int(ds.ids[i]), int(ds.cameras[i]), ds.split[i]]
                + [int(a) for a in ds.attributes[i]]
                + [format(float(v), ".17g") for v in ds.features[i]]
            )


def read_dataset(path, M=None):
    """Read a dataset CSV written by :func:`write_dataset`.

    Args:
        M: expected attribute count; a header with fewer ``attr_*`` columns is
            a ParseError.
    """
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header:
            raise ParseError(f"{path} is empty", line=1)
        if header[:3] != ["id", "camera", "split"]:
            raise ParseError("header must start with id,camera,split", line=1)
        n_attr = sum(1 for h in header if h.startswith("attr_"))
        dim = sum(1 for h in header if h.startswith("x_"))
        if header != _header(n_attr, dim):
            raise ParseError("columns must be id,camera,split,attr_0..attr_{M-1},x_0..x_{D-1}", line=1)
        if M is not None and n_attr != M:
            raise ParseError(f"expected {M} attribute columns, found {n_attr}", line=1)
        if dim == 0:
            raise ParseError("no feature columns", line=1)
        ids, cams, split, attrs, feats = [], [], [], [], []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                ids.append(int(row[0]))
                cams.append(int(row[1]))
                attrs.append([int(v) for v in row[3 : 3 + n_attr]])
                feats.append([float(v) for v in row[3 + n_attr :]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if row[2] not in SPLITS:
                raise ParseError(f"unknown split {row[2]!r}", line=lineno)
            split.append(row[2])
    if not ids:
        raise ParseError(f"{path} has no samples", line=2)
    ds = Dataset(
        np.array(feats, dtype=np.float64),
        np.array(ids),
        np.array(cams),
        np.array(attrs, dtype=np.int64).reshape(len(ids), n_attr) if n_attr else np.zeros((len(ids), 0), np.int64),
        np.array(split),
    )
    return ds.validate()


# ---------------------------------------------------------------------------
# Market-1501 file names

_MARKET_RE = re.compile(r"^(-?\d+)_c(\d+)(?:s\d+)?_.*\.(?:jpg|jpeg|png)$", re.IGNORECASE)


class MarketName(NamedTuple):
    identity: int
    camera: int
    is_distractor: bool
    is_junk: bool


def parse_market_name(filename):
    """Parse ``0002_c1s1_000451_03.jpg`` style names.

    Identity ``-1`` marks distractors and ``0`` junk images.
    """
    name = filename.replace("\\", "/").rsplit("/", 1)[-1]
    match = _MARKET_RE.match(name)
    if not match:
        raise BadFilename(f"not a Market-1501 style file name: {filename!r}")
    ident, cam = int(match.group(1)), int(match.group(2))
    return MarketName(ident, cam, ident == -1, ident == 0)
