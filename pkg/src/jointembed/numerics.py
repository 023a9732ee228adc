"""Dense float64 primitives: normalization, distances, stable softmax and a
central-difference gradient oracle.

Vectors are 1-D ``float64`` numpy arrays and matrices are 2-D row-major ones.
Everything here is pure; nothing keeps state between calls.
"""

import numpy as np

from .errors import DimMismatch, EmptyInput, ZeroNorm

EPS = 1e-12
COS_CLAMP = 1.0 - 1e-7


def as_vec(values):
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"expected a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


def as_mat(values, rows=None, cols=None):
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatch(f"expected a matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise DimMismatch(f"expected shape ({rows}, {cols}), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")


def l2_normalize(v):
    """Return ``(v / ||v||, ||v||)``.

    Raises:
        ZeroNorm: if ``||v|| <= 1e-12``.
    """
    v = as_vec(v)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= EPS:
        raise ZeroNorm(f"cannot normalize a vector of norm {norm:g}")
    return v / norm, norm


def l2_normalize_rows(x):
    """Row-wise version of :func:`l2_normalize`; returns ``(unit_rows, norms)``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    if np.any(norms <= EPS):
        bad = int(np.argmax(norms <= EPS))
        raise ZeroNorm(f"row {bad} has norm {norms[bad]:g}")
    return x / norms[:, None], norms


def l2_normalize_backward(grad_unit, unit, norms):
    """Pull a gradient w.r.t. ``x / ||x||`` back to ``x`` (row-wise).

    The Jacobian of the normalization is ``(I - u u^T) / ||x||``, so the
    result is always orthogonal to ``x``.
    """
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - radial[:, None] * unit) / norms[:, None]


def euclidean_distance(a, b):
    a, b = as_vec(a), as_vec(b)
    _check_same_dim(a, b)
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def pairwise_euclidean(x):
    """All-pairs Euclidean distances of the rows of ``x``.

    Uses the same per-pair arithmetic as :func:`euclidean_distance`, so the
    two agree bit for bit (the diagonal is exactly zero).
    """
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def cosine_similarity(a, b):
    a, b = as_vec(a), as_vec(b)
    _check_same_dim(a, b)
    ua, _ = l2_normalize(a)
    ub, _ = l2_normalize(b)
    return float(np.clip(np.dot(ua, ub), -1.0, 1.0))


def cosine_matrix(a, b):
    """Cosine similarity between every row of ``a`` and every row of ``b``.

    Every entry is reduced with the same elementwise arithmetic (no BLAS), so
    duplicate rows produce exactly equal similarities and ties are real ties.
    """
    ua, _ = l2_normalize_rows(a)
    ub, _ = l2_normalize_rows(b)
    return np.clip(np.sum(ua[:, None, :] * ub[None, :, :], axis=-1), -1.0, 1.0)


def log_sum_exp(logits):
    """Numerically stable ``log(sum(exp(logits)))``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    top = np.max(logits)
    return float(top + np.log(np.sum(np.exp(logits - top))))


def log_sum_exp_rows(logits):
    top = np.max(logits, axis=1, keepdims=True)
    return top[:, 0] + np.log(np.sum(np.exp(logits - top), axis=1))


def softmax_rows(logits):
    top = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - top)
    return e / np.sum(e, axis=1, keepdims=True)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def finite_diff_grad(f, x, h=1e-6, skip=None):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape).

    Coordinates flagged in the boolean array ``skip`` are left as NaN so the
    caller can exclude them from comparisons.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    skip_flat = None if skip is None else np.asarray(skip, dtype=bool).reshape(-1)
    for i in range(flat.size):
        if skip_flat is not None and skip_flat[i]:
            grad[i] = np.nan
            continue
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def kink_mask(state, x, radius=1e-4):
    """Flag coordinates within ``radius`` of a non-differentiable point.

    ``state`` maps a point to a hashable description of the discrete regime
    (active hinges, selected pairs).  A coordinate is flagged when moving it
    by ``+-radius`` changes that regime.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    base = state(x)
    mask = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        orig = flat[i]
        for step in (radius, -radius):
            flat[i] = orig + step
            if state(x) != base:
                mask[i] = True
        flat[i] = orig
    return mask.reshape(x.shape)


def max_relative_error(analytic, numeric, floor=1e-4):
    """Largest coordinate error, scaled by the larger gradient's magnitude.

    Gradients whose magnitude is below ``floor`` are compared on the absolute
    scale ``floor``: central differences at ``h=1e-6`` cannot resolve values
    much smaller than that (a saturated softmax has gradients near 1e-11).
    NaN entries of ``numeric`` (skipped coordinates) are ignored.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = ~np.isnan(numeric)
    if not np.any(keep):
        return 0.0
    a, n = analytic[keep], numeric[keep]
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)
