"""Numeric primitives shared by the whole engine.

Everything here is a pure function over numpy arrays: cosine similarity,
tempered softmax, cross-entropy with soft targets, and L2 normalization.
Probability vectors produced anywhere in the engine can be audited for
normalization through the module-level :data:`prob_audit` hook.
"""

import numpy as np

from .errors import DomainError

# floor applied to predicted probabilities before taking logs
LOG_EPS = 1e-12


class ProbAudit:
    """Optional instrumentation that checks every probability vector the
    engine emits for normalization (sum to 1 within ``tol``).

    Disabled by default so the hot path pays a single branch. Enable it for
    a run to prove the normalization invariant end to end::

        prob_audit.reset(enabled=True)
        ... run training ...
        assert prob_audit.count > 0 and prob_audit.worst <= 1e-6
    """

    def __init__(self):
        self.enabled = False
        self.count = 0
        self.worst = 0.0

    def reset(self, enabled=False):
        self.enabled = enabled
        self.count = 0
        self.worst = 0.0

    def check(self, p):
        if not self.enabled:
            return
        arr = np.asarray(p, dtype=np.float64)
        sums = arr.sum(axis=-1)
        err = float(np.max(np.abs(sums - 1.0)))
        self.count += int(np.prod(sums.shape)) if sums.shape else 1
        if err > self.worst:
            self.worst = err


prob_audit = ProbAudit()


def _as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def l2_normalize(v):
    """Return ``v`` scaled to unit L2 norm. Raises on (near-)zero vectors."""
    arr = _as_vector(v)
    norm = np.linalg.norm(arr)
    if norm < 1e-30:
        raise DomainError("cannot normalize a zero vector")
    return arr / norm


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, in [-1, 1]."""
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape != vb.shape:
        raise DomainError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-30 or nb < 1e-30:
        raise DomainError("cosine similarity undefined for zero-norm input")
    return float(np.dot(va, vb) / (na * nb))


def anchor_similarities(f, anchors):
    """Cosine similarity between ``f`` and each row of ``anchors``.

    ``anchors`` is a (K, D) matrix of per-class reference embeddings; the
    result is a length-K score vector.
    """
    vf = _as_vector(f, "f")
    mat = np.asarray(anchors, dtype=np.float64)
    if mat.ndim != 2:
        raise DomainError(f"anchors must be a 2-d matrix, got shape {mat.shape}")
    if mat.shape[1] != vf.shape[0]:
        raise DomainError(
            f"anchor dimension {mat.shape[1]} does not match feature dimension {vf.shape[0]}"
        )
    nf = np.linalg.norm(vf)
    norms = np.linalg.norm(mat, axis=1)
    if nf < 1e-30:
        raise DomainError("cosine similarity undefined for zero-norm input")
    if np.any(norms < 1e-30):
        raise DomainError("anchor with zero norm")
    return mat @ vf / (norms * nf)


def softmax_temp(scores, tau, axis=-1):
    """Temperature softmax: exp(s/tau) normalized along ``axis``.

    The max score is subtracted before exponentiation for overflow safety;
    the result is unchanged mathematically.
    """
    if not np.isfinite(tau) or tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    arr = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("scores contain non-finite entries")
    scaled = arr / tau
    scaled = scaled - np.max(scaled, axis=axis, keepdims=True)
    ex = np.exp(scaled)
    out = ex / np.sum(ex, axis=axis, keepdims=True)
    if axis == -1 or axis == out.ndim - 1:
        prob_audit.check(out)
    return out


def cross_entropy(target, pred):
    """-sum(target * log(pred)) with soft-target support.

    ``pred`` entries are clamped to ``LOG_EPS`` before the log so confident
    mispredictions yield a large finite loss instead of infinity.
    """
    t = _as_vector(target, "target")
    p = _as_vector(pred, "prediction")
    if t.shape != p.shape:
        raise DomainError(f"target/prediction shape mismatch: {t.shape} vs {p.shape}")
    return float(-np.sum(t * np.log(np.maximum(p, LOG_EPS))))


def one_hot(class_index, num_classes):
    """Length-``num_classes`` indicator vector for ``class_index``."""
    idx = int(class_index)
    if not 0 <= idx < num_classes:
        raise DomainError(f"class index {idx} out of range [0, {num_classes})")
    vec = np.zeros(num_classes, dtype=np.float64)
    vec[idx] = 1.0
    return vec
