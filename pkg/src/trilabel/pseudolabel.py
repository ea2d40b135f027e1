"""Fused pseudo-label generation and the confidence-masked unsupervised loss.

A pseudo-label is assembled from up to three per-class probability vectors:
the classifier head's output on the weak view, a softmax over cosine
similarities to per-class text anchors, and a renormalized per-class maximum
of instance-memory similarities. The average of the enabled levels is passed
through distribution alignment; the aligned vector supplies both the loss
mask (threshold ``alpha``) and the buffer admission test (threshold
``gamma``).
"""

from dataclasses import dataclass, field

import numpy as np

from .core import anchor_similarities, cross_entropy, l2_normalize, prob_audit, softmax_temp
from .errors import ConfigurationError, DomainError

# running-average entries are clamped here before dividing
ALIGN_EPS = 1e-8


def text_probability(q_w, anchors, tau):
    """Per-class probability from tempered cosine similarity to text anchors."""
    return softmax_temp(anchor_similarities(q_w, anchors), tau)


def instance_probability(z_w, buffer, tau, literal=False):
    """Per-class probability from the instance memory buffer.

    The per-class maximum of the buffer's softmax similarities is
    renormalized to sum 1 so it lives on the same scale as the other levels.
    ``literal=True`` skips that renormalization and returns the raw per-class
    maxima (softmax mass over buffer entries, scale ~1/M).
    """
    sims = buffer.instance_similarities(l2_normalize(z_w), tau)
    per_class = buffer.classwise_max(sims)
    if literal:
        return per_class
    total = per_class.sum()
    # softmax entries are strictly positive, so a nonempty buffer cannot
    # produce an all-zero class-max vector
    out = per_class / total
    prob_audit.check(out)
    return out


def fuse(p_sem, p_text, p_ins):
    """Average the three probability levels and renormalize."""
    return fuse_components([p_sem, p_text, p_ins])


def fuse_components(parts):
    """Average an arbitrary nonempty subset of levels and renormalize.

    The ablation harness disables levels by passing fewer components; with a
    single component this is (numerically) the identity.
    """
    if not parts:
        raise DomainError("fuse requires at least one probability vector")
    arrs = [np.asarray(p, dtype=np.float64) for p in parts]
    k = arrs[0].shape
    for a in arrs:
        if a.shape != k:
            raise DomainError(f"fuse length mismatch: {a.shape} vs {k}")
    mean = np.mean(arrs, axis=0)
    total = mean.sum()
    if total <= 0:
        raise DomainError("fused vector has non-positive mass")
    out = mean / total
    prob_audit.check(out)
    return out


class DistributionAligner:
    """Rescales pseudo-labels by target_marginal / running_average.

    The running average is a decaying mean of the raw (pre-alignment)
    pseudo-labels. During the first ``warmup_batches`` batches the aligner
    only accumulates and returns its input unchanged; afterwards it returns
    Normalize(p * target / running_avg). ``align`` reads the state from
    before its own update, and calls must be serialized per aligner
    (batch usage: compute all raw pseudo-labels first, then align in sample
    order).
    """

    def __init__(self, num_classes, target_marginal=None, decay=0.999,
                 warmup_batches=16):
        if not 0.0 < decay < 1.0:
            raise ConfigurationError(f"aligner decay must lie in (0, 1), got {decay}")
        if warmup_batches < 0:
            raise ConfigurationError("warmup_batches must be >= 0")
        self.num_classes = int(num_classes)
        self.decay = float(decay)
        self.warmup_batches = int(warmup_batches)
        self.running_avg = np.full(num_classes, 1.0 / num_classes, dtype=np.float64)
        if target_marginal is None:
            self.target_marginal = np.full(num_classes, 1.0 / num_classes, dtype=np.float64)
        else:
            tm = np.asarray(target_marginal, dtype=np.float64)
            if tm.shape != (num_classes,) or np.any(tm < 0):
                raise ConfigurationError("target marginal must be a length-K nonnegative vector")
            total = tm.sum()
            if total <= 0:
                raise ConfigurationError("target marginal must have positive mass")
            self.target_marginal = tm / total
        self._batches_seen = 0

    @property
    def in_warmup(self):
        return self._batches_seen < self.warmup_batches

    def advance_batch(self):
        """Mark a batch boundary; called once per unlabeled batch."""
        self._batches_seen += 1

    def peek(self, p_hat):
        """Alignment output for ``p_hat`` without touching the state."""
        p = np.asarray(p_hat, dtype=np.float64)
        if p.shape != (self.num_classes,):
            raise DomainError(f"pseudo-label shape {p.shape} != ({self.num_classes},)")
        if self.in_warmup:
            return p.copy()
        scaled = p * self.target_marginal / np.maximum(self.running_avg, ALIGN_EPS)
        out = scaled / scaled.sum()
        prob_audit.check(out)
        return out

    def align(self, p_hat):
        """Align ``p_hat`` and fold it into the running average."""
        out = self.peek(p_hat)
        p = np.asarray(p_hat, dtype=np.float64)
        avg = self.decay * self.running_avg + (1.0 - self.decay) * p
        self.running_avg = avg / avg.sum()
        return out

    def state_copy(self):
        """Snapshot used by tests and diagnostics."""
        return {
            "running_avg": self.running_avg.copy(),
            "target_marginal": self.target_marginal.copy(),
            "decay": self.decay,
            "warmup_batches": self.warmup_batches,
            "batches_seen": self._batches_seen,
        }


@dataclass
class FusedPseudoLabel:
    """Raw and aligned fused pseudo-label plus its threshold verdicts."""

    raw: np.ndarray
    aligned: np.ndarray
    confidence: float
    passes_alpha: bool
    passes_gamma: bool
    components: dict = field(default_factory=dict)


def generate(q_w, p_sem, anchors, buffer, aligner, tau, alpha, gamma,
             use_text=True, use_instance=True, literal_instance=False):
    """Full pseudo-label pipeline for one weak-view feature.

    Composes the enabled probability levels, fuses, aligns once, and
    evaluates both confidence thresholds on the aligned vector. Mutates the
    aligner's running average (one update per call).
    """
    p_sem = np.asarray(p_sem, dtype=np.float64)
    parts = {"sem": p_sem}
    if use_text:
        parts["text"] = text_probability(q_w, anchors, tau)
    if use_instance:
        parts["ins"] = instance_probability(l2_normalize(q_w), buffer, tau,
                                            literal=literal_instance)
    raw = fuse_components(list(parts.values()))
    aligned = aligner.align(raw)
    confidence = float(np.max(aligned))
    return FusedPseudoLabel(
        raw=raw,
        aligned=aligned,
        confidence=confidence,
        passes_alpha=confidence > alpha,
        passes_gamma=confidence > gamma,
        components=parts,
    )


def generate_batch(feats_w, p_sem_batch, anchors, buffer, aligner, tau, alpha, gamma,
                   use_text=True, use_instance=True, literal_instance=False):
    """Vectorized :func:`generate` over a batch of weak-view features.

    All raw pseudo-labels are computed against the buffer state at entry;
    alignment is then applied sequentially in sample order (one running
    average update per sample), matching a loop of per-sample ``generate``
    calls. Returns a dict of stacked arrays: components, ``raw``,
    ``aligned``, ``confidence``, ``passes_alpha``, ``passes_gamma``.
    """
    from .model import text_probabilities

    feats = np.asarray(feats_w, dtype=np.float64)
    p_sem = np.asarray(p_sem_batch, dtype=np.float64)
    if feats.ndim != 2 or p_sem.ndim != 2 or feats.shape[0] != p_sem.shape[0]:
        raise DomainError("feature and semantic batches are inconsistent")
    parts = {"sem": p_sem}
    if use_text:
        parts["text"] = text_probabilities(feats, anchors, tau, axis="class")
    if use_instance:
        sims = buffer.instance_similarities_batch(feats, tau)
        per_class = buffer.classwise_max_batch(sims)
        if literal_instance:
            parts["ins"] = per_class
        else:
            parts["ins"] = per_class / per_class.sum(axis=1, keepdims=True)
            prob_audit.check(parts["ins"])
    stacked = np.stack(list(parts.values()))
    raw = stacked.mean(axis=0)
    raw = raw / raw.sum(axis=1, keepdims=True)
    prob_audit.check(raw)
    if aligner is None:
        aligned = raw.copy()
    else:
        aligned = np.stack([aligner.align(raw[b]) for b in range(raw.shape[0])]) \
            if raw.shape[0] else raw.copy()
    confidence = aligned.max(axis=1) if aligned.shape[0] else np.zeros(0)
    return {
        "components": parts,
        "raw": raw,
        "aligned": aligned,
        "confidence": confidence,
        "passes_alpha": confidence > alpha,
        "passes_gamma": confidence > gamma,
    }


def unsup_loss(aligned_batch, p_s_batch, alpha):
    """Confidence-masked mean cross-entropy of strong-view predictions.

    Targets are the aligned pseudo-labels, used as constants (no gradient
    flows through them); the mean is over the whole batch, masked samples
    contributing zero. An empty batch yields 0.
    """
    aligned = [np.asarray(a, dtype=np.float64) for a in aligned_batch]
    preds = [np.asarray(p, dtype=np.float64) for p in p_s_batch]
    if len(aligned) != len(preds):
        raise DomainError(
            f"batch size mismatch: {len(aligned)} targets vs {len(preds)} predictions")
    if not aligned:
        return 0.0
    total = 0.0
    for target, pred in zip(aligned, preds):
        if float(np.max(target)) > alpha:
            total += cross_entropy(target, pred)
    return total / len(aligned)
