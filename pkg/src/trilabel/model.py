"""Trainable linear adapter + classifier head with hand-derived gradients.

The adapter stands in for the fine-tunable part of an image encoder: it maps
input embeddings (dimension ``d_in``) to feature space (dimension ``d``),
where both the classification head and the text-anchor similarities live.
Gradients for the supervised, text-anchor and unsupervised losses are
computed analytically (including the cosine normalization terms); pseudo-label
targets are constants and never receive gradient.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .core import LOG_EPS, softmax_temp
from .errors import ConfigurationError, DataFormatError, DomainError

CHECKPOINT_MAGIC = b"SITM"
CHECKPOINT_VERSION = 1
_FLAG_OPTIMIZER_STATE = 1


@dataclass
class ModelParams:
    """Adapter (d x d_in, bias d) and head (k x d, bias k) weights."""

    adapter_w: np.ndarray
    adapter_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        self.adapter_w = np.asarray(self.adapter_w, dtype=np.float64)
        self.adapter_b = np.asarray(self.adapter_b, dtype=np.float64)
        self.head_w = np.asarray(self.head_w, dtype=np.float64)
        self.head_b = np.asarray(self.head_b, dtype=np.float64)
        d, d_in = self.adapter_w.shape
        k = self.head_w.shape[0]
        if self.adapter_b.shape != (d,) or self.head_w.shape != (k, d) \
                or self.head_b.shape != (k,):
            raise DomainError("inconsistent parameter shapes")

    @property
    def d_in(self):
        return self.adapter_w.shape[1]

    @property
    def d(self):
        return self.adapter_w.shape[0]

    @property
    def k(self):
        return self.head_w.shape[0]

    def copy(self):
        return ModelParams(self.adapter_w.copy(), self.adapter_b.copy(),
                           self.head_w.copy(), self.head_b.copy())

    def arrays(self):
        """Parameter arrays in canonical (checkpoint) order."""
        return [self.adapter_w, self.adapter_b, self.head_w, self.head_b]

    @classmethod
    def init(cls, d_in, d, k, rng, scheme="identity", head_scale=0.01):
        """Fresh parameters.

        ``identity`` keeps the adapter at the identity map (requires
        d == d_in) so input-space anchors stay meaningful at step 0;
        ``random`` draws a Gaussian adapter scaled by 1/sqrt(d_in). The head
        starts near zero either way, giving an almost-uniform classifier.
        """
        if scheme == "identity":
            if d != d_in:
                raise ConfigurationError(
                    f"identity adapter init requires d == d_in, got {d} != {d_in}")
            adapter_w = np.eye(d, dtype=np.float64)
        elif scheme == "random":
            adapter_w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d, d_in))
        else:
            raise ConfigurationError(f"unknown init scheme {scheme!r}")
        head_w = rng.normal(0.0, head_scale, size=(k, d))
        return cls(adapter_w, np.zeros(d), head_w, np.zeros(k))


@dataclass
class Gradients:
    """Gradient arrays mirroring :class:`ModelParams`."""

    adapter_w: np.ndarray
    adapter_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params.adapter_w), np.zeros_like(params.adapter_b),
                   np.zeros_like(params.head_w), np.zeros_like(params.head_b))

    def add_scaled(self, other, scale):
        self.adapter_w += scale * other.adapter_w
        self.adapter_b += scale * other.adapter_b
        self.head_w += scale * other.head_w
        self.head_b += scale * other.head_b
        return self

    def arrays(self):
        return [self.adapter_w, self.adapter_b, self.head_w, self.head_b]


@dataclass
class LossBreakdown:
    """The three loss terms and their weighted total."""

    l_s: float
    l_t: float
    l_u: float
    lambda1: float
    lambda2: float
    total: float = None

    def __post_init__(self):
        if self.total is None:
            self.total = self.l_s + self.lambda1 * self.l_t + self.lambda2 * self.l_u


# -- forward -----------------------------------------------------------------


def forward(params, x):
    """Map one input embedding to (feature, class probability)."""
    f, p = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return f[0], p[0]


def forward_batch(params, x_batch):
    """Vectorized forward pass: rows of ``x_batch`` -> (features, probabilities).

    The classification head uses a plain (temperature 1) softmax; tempered
    softmaxes apply only to the similarity-based probabilities.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DomainError(f"input batch shape {x.shape} incompatible with d_in={params.d_in}")
    feats = x @ params.adapter_w.T + params.adapter_b
    logits = feats @ params.head_w.T + params.head_b
    probs = softmax_temp(logits, 1.0, axis=-1)
    return feats, probs


# -- losses --------------------------------------------------------------------


def _one_hot_rows(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DomainError("labels must be a 1-d integer array")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"label out of range [0, {k})")
    out = np.zeros((labels.shape[0], k), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def supervised_loss(p_batch, labels):
    """Mean cross-entropy of head probabilities against integer labels."""
    p = np.asarray(p_batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise DomainError("prediction/label batch shapes inconsistent")
    if p.shape[0] == 0:
        raise ConfigurationError("labeled batch must contain at least one sample")
    picked = p[np.arange(p.shape[0]), labels]
    return float(np.mean(-np.log(np.maximum(picked, LOG_EPS))))


def _text_scores(f_batch, anchors):
    """Pairwise cosine similarities between feature rows and anchor rows."""
    f = np.asarray(f_batch, dtype=np.float64)
    t = np.asarray(anchors, dtype=np.float64)
    if f.ndim != 2 or t.ndim != 2 or f.shape[1] != t.shape[1]:
        raise DomainError(
            f"feature batch {f.shape} and anchors {t.shape} have mismatched dimensions")
    f_norms = np.linalg.norm(f, axis=1)
    t_norms = np.linalg.norm(t, axis=1)
    if np.any(f_norms < 1e-30) or np.any(t_norms < 1e-30):
        raise DomainError("zero-norm feature or anchor in text similarity")
    f_hat = f / f_norms[:, None]
    t_hat = t / t_norms[:, None]
    return f_hat @ t_hat.T, f_hat, t_hat, f_norms


def text_probabilities(f_batch, anchors, tau, axis="class"):
    """Softmax over the (batch, class) cosine score matrix.

    ``axis="class"`` normalizes each sample over the classes (the default
    reading); ``axis="batch"`` normalizes each class column over the batch,
    turning the loss into a batch-contrastive variant.
    """
    scores, _, _, _ = _text_scores(f_batch, anchors)
    if axis == "class":
        return softmax_temp(scores, tau, axis=1)
    if axis == "batch":
        return softmax_temp(scores, tau, axis=0)
    raise ConfigurationError(f"unknown text softmax axis {axis!r}")


def text_loss(f_batch, anchors, labels, tau, axis="class", reduction="sum"):
    """Cross-entropy pulling each feature toward its class anchor.

    Summed over the batch by default; ``reduction="mean"`` divides by the
    batch size. Gradients flow into the features (the adapter), never into
    the anchors.
    """
    if reduction not in ("sum", "mean"):
        raise ConfigurationError(f"unknown text loss reduction {reduction!r}")
    p = text_probabilities(f_batch, anchors, tau, axis=axis)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (p.shape[0],):
        raise DomainError("label batch does not match feature batch")
    picked = p[np.arange(p.shape[0]), labels]
    total = float(-np.sum(np.log(np.maximum(picked, LOG_EPS))))
    if reduction == "mean":
        total /= max(p.shape[0], 1)
    return total


def unsup_loss_batch(p_s_batch, pseudo_targets, masks):
    """Masked mean soft cross-entropy, vectorized over the batch."""
    p = np.asarray(p_s_batch, dtype=np.float64)
    t = np.asarray(pseudo_targets, dtype=np.float64)
    m = np.asarray(masks, dtype=bool)
    if p.shape != t.shape or m.shape != (p.shape[0],):
        raise DomainError("unsupervised batch shapes inconsistent")
    if p.shape[0] == 0:
        return 0.0
    per_sample = -np.sum(t * np.log(np.maximum(p, LOG_EPS)), axis=1)
    return float(np.sum(per_sample * m) / p.shape[0])


def total_loss(l_s, l_t, l_u, lambda1, lambda2):
    """Weighted sum of the three loss terms."""
    for name, v in (("l_s", l_s), ("l_t", l_t), ("l_u", l_u)):
        if not np.isfinite(v):
            raise DomainError(f"{name} is not finite: {v}")
    return float(l_s + lambda1 * l_t + lambda2 * l_u)


def compute_losses(params, labeled_x, labeled_y, anchors, strong_x, pseudo_targets,
                   masks, lambda1, lambda2, tau, text_axis="class",
                   text_reduction="sum", use_text_loss=True):
    """All three losses for one step's batches, as a LossBreakdown.

    Pseudo-targets and masks are fixed inputs (already detached), so this is
    a plain differentiable function of ``params`` — which is exactly what the
    finite-difference gradient check exploits.
    """
    feats, probs = forward_batch(params, labeled_x)
    l_s = supervised_loss(probs, labeled_y)
    if use_text_loss:
        l_t = text_loss(feats, anchors, labeled_y, tau, axis=text_axis,
                        reduction=text_reduction)
        eff_lambda1 = lambda1
    else:
        l_t = 0.0
        eff_lambda1 = 0.0
    strong_x = np.asarray(strong_x, dtype=np.float64)
    if strong_x.shape[0] > 0:
        _, p_s = forward_batch(params, strong_x)
        l_u = unsup_loss_batch(p_s, pseudo_targets, masks)
    else:
        l_u = 0.0
    return LossBreakdown(l_s=l_s, l_t=l_t, l_u=l_u, lambda1=eff_lambda1,
                         lambda2=lambda2)


# -- gradients -----------------------------------------------------------------


def _accumulate_head_chain(grads, d_logits, feats, x, params, scale=1.0):
    """Backprop d(loss)/d(logits) through head and adapter into ``grads``."""
    g = scale * d_logits
    grads.head_w += g.T @ feats
    grads.head_b += g.sum(axis=0)
    d_feats = g @ params.head_w
    grads.adapter_w += d_feats.T @ x
    grads.adapter_b += d_feats.sum(axis=0)


def gradients(params, labeled_x, labeled_y, anchors, strong_x, pseudo_targets,
              masks, lambda1, lambda2, tau, text_axis="class",
              text_reduction="sum", use_text_loss=True):
    """Analytic gradient of the total loss with respect to every parameter.

    Matches :func:`compute_losses` term by term. The cosine-similarity chain
    for the text loss includes the feature-normalization terms; the
    unsupervised term treats the pseudo-targets as constants.
    """
    grads = Gradients.zeros_like(params)
    x = np.asarray(labeled_x, dtype=np.float64)
    labels = np.asarray(labeled_y, dtype=np.int64)
    if x.shape[0] == 0:
        raise ConfigurationError("labeled batch must contain at least one sample")
    k = params.k
    y = _one_hot_rows(labels, k)

    feats, probs = forward_batch(params, x)

    # supervised term: d(mean CE)/d(logits) = (p - y) / B
    _accumulate_head_chain(grads, (probs - y) / x.shape[0], feats, x, params)

    # text term: only the adapter sees it, via the cosine chain
    if use_text_loss and lambda1 != 0.0:
        scores, f_hat, t_hat, f_norms = _text_scores(feats, anchors)
        if text_axis == "class":
            q = softmax_temp(scores, tau, axis=1)
            d_scores = (q - y) / tau
        elif text_axis == "batch":
            q = softmax_temp(scores, tau, axis=0)
            counts = y.sum(axis=0)  # targets per class column
            d_scores = (q * counts[None, :] - y) / tau
        else:
            raise ConfigurationError(f"unknown text softmax axis {text_axis!r}")
        if text_reduction == "mean":
            d_scores = d_scores / x.shape[0]
        elif text_reduction != "sum":
            raise ConfigurationError(f"unknown text loss reduction {text_reduction!r}")
        # d s_k / d f = (t_hat_k - s_k * f_hat) / ||f||
        coef = np.sum(d_scores * scores, axis=1, keepdims=True)
        d_feats = (d_scores @ t_hat - coef * f_hat) / f_norms[:, None]
        grads.adapter_w += lambda1 * (d_feats.T @ x)
        grads.adapter_b += lambda1 * d_feats.sum(axis=0)

    # unsupervised term: soft-target CE on the strong view, masked
    strong = np.asarray(strong_x, dtype=np.float64)
    if lambda2 != 0.0 and strong.shape[0] > 0:
        t = np.asarray(pseudo_targets, dtype=np.float64)
        m = np.asarray(masks, dtype=bool)
        if t.shape != (strong.shape[0], k) or m.shape != (strong.shape[0],):
            raise DomainError("pseudo-target or mask shapes inconsistent with strong batch")
        if np.any(m):
            feats_s, probs_s = forward_batch(params, strong)
            d_logits = (probs_s - t) * m[:, None] / strong.shape[0]
            _accumulate_head_chain(grads, d_logits, feats_s, strong, params,
                                   scale=lambda2)
    return grads


# -- optimizer -------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators plus step counter for Adam."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, params, opt_state=None):
    """Write parameters (and optionally optimizer state) as float32 LE."""
    flags = _FLAG_OPTIMIZER_STATE if opt_state is not None else 0
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIII", CHECKPOINT_VERSION, params.d_in,
                             params.d, params.k, flags))
        for arr in params.arrays():
            fh.write(arr.astype("<f4").tobytes())
        if opt_state is not None:
            fh.write(struct.pack("<Q", opt_state.step_count))
            fh.write(struct.pack("<ffff", opt_state.lr, opt_state.beta1,
                                 opt_state.beta2, opt_state.eps))
            for arr in opt_state.m + opt_state.v:
                fh.write(arr.astype("<f4").tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated checkpoint while reading {what}",
                              offset=fh.tell() - len(data))
    return data


def load_checkpoint(path):
    """Read a checkpoint; returns (params, opt_state_or_None)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}", offset=0)
        version, d_in, d, k, flags = struct.unpack("<IIIII", _read_exact(fh, 20, "header"))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}", offset=4)
        shapes = [(d, d_in), (d,), (k, d), (k,)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            raw = _read_exact(fh, 4 * n, f"parameter block {shape}")
            arrays.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape))
        params = ModelParams(*arrays)
        opt_state = None
        if flags & _FLAG_OPTIMIZER_STATE:
            (step_count,) = struct.unpack("<Q", _read_exact(fh, 8, "step counter"))
            lr, beta1, beta2, eps = struct.unpack("<ffff", _read_exact(fh, 16, "optimizer scalars"))
            opt_state = AdamState(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            opt_state.step_count = step_count
            blocks = []
            for shape in shapes + shapes:
                n = int(np.prod(shape))
                raw = _read_exact(fh, 4 * n, f"moment block {shape}")
                blocks.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape))
            opt_state.m = blocks[:4]
            opt_state.v = blocks[4:]
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError("unexpected trailing bytes in checkpoint",
                                  offset=fh.tell() - 1)
        return params, opt_state
