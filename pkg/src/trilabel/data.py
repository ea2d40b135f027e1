"""Synthetic embedding benchmark, embedding-space augmentation, and the SITF
binary embedding file format.

The generator draws unit-direction class means in input space, pulls
configured pairs of means together to a target cosine (modelling visually
confusable classes), and samples isotropic Gaussian points around them. Text
anchors are noisy copies of the class means whose informativeness is
controlled by a correlation knob. Weak/strong augmentation perturb embeddings
with Gaussian noise scaled by the input's per-dimension RMS; the strong
variant additionally zeroes a fraction of coordinates.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import l2_normalize
from .errors import ConfigurationError, DataFormatError, DomainError

SITF_MAGIC = b"SITF"
SITF_VERSION = 1
FLAG_LABELS_PRESENT = 1
UNLABELED = -1


# -- configuration -----------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic benchmark.

    Sample counts are totals, split across classes as evenly as possible
    (the first ``total % num_classes`` classes receive one extra sample).
    ``confusable_pairs`` entries are ``(class_a, class_b, target_cosine)``;
    ``anchor_correlation`` sets how strongly text anchors track class means.
    """

    num_classes: int = 7
    input_dim: int = 32
    num_labeled: int = 100
    num_unlabeled: int = 5000
    num_test: int = 1400
    class_spread: float = 0.35
    confusable_pairs: list = field(default_factory=lambda: [(0, 1, 0.9), (2, 3, 0.9)])
    anchor_correlation: float = 0.8
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.input_dim < 2:
            raise ConfigurationError("input dimension must be >= 2")
        for name in ("num_labeled", "num_unlabeled", "num_test"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.class_spread < 0:
            raise ConfigurationError("class_spread must be >= 0")
        if not 0.0 <= self.anchor_correlation <= 1.0:
            raise ConfigurationError("anchor_correlation must lie in [0, 1]")
        seen = set()
        for a, b, rho in self.confusable_pairs:
            if not (0 <= a < self.num_classes and 0 <= b < self.num_classes) or a == b:
                raise ConfigurationError(f"invalid confusable pair ({a}, {b})")
            if not 0.0 <= rho <= 1.0:
                raise ConfigurationError(f"pair overlap {rho} outside [0, 1]")
            # the second class of a pair is re-aimed at the first, so it must
            # not have been constrained by any earlier pair
            if b in seen:
                raise ConfigurationError(
                    f"class {b} is constrained by multiple confusable pairs; "
                    "the overlap targets contradict")
            seen.add(a)
            seen.add(b)


@dataclass
class AugmentationConfig:
    """Noise scales (fractions of per-dimension RMS) and strong masking."""

    weak_noise: float = 0.1
    strong_noise: float = 0.8
    strong_mask_fraction: float = 0.2

    def validate(self):
        if self.weak_noise < 0 or self.strong_noise < 0:
            raise ConfigurationError("noise scales must be >= 0")
        if self.weak_noise >= self.strong_noise:
            raise ConfigurationError("weak noise must be smaller than strong noise")
        if not 0.0 <= self.strong_mask_fraction < 1.0:
            raise ConfigurationError("strong_mask_fraction must lie in [0, 1)")


# -- dataset -----------------------------------------------------------------


@dataclass
class LabeledSample:
    sample_id: int
    x: np.ndarray
    label: int


@dataclass
class UnlabeledSample:
    sample_id: int
    x: np.ndarray


class Dataset:
    """Labeled/unlabeled/test splits plus per-class text anchors.

    True labels of unlabeled samples, when known (synthetic data or an
    evaluation export), are kept behind :meth:`evaluation_truth` and are
    never read by the training path — only by metrics code.
    """

    def __init__(self, labeled, unlabeled, test, anchors, num_classes,
                 hidden_truth=None):
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.test = test
        self.anchors = np.asarray(anchors, dtype=np.float64)
        self.num_classes = int(num_classes)
        self._hidden_truth = hidden_truth
        ids = [s.sample_id for s in labeled] + [s.sample_id for s in unlabeled] \
            + [s.sample_id for s in test]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("sample ids must be globally unique")

    @property
    def dim(self):
        return self.anchors.shape[1]

    def evaluation_truth(self):
        """Hidden unlabeled labels for evaluation-only use; None if unknown."""
        return self._hidden_truth

    def labeled_marginal(self):
        """Class frequencies of the labeled split."""
        counts = np.zeros(self.num_classes, dtype=np.float64)
        for s in self.labeled:
            counts[s.label] += 1.0
        return counts / counts.sum()


def _split_counts(total, num_classes):
    base = total // num_classes
    rem = total % num_classes
    return [base + (1 if c < rem else 0) for c in range(num_classes)]


def make_class_means(cfg, rng):
    """Unit class means with the configured pairwise overlaps applied.

    Means are drawn as random mutually orthogonal unit directions (when the
    dimension allows), so the configured pairs are the only systematic class
    overlaps; difficulty then varies little across seeds.
    """
    raw = rng.normal(size=(cfg.input_dim, max(cfg.num_classes, 1)))
    if cfg.num_classes <= cfg.input_dim:
        q, r = np.linalg.qr(raw)
        # fix the sign convention so the draw is deterministic under seed
        means = (q * np.sign(np.diag(r))).T[:cfg.num_classes].copy()
    else:
        means = np.stack([l2_normalize(raw[:, c]) for c in range(cfg.num_classes)])
    for a, b, rho in cfg.confusable_pairs:
        # rebuild mean_b in the plane spanned by mean_a and an orthogonal
        # direction so cos(mean_a, mean_b) is exactly rho
        perp = means[b] - np.dot(means[b], means[a]) * means[a]
        if np.linalg.norm(perp) < 1e-9:
            perp = rng.normal(size=cfg.input_dim)
            perp -= np.dot(perp, means[a]) * means[a]
        perp = l2_normalize(perp)
        means[b] = rho * means[a] + np.sqrt(max(0.0, 1.0 - rho * rho)) * perp
    return means


def make_text_anchors(cfg, class_means, rng):
    """Per-class anchors: a correlation-weighted mix of mean and random noise."""
    anchors = np.zeros_like(np.asarray(class_means, dtype=np.float64))
    for c in range(anchors.shape[0]):
        noise = l2_normalize(rng.normal(size=anchors.shape[1]))
        mix = cfg.anchor_correlation * class_means[c] + (1.0 - cfg.anchor_correlation) * noise
        if np.linalg.norm(mix) < 1e-9:
            mix = noise  # degenerate cancellation; fall back to the noise direction
        anchors[c] = l2_normalize(mix)
    return anchors


def generate_synthetic(cfg):
    """Build a deterministic synthetic Dataset from the config's seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    means = make_class_means(cfg, rng)
    anchors = make_text_anchors(cfg, means, rng)

    next_id = 0
    truth = {}

    def draw_split(total):
        nonlocal next_id
        samples = []
        for c, count in enumerate(_split_counts(total, cfg.num_classes)):
            for _ in range(count):
                x = means[c] + rng.normal(0.0, cfg.class_spread, size=cfg.input_dim)
                samples.append((next_id, x, c))
                next_id += 1
        return samples

    labeled = [LabeledSample(i, x, c) for i, x, c in draw_split(cfg.num_labeled)]
    unl = draw_split(cfg.num_unlabeled)
    unlabeled = [UnlabeledSample(i, x) for i, x, _ in unl]
    truth = {i: c for i, _, c in unl}
    test = [LabeledSample(i, x, c) for i, x, c in draw_split(cfg.num_test)]
    return Dataset(labeled, unlabeled, test, anchors, cfg.num_classes,
                   hidden_truth=truth)


# -- augmentation ------------------------------------------------------------


def _rms(x):
    return float(np.linalg.norm(x) / np.sqrt(x.shape[0]))


def weak_aug(x, cfg, rng):
    """Light Gaussian perturbation of an embedding."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.weak_noise == 0.0:
        return x.copy()
    return x + rng.normal(0.0, cfg.weak_noise * _rms(x), size=x.shape)


def strong_aug(x, cfg, rng):
    """Heavy Gaussian perturbation plus random coordinate masking."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if cfg.strong_noise > 0.0:
        out = out + rng.normal(0.0, cfg.strong_noise * _rms(x), size=x.shape)
    n_mask = int(round(cfg.strong_mask_fraction * x.shape[0]))
    if n_mask > 0:
        idx = rng.choice(x.shape[0], size=n_mask, replace=False)
        out[idx] = 0.0
    return out


def weak_aug_batch(x_batch, cfg, rng):
    """Row-wise weak augmentation with per-row RMS scaling."""
    x = np.asarray(x_batch, dtype=np.float64)
    if cfg.weak_noise == 0.0:
        return x.copy()
    rms = np.linalg.norm(x, axis=1, keepdims=True) / np.sqrt(x.shape[1])
    return x + rng.normal(size=x.shape) * (cfg.weak_noise * rms)


def strong_aug_batch(x_batch, cfg, rng):
    """Row-wise strong augmentation (noise, then per-row coordinate masking)."""
    x = np.asarray(x_batch, dtype=np.float64)
    out = x.copy()
    if cfg.strong_noise > 0.0:
        rms = np.linalg.norm(x, axis=1, keepdims=True) / np.sqrt(x.shape[1])
        out = out + rng.normal(size=x.shape) * (cfg.strong_noise * rms)
    n_mask = int(round(cfg.strong_mask_fraction * x.shape[1]))
    if n_mask > 0:
        for row in range(out.shape[0]):
            idx = rng.choice(x.shape[1], size=n_mask, replace=False)
            out[row, idx] = 0.0
    return out


# -- SITF embedding files -------------------------------------------------------


@dataclass
class EmbeddingRecord:
    """One row of an embedding file: id, label (-1 = unlabeled), float32 values."""

    sample_id: int
    label: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype="<f4")


def write_embeddings(path, records, dim=None):
    """Write records to ``path`` in the SITF layout.

    Header: magic ``SITF``, u32 version, u64 record count, u32 dimension,
    u32 flags (bit 0 set when any record carries a label >= 0). Records:
    u64 id, i32 label, then ``dim`` float32 values, all little-endian.
    """
    records = list(records)
    if dim is None:
        dim = records[0].values.shape[0] if records else 0
    flags = 0
    for rec in records:
        if rec.values.shape != (dim,):
            raise DomainError(
                f"record {rec.sample_id} has dimension {rec.values.shape[0]}, expected {dim}")
        if rec.label >= 0:
            flags |= FLAG_LABELS_PRESENT
    with open(path, "wb") as fh:
        fh.write(SITF_MAGIC)
        fh.write(struct.pack("<IQII", SITF_VERSION, len(records), dim, flags))
        for rec in records:
            fh.write(struct.pack("<Qi", rec.sample_id, rec.label))
            fh.write(rec.values.tobytes())


def read_embeddings(path):
    """Read a SITF file back into records; validates layout byte by byte."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4 or magic != SITF_MAGIC:
            raise DataFormatError(f"bad magic {magic!r}, expected {SITF_MAGIC!r}", offset=0)
        header = fh.read(20)
        if len(header) != 20:
            raise DataFormatError("truncated header", offset=4 + len(header))
        version, count, dim, flags = struct.unpack("<IQII", header)
        if version != SITF_VERSION:
            raise DataFormatError(f"unsupported version {version}", offset=4)
        records = []
        offset = 24
        rec_size = 12 + 4 * dim
        for i in range(count):
            raw = fh.read(rec_size)
            if len(raw) != rec_size:
                raise DataFormatError(
                    f"truncated record {i} ({len(raw)} of {rec_size} bytes)",
                    offset=offset + len(raw))
            sample_id, label = struct.unpack_from("<Qi", raw, 0)
            values = np.frombuffer(raw, dtype="<f4", count=dim, offset=12).copy()
            records.append(EmbeddingRecord(sample_id, label, values))
            offset += rec_size
        if fh.read(1):
            raise DataFormatError("trailing bytes after last record", offset=offset)
    return records


def dataset_to_records(samples, labels=None):
    """Convert raw samples to records (labels default to unlabeled)."""
    out = []
    for i, s in enumerate(samples):
        label = UNLABELED if labels is None else int(labels[i])
        out.append(EmbeddingRecord(s.sample_id, label, np.asarray(s.x, dtype="<f4")))
    return out


def write_dataset(dataset, labeled_path, unlabeled_path, test_path, anchors_path,
                  include_hidden_labels=True):
    """Write a Dataset as four SITF files.

    The unlabeled file carries the hidden true labels when available (they
    are treated as evaluation-only truth by the loader), or -1 otherwise.
    """
    write_embeddings(labeled_path, [
        EmbeddingRecord(s.sample_id, s.label, np.asarray(s.x, dtype="<f4"))
        for s in dataset.labeled], dim=dataset.dim)
    truth = dataset.evaluation_truth() if include_hidden_labels else None
    write_embeddings(unlabeled_path, [
        EmbeddingRecord(s.sample_id,
                        truth.get(s.sample_id, UNLABELED) if truth else UNLABELED,
                        np.asarray(s.x, dtype="<f4"))
        for s in dataset.unlabeled], dim=dataset.dim)
    write_embeddings(test_path, [
        EmbeddingRecord(s.sample_id, s.label, np.asarray(s.x, dtype="<f4"))
        for s in dataset.test], dim=dataset.dim)
    write_embeddings(anchors_path, [
        EmbeddingRecord(c, c, np.asarray(dataset.anchors[c], dtype="<f4"))
        for c in range(dataset.num_classes)], dim=dataset.dim)


def load_dataset(labeled_path, unlabeled_path, test_path, anchors_path):
    """Assemble a Dataset from four SITF files.

    Labels found in the unlabeled file become hidden evaluation truth, not
    training labels. The number of classes is the anchor count; anchor
    records must be labeled 0..K-1.
    """
    anchor_recs = read_embeddings(anchors_path)
    if not anchor_recs:
        raise DataFormatError("anchors file contains no records")
    k = len(anchor_recs)
    by_class = {rec.label: rec for rec in anchor_recs}
    if sorted(by_class) != list(range(k)):
        raise DataFormatError("anchor labels must be exactly 0..K-1")
    anchors = np.stack([by_class[c].values.astype(np.float64) for c in range(k)])

    labeled_recs = read_embeddings(labeled_path)
    if not labeled_recs:
        raise ConfigurationError("labeled file contains no records")
    labeled = []
    for rec in labeled_recs:
        if not 0 <= rec.label < k:
            raise DataFormatError(
                f"labeled record {rec.sample_id} has invalid label {rec.label}")
        labeled.append(LabeledSample(rec.sample_id, rec.values.astype(np.float64), rec.label))

    unlabeled = []
    truth = {}
    for rec in read_embeddings(unlabeled_path):
        unlabeled.append(UnlabeledSample(rec.sample_id, rec.values.astype(np.float64)))
        if 0 <= rec.label < k:
            truth[rec.sample_id] = rec.label

    test = []
    for rec in read_embeddings(test_path):
        if not 0 <= rec.label < k:
            raise DataFormatError(
                f"test record {rec.sample_id} has invalid label {rec.label}")
        test.append(LabeledSample(rec.sample_id, rec.values.astype(np.float64), rec.label))

    return Dataset(labeled, unlabeled, test, anchors, k,
                   hidden_truth=truth or None)
