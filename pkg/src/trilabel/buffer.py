"""Instance memory buffer: unit-norm feature rows plus class labels.

The buffer starts from the labeled set and grows with confidently
pseudo-labeled samples. Labeled-origin entries are permanent and their labels
never change; unlabeled-origin entries are evicted FIFO once the configured
capacity is reached, and re-admissions blend in place instead of appending
duplicates.

Concurrency contract: reads (``instance_similarities``, ``classwise_max``)
may run concurrently, but every mutating call takes the internal lock and
must not overlap reads. The training loop drives the buffer from a single
logical thread; the lock exists to serialize writers, not to make mixed
read/write access safe.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .core import l2_normalize, softmax_temp
from .errors import BufferStateError, ConfigurationError, DomainError, SampleLookupError

ORIGIN_LABELED = "labeled"
ORIGIN_UNLABELED = "unlabeled"

# default capacity = this factor times the labeled count
DEFAULT_CAPACITY_FACTOR = 4


@dataclass
class BufferEntry:
    """One stored instance: a stable id, a unit-norm feature and a label."""

    sample_id: int
    feature: np.ndarray
    label: int
    origin: str


class InstanceMemoryBuffer:
    """Growable, label-aware memory of unit feature embeddings."""

    def __init__(self, dim, num_classes, momentum=0.9, capacity=None,
                 admission_threshold=0.86):
        if not 0.0 < momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in (0, 1), got {momentum}")
        if not 0.0 < admission_threshold < 1.0:
            raise ConfigurationError(
                f"admission threshold must lie in (0, 1), got {admission_threshold}")
        self.dim = int(dim)
        self.num_classes = int(num_classes)
        self.momentum = float(momentum)
        self.capacity = capacity  # resolved on first init_from_labeled if None
        self.admission_threshold = float(admission_threshold)
        self._features = np.zeros((0, self.dim), dtype=np.float64)
        self._labels = np.zeros(0, dtype=np.int64)
        self._ids = []
        self._is_labeled = []
        self._index = {}
        self._lock = threading.Lock()

    # -- construction ------------------------------------------------------

    @classmethod
    def init_from_labeled(cls, labeled, num_classes, momentum=0.9, capacity=None,
                          admission_threshold=0.86):
        """Build a buffer holding one normalized entry per labeled sample.

        ``labeled`` is an iterable of ``(sample_id, feature, class_index)``.
        """
        items = list(labeled)
        if not items:
            raise ConfigurationError("cannot initialize buffer from an empty labeled set")
        dim = np.asarray(items[0][1]).shape[0]
        if capacity is None:
            capacity = DEFAULT_CAPACITY_FACTOR * len(items)
        if capacity < len(items):
            raise ConfigurationError(
                f"capacity {capacity} smaller than labeled count {len(items)}")
        buf = cls(dim, num_classes, momentum=momentum, capacity=int(capacity),
                  admission_threshold=admission_threshold)
        feats = np.zeros((len(items), dim), dtype=np.float64)
        labels = np.zeros(len(items), dtype=np.int64)
        for row, (sample_id, feature, label) in enumerate(items):
            if sample_id in buf._index:
                raise ConfigurationError(f"duplicate sample id {sample_id!r} in labeled set")
            if not 0 <= int(label) < num_classes:
                raise DomainError(f"label {label} out of range [0, {num_classes})")
            feats[row] = l2_normalize(np.asarray(feature, dtype=np.float64))
            labels[row] = int(label)
            buf._ids.append(sample_id)
            buf._is_labeled.append(True)
            buf._index[sample_id] = row
        buf._features = feats
        buf._labels = labels
        return buf

    # -- introspection -----------------------------------------------------

    def __len__(self):
        return len(self._ids)

    @property
    def labeled_count(self):
        return sum(self._is_labeled)

    @property
    def labels(self):
        """Read-only view of the stored labels, aligned with similarity rows."""
        return self._labels

    def __contains__(self, sample_id):
        return sample_id in self._index

    def entry(self, sample_id):
        if sample_id not in self._index:
            raise SampleLookupError(f"unknown sample id {sample_id!r}")
        row = self._index[sample_id]
        origin = ORIGIN_LABELED if self._is_labeled[row] else ORIGIN_UNLABELED
        return BufferEntry(sample_id, self._features[row].copy(),
                           int(self._labels[row]), origin)

    def entries(self):
        """Snapshot of all entries in storage (insertion) order."""
        return [self.entry(sid) for sid in list(self._ids)]

    # -- queries -----------------------------------------------------------

    def instance_similarities(self, z_w, tau):
        """Softmax over tempered cosine similarities against every entry.

        Returns a length-M vector summing to 1, aligned with storage order.
        """
        if len(self._ids) == 0:
            raise BufferStateError("instance similarities undefined for an empty buffer")
        z = l2_normalize(np.asarray(z_w, dtype=np.float64))
        if z.shape[0] != self.dim:
            raise DomainError(f"query dimension {z.shape[0]} != buffer dimension {self.dim}")
        # stored rows are unit-norm, so the dot product is the cosine
        sims = self._features @ z
        return softmax_temp(sims, tau)

    def classwise_max(self, similarities):
        """Per-class maximum of a length-M similarity vector.

        Classes with no entry in the buffer get 0.
        """
        sims = np.asarray(similarities, dtype=np.float64)
        if sims.shape != (len(self._ids),):
            raise DomainError(
                f"similarities shape {sims.shape} does not match buffer size {len(self._ids)}")
        out = np.zeros(self.num_classes, dtype=np.float64)
        np.maximum.at(out, self._labels, sims)
        return out

    def instance_similarities_batch(self, z_batch, tau):
        """Row-wise :meth:`instance_similarities` for a (U, dim) query batch."""
        if len(self._ids) == 0:
            raise BufferStateError("instance similarities undefined for an empty buffer")
        z = np.asarray(z_batch, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise DomainError(f"query batch shape {z.shape} incompatible with dim {self.dim}")
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms < 1e-30):
            raise DomainError("zero-norm query embedding")
        sims = (z / norms) @ self._features.T
        return softmax_temp(sims, tau, axis=1)

    def classwise_max_batch(self, sims_batch):
        """Row-wise :meth:`classwise_max` for a (U, M) similarity batch."""
        sims = np.asarray(sims_batch, dtype=np.float64)
        if sims.ndim != 2 or sims.shape[1] != len(self._ids):
            raise DomainError(
                f"similarity batch shape {sims.shape} does not match buffer size {len(self._ids)}")
        out = np.zeros((sims.shape[0], self.num_classes), dtype=np.float64)
        for c in range(self.num_classes):
            cols = self._labels == c
            if np.any(cols):
                out[:, c] = sims[:, cols].max(axis=1)
        return out

    # -- mutation ----------------------------------------------------------

    def ema_update(self, sample_id, z_new):
        """Blend a fresh feature into a stored row: m*old + (1-m)*new, renormalized."""
        with self._lock:
            if sample_id not in self._index:
                raise SampleLookupError(f"unknown sample id {sample_id!r}")
            row = self._index[sample_id]
            z = l2_normalize(np.asarray(z_new, dtype=np.float64))
            blended = self.momentum * self._features[row] + (1.0 - self.momentum) * z
            self._features[row] = l2_normalize(blended)

    def admit_unlabeled(self, sample_id, z, aligned_pseudo):
        """Admit a pseudo-labeled sample if its aligned confidence beats the threshold.

        Returns True iff the sample was stored (new entry or in-place blend).
        A re-admitted id is EMA-blended and relabeled with the new argmax
        rather than appended, so one sample never occupies multiple rows.
        """
        pseudo = np.asarray(aligned_pseudo, dtype=np.float64)
        if pseudo.shape != (self.num_classes,):
            raise DomainError(
                f"pseudo-label shape {pseudo.shape} != ({self.num_classes},)")
        confidence = float(np.max(pseudo))
        if not confidence > self.admission_threshold:
            return False
        label = int(np.argmax(pseudo))
        with self._lock:
            if sample_id in self._index:
                row = self._index[sample_id]
                if self._is_labeled[row]:
                    raise SampleLookupError(
                        f"sample id {sample_id!r} belongs to a labeled entry; "
                        "labeled labels are immutable")
                zn = l2_normalize(np.asarray(z, dtype=np.float64))
                blended = self.momentum * self._features[row] + (1.0 - self.momentum) * zn
                self._features[row] = l2_normalize(blended)
                self._labels[row] = label
                return True
            if self.capacity is not None and len(self._ids) >= self.capacity:
                if not self._evict_oldest_unlabeled():
                    # capacity filled entirely by permanent labeled entries
                    return False
            zn = l2_normalize(np.asarray(z, dtype=np.float64))
            self._features = np.vstack([self._features, zn[None, :]])
            self._labels = np.append(self._labels, label)
            self._ids.append(sample_id)
            self._is_labeled.append(False)
            self._index[sample_id] = len(self._ids) - 1
            return True

    def _evict_oldest_unlabeled(self):
        for row, labeled in enumerate(self._is_labeled):
            if not labeled:
                evicted = self._ids[row]
                self._features = np.delete(self._features, row, axis=0)
                self._labels = np.delete(self._labels, row)
                del self._ids[row]
                del self._is_labeled[row]
                del self._index[evicted]
                for sid, r in self._index.items():
                    if r > row:
                        self._index[sid] = r - 1
                return True
        return False

    # -- snapshotting ------------------------------------------------------

    def snapshot_records(self):
        """(id, origin, label, feature) tuples for debugging dumps."""
        return [
            (sid, ORIGIN_LABELED if lab else ORIGIN_UNLABELED,
             int(self._labels[row]), self._features[row].copy())
            for row, (sid, lab) in enumerate(zip(self._ids, self._is_labeled))
        ]
