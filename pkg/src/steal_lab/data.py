"""Synthetic classification tasks and the half/half split protocol.

Blobs and spirals are desk-scale stand-ins for image data: blobs give an
easy, nearly separable task; spirals force nonlinear decision boundaries so
surrogate capacity matters. Generators are pure functions of their arguments
including the seed, and emit rows in shuffled order so positional halves stay
class-balanced.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DomainError, ShapeError
from .tensor import as_matrix

SPIRAL_TURNS = 1.75
SPIRAL_R0 = 0.3
SPIRAL_R1 = 3.0


@dataclass
class Dataset:
    features: np.ndarray   # (N, d) float64
    labels: np.ndarray     # (N,) int64
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError("labels must be one int per feature row")
        if self.num_classes < 2:
            raise DomainError("num_classes must be >= 2")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dims(self):
        return self.features.shape[1]

    def require_all_classes(self):
        """Enforce the at-least-one-sample-per-class invariant.

        Generators and CSV loading call this; oracle-labelled surrogate sets
        may legitimately miss a class the target never predicts.
        """
        present = np.unique(self.labels)
        missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
        if missing:
            raise DomainError(f"classes without samples: {missing}")
        return self


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint index sets implementing the half/half protocol: training data
    split (shuffled) into target-training and surrogate-query halves, test
    data split positionally into target-evaluation and fidelity halves.
    """

    target_train: np.ndarray
    surrogate_query: np.ndarray
    target_test: np.ndarray
    fidelity_test: np.ndarray


def _class_counts(n, k):
    # Balanced within +-1; the first n % k classes take the extra sample.
    base = n // k
    return [base + (1 if c < n % k else 0) for c in range(k)]


def gen_blobs(k, d, n, spread, seed, name="blobs"):
    """k Gaussian clusters with means on the unit circle (or a line for d=1)."""
    if k < 2:
        raise DomainError("gen_blobs: k must be >= 2")
    if n < 10 * k:
        raise DomainError("gen_blobs: need at least 10 samples per class")
    if d < 1:
        raise DomainError("gen_blobs: d must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.zeros((k, d))
    if d == 1:
        means[:, 0] = np.linspace(-1.0, 1.0, k)
    else:
        angles = 2.0 * np.pi * np.arange(k) / k
        means[:, 0] = np.cos(angles)
        means[:, 1] = np.sin(angles)
    feats = []
    labels = []
    for c, count in enumerate(_class_counts(n, k)):
        feats.append(means[c] + spread * rng.standard_normal((count, d)))
        labels.append(np.full(count, c, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], k, name).require_all_classes()


def gen_spirals(k, n, noise, seed, name="spirals"):
    """k interleaved Archimedean spiral arms in 2-D with Gaussian noise.

    Arm c: r = R0 + (R1-R0)*t, theta = 2*pi*(TURNS*t + c/k), t ~ U[0,1).
    With noise=0 every point satisfies the arm equation exactly.
    """
    if k not in (2, 3):
        raise DomainError("gen_spirals: k must be 2 or 3")
    if n < 50 * k:
        raise DomainError("gen_spirals: need at least 50 samples per class")
    rng = np.random.default_rng(seed)
    feats = []
    labels = []
    for c, count in enumerate(_class_counts(n, k)):
        t = rng.random(count)
        r = SPIRAL_R0 + (SPIRAL_R1 - SPIRAL_R0) * t
        theta = 2.0 * np.pi * (SPIRAL_TURNS * t + c / k)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts += noise * rng.standard_normal((count, 2))
        feats.append(pts)
        labels.append(np.full(count, c, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], k, name).require_all_classes()


def spiral_arm_residual(point, label, k):
    """Angular distance of a 2-D point from its spiral arm (0 for noise=0)."""
    r = float(np.hypot(point[0], point[1]))
    t = (r - SPIRAL_R0) / (SPIRAL_R1 - SPIRAL_R0)
    expected = 2.0 * np.pi * (SPIRAL_TURNS * t + label / k)
    actual = np.arctan2(point[1], point[0])
    diff = np.remainder(actual - expected + np.pi, 2.0 * np.pi) - np.pi
    return abs(float(diff))


def split_halves(train_ds, test_ds, seed):
    """Shuffle-then-halve the training set; halve the test set positionally.

    For odd sizes the larger half goes to the first member (target_train,
    target_test respectively).
    """
    if len(train_ds) == 0 or len(test_ds) == 0:
        raise DomainError("split_halves: both datasets must be non-empty")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train_ds))
    cut = (len(train_ds) + 1) // 2
    test_cut = (len(test_ds) + 1) // 2
    return SplitPlan(
        target_train=np.sort(perm[:cut]),
        surrogate_query=np.sort(perm[cut:]),
        target_test=np.arange(0, test_cut),
        fidelity_test=np.arange(test_cut, len(test_ds)),
    )


def take(dataset, indices, name=None):
    """Sub-dataset at the given row indices (classes may drop out)."""
    return Dataset(dataset.features[indices], dataset.labels[indices],
                   dataset.num_classes, name or dataset.name)


# ---------------------------------------------------------------------------
# CSV round-trip: header f0,...,f{d-1},label; shortest round-trip decimal
# floats so save -> load reproduces the array bit-for-bit.
# ---------------------------------------------------------------------------

def save_csv(dataset, path):
    d = dataset.dims
    header = ",".join([f"f{i}" for i in range(d)] + ["label"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row, label in zip(dataset.features, dataset.labels):
            cells = [repr(float(v)) for v in row]
            cells.append(str(int(label)))
            fh.write(",".join(cells) + "\n")


def load_csv(path, num_classes=None, name=None, strict=True):
    """Parse a dataset CSV; errors name the offending 1-based line.

    num_classes is inferred as max(label)+1 when not given. With strict=True
    (the default) every class in [0, k) must occur at least once.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty file", line=1)
    header = lines[0].split(",")
    if header[-1] != "label" or len(header) < 2:
        raise DataFormatError("header must be f0,...,f{d-1},label", line=1)
    d = len(header) - 1
    if header[:-1] != [f"f{i}" for i in range(d)]:
        raise DataFormatError("header must be f0,...,f{d-1},label", line=1)
    rows = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != d + 1:
            raise DataFormatError(f"expected {d + 1} cells, found {len(cells)}",
                                  line=lineno)
        try:
            rows.append([float(c) for c in cells[:-1]])
        except ValueError as exc:
            raise DataFormatError(f"non-numeric feature cell: {exc}",
                                  line=lineno) from exc
        try:
            label = int(cells[-1])
        except ValueError as exc:
            raise DataFormatError(f"non-integer label {cells[-1]!r}",
                                  line=lineno) from exc
        if label < 0:
            raise DataFormatError(f"negative label {label}", line=lineno)
        if num_classes is not None and label >= num_classes:
            raise DataFormatError(
                f"label {label} out of range [0, {num_classes})", line=lineno)
        labels.append(label)
    if not rows:
        raise DataFormatError("no data rows", line=len(lines))
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        bad = int(np.where(~np.isfinite(features).all(axis=1))[0][0])
        raise DataFormatError("non-finite feature value", line=bad + 2)
    k = num_classes if num_classes is not None else max(labels) + 1
    ds = Dataset(features, np.asarray(labels, dtype=np.int64), max(k, 2),
                 name or "csv")
    return ds.require_all_classes() if strict else ds
