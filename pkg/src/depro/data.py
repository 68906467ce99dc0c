"""Synthetic token-slot classification tasks with a controllable spurious slot.

Vocabulary layout (ids): ``[0, C)`` bias tokens, one per class; then
``tokens_per_class`` signal tokens per class; the remainder is noise.

Each sample draws a label ``y``.  The signal slots all carry signal tokens of
class ``y`` (or of a different class with probability ``noise_flip``).  The
bias slot carries the bias token of ``y`` with probability ``align`` and a
different class's token otherwise.  Noise slots are uniform noise tokens.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SyntheticTask:
    n_classes: int = 2
    kslots: int = 8
    signal_slots: tuple[int, ...] = (0, 1, 2)
    bias_slot: int = 3
    vocab: int = 64
    tokens_per_class: int = 10
    align_train: float = 0.9
    align_ood: float = 0.5
    noise_flip: float = 0.1
    n_train: int = 2000
    n_dev: int = 200
    n_ood: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "signal_slots", tuple(int(s) for s in self.signal_slots))
        for name in ("align_train", "align_ood", "noise_flip"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        slots = set(self.signal_slots) | {self.bias_slot}
        if len(slots) != len(self.signal_slots) + 1 or not all(0 <= s < self.kslots for s in slots):
            raise ValueError("signal and bias slots must be distinct slot indices")
        if self.n_noise_tokens < 1:
            raise ValueError(
                f"vocab {self.vocab} too small for {self.n_classes} bias + "
                f"{self.n_classes * self.tokens_per_class} signal tokens plus noise")

    @property
    def signal_start(self) -> int:
        return self.n_classes

    @property
    def noise_start(self) -> int:
        return self.n_classes * (1 + self.tokens_per_class)

    @property
    def n_noise_tokens(self) -> int:
        return self.vocab - self.noise_start

    @property
    def noise_slots(self) -> tuple[int, ...]:
        used = set(self.signal_slots) | {self.bias_slot}
        return tuple(s for s in range(self.kslots) if s not in used)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["signal_slots"] = list(self.signal_slots)
        return d


@dataclass
class Dataset:
    token_ids: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    n_classes: int = 2
    name: str = ""

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if not (len(self.token_ids) == len(self.labels) == len(self.sample_ids)):
            raise ValueError("token_ids, labels and sample_ids disagree in length")

    def __len__(self):
        return len(self.labels)

    @property
    def kslots(self) -> int:
        return self.token_ids.shape[1]

    def batch(self, rows) -> "Batch":
        rows = np.asarray(rows)
        return Batch(self.token_ids[rows], self.labels[rows], self.sample_ids[rows])

    def batches(self, batch_size: int, rng=None):
        """Yield batches; shuffled when ``rng`` is given.  Trailing size-1 batches are merged."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        cuts = list(range(0, len(order), batch_size))
        if len(cuts) > 1 and len(order) - cuts[-1] < 2:
            cuts.pop()
        for i, start in enumerate(cuts):
            stop = cuts[i + 1] if i + 1 < len(cuts) else len(order)
            yield self.batch(order[start:stop])

    def equals(self, other: "Dataset") -> bool:
        return (np.array_equal(self.token_ids, other.token_ids)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.sample_ids, other.sample_ids))


@dataclass
class Batch:
    token_ids: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.labels))
        if len(np.unique(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("duplicate sample ids in batch")

    def __len__(self):
        return len(self.labels)


def _other_class(rng, y, n_classes):
    # uniform over the classes different from y
    return (y + rng.integers(1, n_classes, size=y.shape)) % n_classes


def _draw(task: SyntheticTask, n: int, align: float, rng) -> tuple[np.ndarray, np.ndarray]:
    c = task.n_classes
    y = rng.integers(0, c, size=n)
    flip = rng.random(n) < task.noise_flip
    sig_cls = np.where(flip, _other_class(rng, y, c), y)
    aligned = rng.random(n) < align
    bias_cls = np.where(aligned, y, _other_class(rng, y, c))

    tokens = task.noise_start + rng.integers(0, task.n_noise_tokens, size=(n, task.kslots))
    for s in task.signal_slots:
        tokens[:, s] = task.signal_start + sig_cls * task.tokens_per_class + rng.integers(
            0, task.tokens_per_class, size=n)
    tokens[:, task.bias_slot] = bias_cls
    return tokens, y


def generate(task: SyntheticTask) -> dict[str, Dataset]:
    """Deterministic train/dev/ood splits with globally unique sample ids.

    Train and dev come from one pool drawn with ``align_train``; the last
    ``n_dev`` rows of the pool form the dev split.
    """
    rng = np.random.default_rng(task.seed)
    pool_x, pool_y = _draw(task, task.n_train + task.n_dev, task.align_train, rng)
    ood_x, ood_y = _draw(task, task.n_ood, task.align_ood, rng)
    n_pool = task.n_train + task.n_dev
    ids = np.arange(n_pool + task.n_ood)
    c = task.n_classes
    return {
        "train": Dataset(pool_x[: task.n_train], pool_y[: task.n_train], ids[: task.n_train], c, "train"),
        "dev": Dataset(pool_x[task.n_train:], pool_y[task.n_train:], ids[task.n_train:n_pool], c, "dev"),
        "ood": Dataset(ood_x, ood_y, ids[n_pool:], c, "ood"),
    }


def reindex(ds: Dataset) -> Dataset:
    """Copy of ``ds`` with sample ids ``0..n-1`` (rows of a weight table)."""
    return Dataset(ds.token_ids, ds.labels, np.arange(len(ds)), ds.n_classes, ds.name)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"slot{j}" for j in range(ds.kslots)] + ["label"])
        for row, y in zip(ds.token_ids, ds.labels):
            w.writerow([*map(int, row), int(y)])


def load_csv(path, n_classes: int = 2, vocab: int | None = None, first_id: int = 0, name: str = "") -> Dataset:
    """Parse a ``slot0,...,slot{k-1},label`` file.

    Sample ids are assigned in row order starting at ``first_id``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2 or header[-1].strip() != "label":
        raise ValueError(f"{path}:1: header must be slot0,...,label")
    if not body:
        raise ValueError(f"{path}: no data rows")
    k = len(header) - 1
    tokens = np.empty((len(body), k), dtype=np.int64)
    labels = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != k + 1:
            raise ValueError(f"{path}:{line}: expected {k + 1} cells, got {len(row)}")
        try:
            vals = [int(c) for c in row]
        except ValueError:
            raise ValueError(f"{path}:{line}: non-integer cell in {row}") from None
        if not 0 <= vals[-1] < n_classes:
            raise ValueError(f"{path}:{line}: label {vals[-1]} outside [0, {n_classes})")
        if min(vals[:-1]) < 0 or (vocab is not None and max(vals[:-1]) >= vocab):
            raise ValueError(f"{path}:{line}: token id out of range")
        tokens[i], labels[i] = vals[:-1], vals[-1]
    return Dataset(tokens, labels, np.arange(first_id, first_id + len(body)), n_classes, name)
