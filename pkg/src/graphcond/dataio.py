"""Tabular datasets: CSV loading, z-score normalisation and stratified CV splits."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STD_FLOOR = 1e-8


class DatasetError(ValueError):
    """Base class for dataset loading problems."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class ParseError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class LabelColumnError(DatasetError, KeyError):
    pass


@dataclass
class TabularDataset:
    matrix: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = None
    class_count: int = 0
    class_names: list[str] | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if not self.class_count:
            self.class_count = int(self.labels.max()) + 1 if self.labels.size else 0
        n, d = self.matrix.shape
        if n < 2 or d < 1:
            raise EmptyDatasetError(f"need N >= 2 and D >= 1, got N={n}, D={d}")
        if self.labels.shape != (n,):
            raise ValueError("labels length must match the number of rows")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("matrix contains NaN or Inf")
        counts = np.bincount(self.labels, minlength=self.class_count)
        if self.labels.min() < 0 or len(counts) != self.class_count or np.any(counts == 0):
            raise ValueError("every class in [0, class_count) must appear at least once")

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def subset(self, idx) -> "TabularDataset":
        """Rows ``idx`` as a new dataset; keeps the class metadata of the parent."""
        out = copy.copy(self)
        out.matrix = self.matrix[idx]
        out.labels = self.labels[idx]
        return out


def load_csv(path, label_column: str | int = -1, header: bool | None = None) -> TabularDataset:
    """Read a comma-separated table with one label column.

    ``label_column`` is a header name or a (possibly negative) column index.
    ``header=None`` auto-detects a header row (first row not fully numeric).
    Labels are mapped to 0..C-1 in order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyDatasetError(f"{path} is empty")

    if header is None:
        header = isinstance(label_column, str) or not _all_numeric(
            [c for i, c in enumerate(rows[0]) if i != _resolve_index(label_column, len(rows[0]))])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    if not body:
        raise EmptyDatasetError(f"{path} has no data rows")

    width = len(body[0])
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise LabelColumnError(f"label column {label_column!r} not found in header")
        lab = names.index(label_column)
    else:
        lab = _resolve_index(label_column, width)
        if not 0 <= lab < width:
            raise LabelColumnError(f"label column index {label_column} out of range for {width} columns")

    feat_cols = [i for i in range(width) if i != lab]
    if not feat_cols:
        raise EmptyDatasetError("no feature columns")
    matrix = np.empty((len(body), len(feat_cols)), dtype=np.float64)
    raw_labels = []
    first_line = 2 if header else 1
    for r, row in enumerate(body):
        if len(row) != width:
            raise ParseError(f"row {r + first_line}: expected {width} cells, got {len(row)}")
        for out_j, j in enumerate(feat_cols):
            try:
                matrix[r, out_j] = float(row[j])
            except ValueError:
                col = names[j] if names else str(j)
                raise ParseError(f"row {r + first_line}, column {col!r}: "
                                 f"non-numeric value {row[j]!r}") from None
        raw_labels.append(row[lab].strip())
    if not np.all(np.isfinite(matrix)):
        raise ParseError("feature cells must be finite")

    mapping: dict[str, int] = {}
    labels = np.array([mapping.setdefault(v, len(mapping)) for v in raw_labels], dtype=np.int64)
    feature_names = [names[j] for j in feat_cols] if names else None
    return TabularDataset(matrix, labels, feature_names, len(mapping), list(mapping))


def save_csv(ds: TabularDataset, path, label_name: str = "label") -> None:
    """Write ``ds`` with a header; floats use ``repr`` so a reload is bit-exact."""
    names = ds.feature_names or [f"f{j}" for j in range(ds.n_features)]
    class_names = ds.class_names or [str(c) for c in range(ds.class_count)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_name])
        for row, y in zip(ds.matrix, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [class_names[y]])


def _resolve_index(col, width: int) -> int:
    if isinstance(col, str):
        return -1
    return col + width if col < 0 else col


def _all_numeric(cells: Sequence[str]) -> bool:
    try:
        for c in cells:
            float(c)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------- normalisation

@dataclass
class Normalizer:
    means: np.ndarray
    stds: np.ndarray


def zscore_fit(train) -> Normalizer:
    """Per-column mean and population std, std floored at 1e-8."""
    x = train.matrix if isinstance(train, TabularDataset) else np.asarray(train, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on an empty matrix")
    return Normalizer(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def zscore_apply(norm: Normalizer, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != norm.means.shape[0]:
        raise ValueError(f"expected {norm.means.shape[0]} columns, got shape {x.shape}")
    return (x - norm.means) / norm.stds


# ---------------------------------------------------------------- splits

@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    repeat: int = 0
    fold: int = 0


@dataclass
class SplitPlan:
    folds: int
    repeats: int
    seed: int
    splits: list[Split] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": 1, "folds": self.folds, "repeats": self.repeats, "seed": self.seed,
            "splits": [{"repeat": s.repeat, "fold": s.fold, "train": s.train.tolist(),
                        "val": s.val.tolist(), "test": s.test.tolist()} for s in self.splits],
        })

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        splits = [Split(np.array(s["train"], dtype=np.int64), np.array(s["val"], dtype=np.int64),
                        np.array(s["test"], dtype=np.int64), s["repeat"], s["fold"])
                  for s in d["splits"]]
        return cls(d["folds"], d["repeats"], d["seed"], splits)


def _stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    # Deal each class's shuffled members round-robin, starting where the previous
    # class stopped, so fold sizes differ by at most one overall and per class.
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        for i, idx in enumerate(members):
            folds[(offset + i) % k].append(int(idx))
        offset = (offset + len(members)) % k
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def _stratified_holdout(idx: np.ndarray, labels: np.ndarray, fraction: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    sub = labels[idx]
    n_val = max(1, int(round(fraction * len(idx))))
    classes, counts = np.unique(sub, return_counts=True)
    # Largest-remainder allocation of the validation budget across classes.
    exact = counts * n_val / len(idx)
    alloc = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - alloc), kind="stable")[: n_val - alloc.sum()]:
        alloc[i] += 1
    alloc = np.minimum(alloc, counts - 1)
    val = []
    for c, a in zip(classes, alloc):
        members = idx[sub == c].copy()
        rng.shuffle(members)
        val.extend(members[:a].tolist())
    val = np.sort(np.array(val, dtype=np.int64))
    core = np.setdiff1d(idx, val)
    return core, val


def stratified_splits(labels, k: int = 5, r: int = 5, val_fraction: float = 0.1,
                      seed: int = 0) -> SplitPlan:
    """``k``-fold stratified CV repeated ``r`` times with a stratified validation holdout.

    The validation holdout of split (repeat, fold) is drawn from a stream
    seeded with ``(seed, repeat, fold)``.
    """
    labels = np.asarray(labels)
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < k):
        bad = classes[counts < k].tolist()
        raise ValueError(f"classes {bad} have fewer than k={k} members")
    plan = SplitPlan(k, r, seed)
    everything = np.arange(len(labels))
    for rep in range(r):
        folds = _stratified_folds(labels, k, np.random.default_rng([seed, rep]))
        for f, test in enumerate(folds):
            rest = np.setdiff1d(everything, test)
            core, val = _stratified_holdout(rest, labels, val_fraction,
                                            np.random.default_rng([seed, rep, f + 1]))
            plan.splits.append(Split(core, val, test, rep, f))
    return plan


# ---------------------------------------------------------------- synthetic data

def make_planted_dataset(n_samples: int = 100, n_features: int = 1000, n_informative: int = 10,
                         signal: float = 2.5, latent_noise: float = 1.0, seed: int = 0,
                         ) -> TabularDataset:
    """Binary problem with a block of correlated informative features.

    Each sample carries a latent score ``z = signal * (2y - 1) + N(0, latent_noise)``;
    informative feature ``j`` is ``z * loading_j + N(0, 1)``, so those columns are
    mutually correlated and each weakly predictive.  The remaining columns are
    independent standard normal noise.  Informative columns are scattered at
    random positions.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(n_samples) % 2
    rng.shuffle(y)
    z = signal * (2 * y - 1) + latent_noise * rng.standard_normal(n_samples)
    x = rng.standard_normal((n_samples, n_features))
    informative = np.sort(rng.choice(n_features, n_informative, replace=False))
    loadings = rng.uniform(0.7, 1.3, n_informative)
    x[:, informative] += z[:, None] * loadings
    names = [f"f{j}" for j in range(n_features)]
    ds = TabularDataset(x, y, names, 2, ["neg", "pos"])
    ds.informative = informative
    return ds


def toy_dataset_path() -> Path:
    """Path of the bundled 40 x 10 binary toy dataset (label column ``label``)."""
    return Path(__file__).with_name("data") / "toy.csv"
