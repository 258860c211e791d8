"""Synthetic non-IID data, a softmax-regression learner and local FedAvg training."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError, ShapeError, UnderfilledPartitionError
from .graph import Topology, neighbors
from .proxy import softmax
from .seeds import derive_seeds, rng_for

FLAVORS = ("label2", "labeldir", "quantity_skew", "feat_noise", "mixed")
MAX_PARTITION_RETRIES = 10


def _block(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    rows, cols = arr.shape
    return struct.pack("<qq", rows, cols) + arr.tobytes()


def _unblock(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    rows, cols = struct.unpack_from("<qq", blob, offset)
    body = np.frombuffer(blob, dtype="<f8", offset=offset + 16, count=rows * cols)
    return body.reshape(rows, cols).astype(np.float64), offset + 16 + 8 * rows * cols


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int
    index: np.ndarray | None = None  # row ids in the dataset this one was cut from

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ShapeError(f"features {x.shape} and labels {y.shape} disagree")
        if not np.isfinite(x).all():
            raise InvalidInputError("features must be finite")
        if y.size and (y.min() < 0 or y.max() >= self.classes):
            raise InvalidInputError(f"labels must lie in [0, {self.classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        base = self.index if self.index is not None else np.arange(len(self))
        return Dataset(self.features[idx], self.labels[idx], self.classes, base[idx])

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.classes)

    def to_bytes(self) -> bytes:
        return _block(np.column_stack([self.features, self.labels.astype(np.float64)]))

    @classmethod
    def from_bytes(cls, blob: bytes, classes: int) -> "Dataset":
        arr, _ = _unblock(blob)
        return cls(arr[:, :-1], arr[:, -1].astype(np.int64), classes)


def synth_dataset(classes: int, dims: int, per_class: int, center_shift: float = 0.0, seed: int = 0,
                  separation: float = 4.0, sample_seed: int | None = None) -> Dataset:
    """Unit-variance Gaussian blobs, one per class.

    Class centres lie on a sphere of radius ``separation`` and depend only on
    ``seed``; the draws around them use ``sample_seed`` (default ``seed``), so
    train, test and global sets can share centres. ``center_shift`` moves
    every sample along a fixed seed-derived unit direction.
    """
    if classes < 2 or dims < 2 or per_class < 1:
        raise ValueError("need classes >= 2, dims >= 2, per_class >= 1")
    crng = rng_for(seed, 0)
    centers = crng.standard_normal((classes, dims))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    direction = crng.standard_normal(dims)
    direction /= np.linalg.norm(direction)
    srng = rng_for(seed if sample_seed is None else sample_seed, 1)
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + srng.standard_normal((labels.size, dims))
    if center_shift:
        x = x + center_shift * direction
    return Dataset(x, labels, classes)


@dataclass(frozen=True)
class PartitionSpec:
    flavor: str
    beta: float = 0.5
    eta: float = 0.2
    classes_per_node: int = 2

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}; expected one of {FLAVORS}")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.classes_per_node < 1:
            raise ValueError("classes_per_node must be >= 1")


def dirichlet_split(rng: np.random.Generator, beta: float, n: int, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet(beta) proportions over ``n`` parts and integer counts that
    sum to ``total`` exactly (floors of the cumulative proportions)."""
    props = rng.dirichlet(np.full(n, beta))
    cuts = (np.cumsum(props) * total).astype(np.int64)
    cuts[-1] = total
    counts = np.diff(np.concatenate(([0], cuts)))
    return props, counts


def _label2(data: Dataset, n: int, cpn: int, rng) -> list[np.ndarray] | None:
    c = data.classes
    if cpn > c:
        raise ValueError(f"classes_per_node={cpn} exceeds the {c} classes")
    # extra classes go to still-unowned classes first, so every class has an
    # owner (and no sample is dropped) whenever n * cpn >= c
    unowned = set(range(c)) - {i % c for i in range(n)}
    owned = []
    for i in range(n):
        first = i % c
        want = [k for k in sorted(unowned) if k != first]
        take = min(len(want), cpn - 1)
        rest = rng.choice(want, size=take, replace=False).tolist() if take else []
        others = [k for k in range(c) if k != first and k not in rest]
        if cpn - 1 - take:
            rest += rng.choice(others, size=cpn - 1 - take, replace=False).tolist()
        unowned -= set(rest)
        owned.append({first, *rest})
    parts: list[list[np.ndarray]] = [[] for _ in range(n)]
    for k in range(c):
        owners = [i for i in range(n) if k in owned[i]]
        if not owners:
            continue
        idx = rng.permutation(np.flatnonzero(data.labels == k))
        if idx.size < len(owners):
            return None
        for i, chunk in zip(owners, np.array_split(idx, len(owners))):
            parts[i].append(chunk)
    return [np.concatenate(p) if p else np.empty(0, np.int64) for p in parts]


def _labeldir(data: Dataset, n: int, beta: float, rng) -> list[np.ndarray]:
    parts: list[list[np.ndarray]] = [[] for _ in range(n)]
    for k in range(data.classes):
        idx = rng.permutation(np.flatnonzero(data.labels == k))
        _, counts = dirichlet_split(rng, beta, n, idx.size)
        for i, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            parts[i].append(chunk)
    return [np.concatenate(p) for p in parts]


def _quantity(data: Dataset, n: int, beta: float, rng) -> list[np.ndarray]:
    idx = rng.permutation(len(data))
    _, counts = dirichlet_split(rng, beta, n, idx.size)
    return np.split(idx, np.cumsum(counts)[:-1])


def _add_noise(parts: list[Dataset], eta: float, rng) -> list[Dataset]:
    n = len(parts)
    out = []
    for i, d in enumerate(parts):
        std = np.sqrt(eta * i / n)
        noisy = d.features + rng.normal(0.0, std, size=d.features.shape) if std > 0 else d.features
        out.append(Dataset(noisy, d.labels, d.classes, d.index))
    return out


def partition_data(data: Dataset, spec: PartitionSpec, n: int, seed: int) -> list[Dataset]:
    """Split ``data`` over ``n`` nodes according to the non-IID ``spec``.

    A split that leaves some node empty is redrawn with a fresh sub-seed, at
    most ``MAX_PARTITION_RETRIES`` times.
    """
    if n < 1:
        raise ValueError("need at least one node")
    for attempt in range(MAX_PARTITION_RETRIES + 1):
        rng = rng_for(seed, attempt)
        if spec.flavor == "label2":
            idx = _label2(data, n, spec.classes_per_node, rng)
        elif spec.flavor in ("labeldir", "mixed"):
            idx = _labeldir(data, n, spec.beta, rng)
        elif spec.flavor == "quantity_skew":
            idx = _quantity(data, n, spec.beta, rng)
        else:
            idx = np.array_split(rng.permutation(len(data)), n)
        if idx is None or any(i.size == 0 for i in idx):
            continue
        parts = [data.subset(np.sort(i)) for i in idx]
        if spec.flavor in ("feat_noise", "mixed"):
            parts = _add_noise(parts, spec.eta, rng)
        return parts
    raise UnderfilledPartitionError(
        f"{spec.flavor} split left a node without samples after {MAX_PARTITION_RETRIES} retries")


@dataclass(frozen=True, eq=False)
class ModelParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"W {w.shape} and b {b.shape} disagree")
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, classes: int, dims: int) -> "ModelParams":
        return cls(np.zeros((classes, dims)), np.zeros(classes))

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def nbytes(self) -> int:
        c, d = self.shape
        return 16 + 8 * c * (d + 1)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b

    def to_bytes(self) -> bytes:
        return _block(np.column_stack([self.W, self.b]))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        arr, _ = _unblock(blob)
        return cls(arr[:, :-1].copy(), arr[:, -1].copy())

    def bitwise_equal(self, other: "ModelParams") -> bool:
        return self.to_bytes() == other.to_bytes()


@dataclass(frozen=True)
class TrainConfig:
    prologue_epochs: int = 5
    local_epochs: int = 1
    learning_rate: float = 0.1
    rounds: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("prologue_epochs", "local_epochs", "rounds", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def loss_and_grad(params: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of softmax regression and its gradient."""
    p = softmax(params.logits(x))
    rows = np.arange(len(y))
    loss = float(-np.mean(np.log(np.maximum(p[rows, y], 1e-300))))
    p[rows, y] -= 1.0
    p /= len(y)
    return loss, p.T @ x, p.sum(axis=0)


def sgd_train(params: ModelParams, data: Dataset, epochs: int, lr: float, batch: int, seed: int) -> ModelParams:
    """Mini-batch SGD on cross-entropy; the shuffle is drawn from ``seed``."""
    if len(data) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    rng = rng_for(seed)
    w, b = params.W.copy(), params.b.copy()
    x, y = data.features, data.labels
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch):
            idx = order[start:start + batch]
            _, gw, gb = loss_and_grad(ModelParams(w, b), x[idx], y[idx])
            w -= lr * gw
            b -= lr * gb
    return ModelParams(w, b)


def fedavg_aggregate(own: ModelParams, neighbor_params: Sequence[ModelParams]) -> ModelParams:
    """Elementwise mean of ``own`` and its neighbours.

    Computed as ``own + sum(nbr - own) / (m + 1)`` so that a consensus is a
    fixed point bit for bit.
    """
    for p in neighbor_params:
        if p.shape != own.shape:
            raise ShapeError(f"neighbour params {p.shape} differ from own {own.shape}")
    if not neighbor_params:
        return ModelParams(own.W.copy(), own.b.copy())
    m1 = len(neighbor_params) + 1
    dw = sum(p.W - own.W for p in neighbor_params)
    db = sum(p.b - own.b for p in neighbor_params)
    return ModelParams(own.W + dw / m1, own.b + db / m1)


def evaluate(params: ModelParams, test: Dataset) -> float:
    """Top-1 accuracy; ``argmax`` resolves ties to the lowest class index."""
    if len(test) == 0:
        raise InvalidInputError("empty test set")
    if params.W.shape[1] != test.dims:
        raise ShapeError(f"model expects D={params.W.shape[1]}, test set has D={test.dims}")
    pred = params.logits(test.features).argmax(axis=1)
    return float(np.mean(pred == test.labels))


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    mean_accuracy: float
    min_accuracy: float
    max_accuracy: float
    bytes_downloaded: int


METRIC_FIELDS = ("round", "mean_accuracy", "min_accuracy", "max_accuracy", "bytes_downloaded")


def metrics_to_csv(rows: Sequence[RoundMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([r.round, repr(r.mean_accuracy), repr(r.min_accuracy), repr(r.max_accuracy), r.bytes_downloaded])
    return buf.getvalue()


def prologue_train(locals_: Sequence[Dataset], cfg: TrainConfig) -> list[ModelParams]:
    """One-off local training from zeros; node ``v`` shuffles with
    ``derive_seeds(cfg.seed, f"prologue/{v}")``."""
    out = []
    for v, data in enumerate(locals_):
        init = ModelParams.zeros(data.classes, data.dims)
        out.append(sgd_train(init, data, cfg.prologue_epochs, cfg.learning_rate, cfg.batch_size,
                             derive_seeds(cfg.seed, f"prologue/{v}")))
    return out


def phase3_seed(cfg: TrainConfig, rnd: int) -> int:
    """Shuffle seed shared by every participant in round ``rnd``."""
    return derive_seeds(cfg.seed, f"phase3/{rnd}")


def aggregate_round(t: Topology, params: Mapping[int, ModelParams]) -> dict[int, ModelParams]:
    """Synchronous local FedAvg: every node reads the same frozen snapshot."""
    out = {}
    for v in sorted(params):
        nbrs = [params[u] for u in sorted(neighbors(t, v)) if u in params]
        out[v] = fedavg_aggregate(params[v], nbrs)
    return out


def train_phase3(t: Topology, participants, locals_: Mapping[int, Dataset] | Sequence[Dataset], test: Dataset,
                 cfg: TrainConfig, init: Mapping[int, ModelParams] | Sequence[ModelParams] | None = None
                 ) -> list[RoundMetrics]:
    """Decentralised training over ``t``.

    Each round every participant runs ``cfg.local_epochs`` of SGD, then all of
    them average with their participating 1-hop neighbours at once. Accuracy
    on ``test`` is recorded after aggregation. ``participants`` may be a
    ``CliquePlan`` or any iterable of node ids; nodes outside it never train.
    """
    members = sorted(getattr(participants, "participants", participants))
    for v in members:
        try:
            data = locals_[v]
        except (KeyError, IndexError):
            data = None
        if data is None or len(data) == 0:
            raise ConfigurationError(f"participant {v} has no local data")
    params = {v: (init[v] if init is not None else ModelParams.zeros(test.classes, test.dims)) for v in members}
    member_set = set(members)
    degree = {v: sum(1 for u in neighbors(t, v) if u in member_set) for v in members}
    step_bytes = sum(degree.values()) * next(iter(params.values())).nbytes() if members else 0
    history = []
    for rnd in range(1, cfg.rounds + 1):
        seed = phase3_seed(cfg, rnd)
        trained = {v: sgd_train(params[v], locals_[v], cfg.local_epochs, cfg.learning_rate, cfg.batch_size, seed)
                   for v in members}
        params = aggregate_round(t, trained)
        accs = [evaluate(params[v], test) for v in members]
        history.append(RoundMetrics(rnd, float(np.mean(accs)), float(min(accs)), float(max(accs)), step_bytes))
    return history
